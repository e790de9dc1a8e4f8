#pragma once

#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "divrec/common.hpp"

namespace divrec {

/// One rating line from a raw source, before binarization.
struct RawInteraction {
    std::string user_ext;
    std::string item_ext;
    double rating = 0.0;     // in [1, 5]
    int64_t timestamp = 0;
};

/// Raw corpus: interactions plus the item -> subtopic assignment and the
/// subtopic vocabulary in first-seen order.
struct RawData {
    std::vector<RawInteraction> interactions;
    std::unordered_map<std::string, std::vector<uint32_t>> item_subtopics;
    std::vector<std::string> subtopic_names;
};

struct TrainTriplet {
    uint32_t user;
    uint32_t pos;
    uint32_t neg;
};

struct SplitRatios {
    double train = 0.8;
    double test = 0.1;
    double valid = 0.1;
};

/// Implicit-feedback dataset with dense indices and disjoint per-user
/// train/valid/test positive sets. Immutable after construction; safe to
/// share across threads. All per-user and per-item sets are sorted ascending.
struct InteractionDataset {
    uint32_t n_users = 0;
    uint32_t n_items = 0;
    uint32_t n_subtopics = 0;

    std::vector<std::string> user_ids;  // dense index -> external id
    std::vector<std::string> item_ids;
    std::unordered_map<std::string, uint32_t> user_index;
    std::unordered_map<std::string, uint32_t> item_index;

    std::vector<std::vector<uint32_t>> train;  // per user, sorted
    std::vector<std::vector<uint32_t>> valid;
    std::vector<std::vector<uint32_t>> test;

    std::vector<std::vector<uint32_t>> item_subtopics;  // per item, sorted
    std::vector<std::string> subtopic_names;

    size_t n_interactions() const {
        size_t n = 0;
        for (uint32_t u = 0; u < n_users; ++u) {
            n += train[u].size() + valid[u].size() + test[u].size();
        }
        return n;
    }

    double density() const {
        if (n_users == 0 || n_items == 0) return 0.0;
        return static_cast<double>(n_interactions()) /
               (static_cast<double>(n_users) * static_cast<double>(n_items));
    }
};

namespace detail {

inline std::vector<std::string> split_on(const std::string& line, const std::string& sep) {
    std::vector<std::string> parts;
    size_t pos = 0;
    for (;;) {
        const size_t next = line.find(sep, pos);
        if (next == std::string::npos) {
            parts.push_back(line.substr(pos));
            return parts;
        }
        parts.push_back(line.substr(pos, next - pos));
        pos = next + sep.size();
    }
}

inline std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

inline double parse_rating(const std::string& s, const std::string& file, size_t line_no) {
    size_t used = 0;
    double r;
    try {
        r = std::stod(s, &used);
    } catch (const std::exception&) {
        throw ParseError(file, line_no, "bad rating '" + s + "'");
    }
    if (used != s.size()) throw ParseError(file, line_no, "bad rating '" + s + "'");
    if (r < 1.0 || r > 5.0) {
        throw ParseError(file, line_no, "rating " + s + " outside [1, 5]");
    }
    return r;
}

inline int64_t parse_timestamp(const std::string& s, const std::string& file, size_t line_no) {
    try {
        size_t used = 0;
        const int64_t t = std::stoll(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return t;
    } catch (const std::exception&) {
        throw ParseError(file, line_no, "bad timestamp '" + s + "'");
    }
}

}  // namespace detail

/// Reads the MovieLens `::`-delimited pair of files. Ratings lines are
/// `UserID::MovieID::Rating::Timestamp`; movie lines are
/// `MovieID::Title::Genre1|Genre2|...` (titles may contain single colons).
/// The genre vocabulary is assigned indices in first-seen order.
inline RawData load_movielens(const std::string& ratings_path, const std::string& movies_path) {
    RawData out;
    std::unordered_map<std::string, uint32_t> genre_index;

    {
        auto is = open_in(movies_path, false);
        std::string line;
        size_t line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            line = detail::strip_cr(line);
            if (line.empty()) continue;
            const size_t first = line.find("::");
            const size_t last = line.rfind("::");
            if (first == std::string::npos || last == first) {
                throw ParseError(movies_path, line_no, "expected MovieID::Title::Genres");
            }
            const std::string movie_id = line.substr(0, first);
            const std::string genres = line.substr(last + 2);
            std::vector<uint32_t> subs;
            for (const auto& g : detail::split_on(genres, "|")) {
                if (g.empty()) continue;
                auto [it, inserted] =
                    genre_index.emplace(g, static_cast<uint32_t>(out.subtopic_names.size()));
                if (inserted) out.subtopic_names.push_back(g);
                subs.push_back(it->second);
            }
            if (subs.empty()) {
                throw ParseError(movies_path, line_no, "movie '" + movie_id + "' has no genres");
            }
            std::sort(subs.begin(), subs.end());
            subs.erase(std::unique(subs.begin(), subs.end()), subs.end());
            out.item_subtopics[movie_id] = std::move(subs);
        }
    }

    {
        auto is = open_in(ratings_path, false);
        std::string line;
        size_t line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            line = detail::strip_cr(line);
            if (line.empty()) continue;
            const auto parts = detail::split_on(line, "::");
            if (parts.size() != 4) {
                throw ParseError(ratings_path, line_no,
                                 "expected UserID::MovieID::Rating::Timestamp");
            }
            if (out.item_subtopics.find(parts[1]) == out.item_subtopics.end()) {
                throw DataError("rating at " + ratings_path + ":" + std::to_string(line_no) +
                                " references item '" + parts[1] + "' absent from " + movies_path);
            }
            out.interactions.push_back({parts[0], parts[1],
                                        detail::parse_rating(parts[2], ratings_path, line_no),
                                        detail::parse_timestamp(parts[3], ratings_path, line_no)});
        }
    }
    return out;
}

/// Generic CSV interactions with header `user,item,rating,timestamp`.
inline std::vector<RawInteraction> load_csv_interactions(const std::string& path) {
    auto is = open_in(path, false);
    std::string line;
    size_t line_no = 0;
    if (!std::getline(is, line)) throw ParseError(path, 1, "missing header");
    ++line_no;
    if (detail::strip_cr(line) != "user,item,rating,timestamp") {
        throw ParseError(path, 1, "expected header 'user,item,rating,timestamp'");
    }
    std::vector<RawInteraction> out;
    while (std::getline(is, line)) {
        ++line_no;
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        const auto parts = detail::split_on(line, ",");
        if (parts.size() != 4) throw ParseError(path, line_no, "expected 4 fields");
        out.push_back({parts[0], parts[1], detail::parse_rating(parts[2], path, line_no),
                       detail::parse_timestamp(parts[3], path, line_no)});
    }
    return out;
}

/// Item category metadata as CSV `item,category` rows (no header). Keeps the
/// `top_n` most frequent categories as the subtopic vocabulary, ordered by
/// descending frequency (first-seen breaking ties).
inline void load_csv_categories(const std::string& path, size_t top_n, RawData& data) {
    auto is = open_in(path, false);
    std::string line;
    size_t line_no = 0;
    std::vector<std::pair<std::string, std::string>> pairs;
    std::unordered_map<std::string, size_t> freq;
    std::vector<std::string> seen_order;
    while (std::getline(is, line)) {
        ++line_no;
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        const size_t comma = line.find(',');
        if (comma == std::string::npos) throw ParseError(path, line_no, "expected item,category");
        std::string item = line.substr(0, comma);
        std::string cat = line.substr(comma + 1);
        if (freq.emplace(cat, 0).second) seen_order.push_back(cat);
        ++freq[cat];
        pairs.emplace_back(std::move(item), std::move(cat));
    }
    std::stable_sort(seen_order.begin(), seen_order.end(),
                     [&](const std::string& a, const std::string& b) { return freq[a] > freq[b]; });
    if (seen_order.size() > top_n) seen_order.resize(top_n);
    std::unordered_map<std::string, uint32_t> cat_index;
    for (uint32_t i = 0; i < seen_order.size(); ++i) cat_index[seen_order[i]] = i;
    data.subtopic_names = seen_order;
    for (auto& [item, cat] : pairs) {
        auto it = cat_index.find(cat);
        if (it == cat_index.end()) continue;
        auto& subs = data.item_subtopics[item];
        if (std::find(subs.begin(), subs.end(), it->second) == subs.end()) {
            subs.push_back(it->second);
        }
    }
    for (auto& [item, subs] : data.item_subtopics) std::sort(subs.begin(), subs.end());
}

/// Binarizes ratings (keep rating >= min_rating), drops users/items left
/// without positives, and splits each user's positives at the given ratios
/// (floor for test and valid, remainder to train; users with fewer than 3
/// positives keep everything in train). Dense indices follow first
/// appearance in the surviving interaction stream, so a fixed seed yields a
/// byte-identical dataset.
inline InteractionDataset binarize_and_split(const RawData& raw, SplitRatios ratios,
                                             uint64_t seed, double min_rating = 4.0) {
    if (std::abs(ratios.train + ratios.test + ratios.valid - 1.0) > 1e-9) {
        throw ConfigError("split ratios must sum to 1");
    }
    if (ratios.train <= 0.0 || ratios.test < 0.0 || ratios.valid < 0.0) {
        throw ConfigError("train ratio must be positive and all ratios non-negative");
    }

    InteractionDataset ds;
    std::vector<std::vector<uint32_t>> positives;  // per user, in first-seen order
    std::unordered_set<uint64_t> seen;             // (user, item) dedupe

    for (const auto& r : raw.interactions) {
        if (r.rating < min_rating) continue;
        auto [uit, unew] = ds.user_index.emplace(r.user_ext, ds.n_users);
        if (unew) {
            ds.user_ids.push_back(r.user_ext);
            positives.emplace_back();
            ++ds.n_users;
        }
        auto [iit, inew] = ds.item_index.emplace(r.item_ext, ds.n_items);
        if (inew) {
            ds.item_ids.push_back(r.item_ext);
            ++ds.n_items;
        }
        const uint64_t key = (static_cast<uint64_t>(uit->second) << 32) | iit->second;
        if (!seen.insert(key).second) continue;
        positives[uit->second].push_back(iit->second);
    }
    if (ds.n_users == 0) throw DataError("no interactions survive binarization");

    // Thresholding already leaves every indexed user and item with >= 1
    // positive, so the zero-positive drop reaches its fixed point here.

    ds.subtopic_names = raw.subtopic_names;
    ds.n_subtopics = static_cast<uint32_t>(raw.subtopic_names.size());
    ds.item_subtopics.assign(ds.n_items, {});
    for (uint32_t j = 0; j < ds.n_items; ++j) {
        auto it = raw.item_subtopics.find(ds.item_ids[j]);
        if (it != raw.item_subtopics.end()) ds.item_subtopics[j] = it->second;
    }

    ds.train.assign(ds.n_users, {});
    ds.valid.assign(ds.n_users, {});
    ds.test.assign(ds.n_users, {});
    Rng rng(seed);
    for (uint32_t u = 0; u < ds.n_users; ++u) {
        auto items = positives[u];
        rng.shuffle(items);
        const size_t n = items.size();
        size_t n_test = 0, n_valid = 0;
        if (n >= 3) {
            n_test = static_cast<size_t>(static_cast<double>(n) * ratios.test);
            n_valid = static_cast<size_t>(static_cast<double>(n) * ratios.valid);
        }
        ds.test[u].assign(items.begin(), items.begin() + n_test);
        ds.valid[u].assign(items.begin() + n_test, items.begin() + n_test + n_valid);
        ds.train[u].assign(items.begin() + n_test + n_valid, items.end());
        std::sort(ds.test[u].begin(), ds.test[u].end());
        std::sort(ds.valid[u].begin(), ds.valid[u].end());
        std::sort(ds.train[u].begin(), ds.train[u].end());
    }
    return ds;
}

/// For every training positive (u, i), draws n_neg uniform negatives j from
/// the items u has not trained on (rejection sampling). Users who interacted
/// with the whole catalog contribute nothing.
inline std::vector<TrainTriplet> sample_negatives(const InteractionDataset& ds, int n_neg,
                                                  uint64_t seed) {
    if (n_neg < 1) throw ConfigError("n_neg must be >= 1");
    std::vector<TrainTriplet> out;
    Rng rng(seed);
    for (uint32_t u = 0; u < ds.n_users; ++u) {
        const auto& pos = ds.train[u];
        if (pos.size() >= ds.n_items) {
            std::cerr << "warning: user " << ds.user_ids[u]
                      << " interacted with every item; skipping negatives\n";
            continue;
        }
        for (uint32_t i : pos) {
            for (int k = 0; k < n_neg; ++k) {
                uint32_t j;
                do {
                    j = static_cast<uint32_t>(rng.below(ds.n_items));
                } while (std::binary_search(pos.begin(), pos.end(), j));
                out.push_back({u, i, j});
            }
        }
    }
    return out;
}

// --- CMBD dataset cache -----------------------------------------------------

inline constexpr char kDatasetMagic[4] = {'C', 'M', 'B', 'D'};
inline constexpr uint32_t kDatasetVersion = 1;

inline void save_dataset(const InteractionDataset& ds, const std::string& path) {
    auto os = open_out(path);
    write_magic(os, kDatasetMagic, kDatasetVersion);
    write_u32(os, ds.n_users);
    write_u32(os, ds.n_items);
    write_u32(os, ds.n_subtopics);
    for (const auto& s : ds.user_ids) write_str(os, s);
    for (const auto& s : ds.item_ids) write_str(os, s);
    for (const auto& s : ds.subtopic_names) write_str(os, s);
    auto write_table = [&](const std::vector<std::vector<uint32_t>>& table) {
        for (const auto& row : table) {
            write_u32(os, static_cast<uint32_t>(row.size()));
            for (uint32_t v : row) write_u32(os, v);
        }
    };
    write_table(ds.item_subtopics);
    write_table(ds.train);
    write_table(ds.valid);
    write_table(ds.test);
}

inline InteractionDataset load_dataset(const std::string& path) {
    auto is = open_in(path);
    expect_magic(is, kDatasetMagic, kDatasetVersion, "dataset cache");
    InteractionDataset ds;
    ds.n_users = read_u32(is);
    ds.n_items = read_u32(is);
    ds.n_subtopics = read_u32(is);
    ds.user_ids.resize(ds.n_users);
    for (auto& s : ds.user_ids) s = read_str(is);
    ds.item_ids.resize(ds.n_items);
    for (auto& s : ds.item_ids) s = read_str(is);
    ds.subtopic_names.resize(ds.n_subtopics);
    for (auto& s : ds.subtopic_names) s = read_str(is);
    auto read_table = [&](size_t rows) {
        std::vector<std::vector<uint32_t>> table(rows);
        for (auto& row : table) {
            row.resize(read_u32(is));
            for (auto& v : row) v = read_u32(is);
        }
        return table;
    };
    ds.item_subtopics = read_table(ds.n_items);
    ds.train = read_table(ds.n_users);
    ds.valid = read_table(ds.n_users);
    ds.test = read_table(ds.n_users);
    for (uint32_t u = 0; u < ds.n_users; ++u) ds.user_index[ds.user_ids[u]] = u;
    for (uint32_t j = 0; j < ds.n_items; ++j) ds.item_index[ds.item_ids[j]] = j;
    return ds;
}

}  // namespace divrec
