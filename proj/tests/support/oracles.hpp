#pragma once

// Independent reference implementations used only by tests. Nothing here may
// call into the library code path it is checking.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Rows = std::vector<std::vector<double>>;

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

/// Full sort of every candidate by (similarity desc, id asc), then truncate.
inline std::vector<std::pair<std::size_t, double>> brute_force_knn(const Rows& rows,
                                                                   const std::vector<std::size_t>& candidates,
                                                                   const std::vector<double>& query, std::size_t k) {
    std::vector<std::pair<std::size_t, double>> all;
    for (const auto id : candidates) all.emplace_back(id, cosine(rows[id], query));
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (all.size() > k) all.resize(k);
    return all;
}

/// Class-based TF-IDF straight from the definition, over raw token lists.
/// Returns word -> score for topic `t`, only for words occurring in it.
inline std::map<std::string, double> brute_force_ctfidf(const std::vector<std::vector<std::string>>& doc_tokens,
                                                        const std::vector<std::vector<std::size_t>>& topics,
                                                        std::size_t t) {
    std::map<std::string, double> corpus_freq;
    for (const auto& doc : doc_tokens) {
        for (const auto& w : doc) corpus_freq[w] += 1.0;
    }
    double total = 0;
    for (const auto& topic : topics) {
        for (const auto d : topic) total += static_cast<double>(doc_tokens[d].size());
    }
    const double mean_tokens = total / static_cast<double>(topics.size());
    std::vector<std::string> concatenated;
    for (const auto d : topics[t]) concatenated.insert(concatenated.end(), doc_tokens[d].begin(), doc_tokens[d].end());
    std::map<std::string, double> scores;
    for (const auto& w : std::set<std::string>(concatenated.begin(), concatenated.end())) {
        const double occurrences = static_cast<double>(std::count(concatenated.begin(), concatenated.end(), w));
        scores[w] = occurrences / static_cast<double>(concatenated.size()) * std::log(1.0 + mean_tokens / corpus_freq[w]);
    }
    return scores;
}

/// Adjusted Rand index from the contingency table.
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    std::map<std::pair<int, int>, double> table;
    std::map<int, double> rows, cols;
    for (std::size_t i = 0; i < a.size(); ++i) {
        table[{a[i], b[i]}] += 1;
        rows[a[i]] += 1;
        cols[b[i]] += 1;
    }
    const auto choose2 = [](double x) { return x * (x - 1) / 2; };
    double index = 0, sum_rows = 0, sum_cols = 0;
    for (const auto& [_, v] : table) index += choose2(v);
    for (const auto& [_, v] : rows) sum_rows += choose2(v);
    for (const auto& [_, v] : cols) sum_cols += choose2(v);
    const double expected = sum_rows * sum_cols / choose2(static_cast<double>(a.size()));
    const double max_index = (sum_rows + sum_cols) / 2;
    if (max_index == expected) return 1.0;
    return (index - expected) / (max_index - expected);
}

struct Blobs {
    Eigen::MatrixXd points;
    std::vector<int> labels;
};

/// Isotropic Gaussian blobs of `per_blob` points around the given centers.
inline Blobs gaussian_blobs(const std::vector<std::vector<double>>& centers, std::size_t per_blob, double sigma,
                            std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, sigma);
    const auto dim = centers.front().size();
    Blobs out;
    out.points.resize(static_cast<Eigen::Index>(centers.size() * per_blob), static_cast<Eigen::Index>(dim));
    Eigen::Index row = 0;
    for (std::size_t c = 0; c < centers.size(); ++c) {
        for (std::size_t i = 0; i < per_blob; ++i, ++row) {
            for (std::size_t j = 0; j < dim; ++j) out.points(row, static_cast<Eigen::Index>(j)) = centers[c][j] + noise(rng);
            out.labels.push_back(static_cast<int>(c));
        }
    }
    return out;
}

/// Documents drawn from `groups` disjoint synthetic vocabularies.
struct SyntheticCorpus {
    std::vector<std::string> texts;
    std::vector<int> labels;
};

inline SyntheticCorpus token_disjoint_corpus(std::size_t groups, std::size_t docs_per_group, std::size_t words_per_group,
                                             std::size_t tokens_per_doc, std::uint64_t seed) {
    static const char* kSyllables[] = {"ka", "lo", "mi", "nu", "pe", "ra", "si", "to", "vu", "ze"};
    std::mt19937_64 rng(seed);
    std::vector<std::vector<std::string>> vocab(groups);
    for (std::size_t g = 0; g < groups; ++g) {
        for (std::size_t w = 0; w < words_per_group; ++w) {
            // Group letter prefix keeps vocabularies disjoint.
            std::string word(1, static_cast<char>('a' + g));
            std::size_t x = w;
            for (int s = 0; s < 3; ++s) {
                word += kSyllables[x % 10];
                x /= 10;
            }
            vocab[g].push_back(word);
        }
    }
    SyntheticCorpus out;
    std::uniform_int_distribution<std::size_t> pick(0, words_per_group - 1);
    for (std::size_t i = 0; i < groups * docs_per_group; ++i) {
        const std::size_t g = i % groups;
        std::string text;
        for (std::size_t t = 0; t < tokens_per_doc; ++t) {
            if (t) text += ' ';
            text += vocab[g][pick(rng)];
        }
        out.texts.push_back(std::move(text));
        out.labels.push_back(static_cast<int>(g));
    }
    return out;
}

}  // namespace oracle
