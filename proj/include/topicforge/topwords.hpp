#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "topicforge/corpus.hpp"
#include "topicforge/embedding.hpp"
#include "topicforge/error.hpp"

namespace topicforge {

/// Document ids per topic; index is the topic index.
using Partition = std::vector<std::vector<DocId>>;

enum class TopwordMethod { tfidf, cosine };

inline std::string to_string(TopwordMethod m) { return m == TopwordMethod::cosine ? "cosine" : "tfidf"; }

struct ScoredWord {
    std::string word;
    double score = 0.0;

    bool operator==(const ScoredWord&) const = default;
};

struct TopwordList {
    TopwordMethod method = TopwordMethod::tfidf;
    std::vector<ScoredWord> entries;  // descending score, ties by word

    std::size_t size() const noexcept { return entries.size(); }
    bool empty() const noexcept { return entries.empty(); }

    std::vector<std::string> words(std::size_t limit = static_cast<std::size_t>(-1)) const {
        std::vector<std::string> out;
        for (std::size_t i = 0; i < entries.size() && i < limit; ++i) out.push_back(entries[i].word);
        return out;
    }

    TopwordList prefix(std::size_t count) const {
        TopwordList out{method, {}};
        out.entries.assign(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(std::min(count, entries.size())));
        return out;
    }

    nlohmann::json to_json() const {
        nlohmann::json words = nlohmann::json::array();
        for (const auto& e : entries) words.push_back(nlohmann::json::array({e.word, e.score}));
        return {{"method", to_string(method)}, {"words", std::move(words)}};
    }

    static TopwordList from_json(const nlohmann::json& j) {
        TopwordList list;
        const auto method = j.at("method").get<std::string>();
        if (method != "tfidf" && method != "cosine") throw Error(ErrorCode::CorruptState, "unknown topword method " + method);
        list.method = method == "cosine" ? TopwordMethod::cosine : TopwordMethod::tfidf;
        for (const auto& pair : j.at("words")) list.entries.push_back({pair.at(0).get<std::string>(), pair.at(1).get<double>()});
        return list;
    }

    bool operator==(const TopwordList&) const = default;
};

namespace detail {

inline TopwordList top_scored(TopwordMethod method, std::vector<ScoredWord> scored, std::size_t count) {
    const auto better = [](const ScoredWord& a, const ScoredWord& b) {
        return a.score != b.score ? a.score > b.score : a.word < b.word;
    };
    const auto take = std::min(count, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), better);
    scored.resize(take);
    return {method, std::move(scored)};
}

}  // namespace detail

/// Class-based TF-IDF for every topic at once:
///   score(w, t) = tf(w, t) * log(1 + A / f(w))
/// where tf is w's share of topic t's tokens, f(w) is w's corpus frequency
/// and A is the mean token count per topic. Only words occurring in a topic
/// are scored for it.
inline std::vector<TopwordList> ctfidf_all(const Corpus& corpus, const Partition& partition, std::size_t count) {
    if (partition.empty()) throw Error(ErrorCode::EmptyTopic, "no topics");
    const auto& vocab = corpus.vocabulary();
    std::vector<std::unordered_map<TokenId, std::size_t>> counts(partition.size());
    std::vector<std::size_t> totals(partition.size(), 0);
    std::size_t all_tokens = 0;
    for (std::size_t t = 0; t < partition.size(); ++t) {
        if (partition[t].empty()) throw Error(ErrorCode::EmptyTopic, "topic " + std::to_string(t) + " has no documents");
        for (const DocId id : partition[t]) {
            for (const TokenId token : corpus.token_ids(id)) ++counts[t][token];
            totals[t] += corpus.token_counts_per_doc().at(id);
        }
        all_tokens += totals[t];
    }
    const double mean_tokens = static_cast<double>(all_tokens) / static_cast<double>(partition.size());

    std::vector<TopwordList> lists;
    lists.reserve(partition.size());
    for (std::size_t t = 0; t < partition.size(); ++t) {
        std::vector<ScoredWord> scored;
        scored.reserve(counts[t].size());
        for (const auto& [token, occurrences] : counts[t]) {
            const double tf = static_cast<double>(occurrences) / static_cast<double>(totals[t]);
            const double f = static_cast<double>(vocab.at(token).corpus_frequency);
            scored.push_back({vocab.word(token), tf * std::log(1.0 + mean_tokens / f)});
        }
        lists.push_back(detail::top_scored(TopwordMethod::tfidf, std::move(scored), count));
    }
    return lists;
}

inline TopwordList ctfidf_topwords(const Corpus& corpus, const Partition& partition, std::size_t topic_index,
                                   std::size_t count) {
    if (topic_index >= partition.size()) {
        throw Error(ErrorCode::InvalidTopicIndex, "topic " + std::to_string(topic_index) + " of " +
                                                      std::to_string(partition.size()));
    }
    return ctfidf_all(corpus, partition, count)[topic_index];
}

/// Vocabulary words with document frequency >= 2 inside `doc_ids`, sorted.
inline std::vector<std::string> cosine_candidates(const Corpus& corpus, const std::vector<DocId>& doc_ids) {
    std::unordered_map<TokenId, std::size_t> df;
    for (const DocId id : doc_ids) {
        auto ids = corpus.token_ids(id);
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
        for (const TokenId t : ids) ++df[t];
    }
    std::vector<std::string> words;
    for (const auto& [token, n] : df) {
        if (n >= 2) words.push_back(corpus.vocabulary().word(token));
    }
    std::sort(words.begin(), words.end());
    return words;
}

using WordEmbeddings = std::unordered_map<std::string, Vector>;

/// Ranks candidate words by cosine similarity of their embedding to the topic
/// centroid.
inline TopwordList cosine_topwords(const WordEmbeddings& vocab_embeddings, VectorView centroid,
                                   const std::vector<std::string>& candidate_words, std::size_t count) {
    if (candidate_words.empty()) throw Error(ErrorCode::NoCandidates, "no candidate words");
    if (norm(centroid) == 0.0) throw Error(ErrorCode::ZeroVector, "topic centroid is zero");
    std::vector<ScoredWord> scored;
    scored.reserve(candidate_words.size());
    for (const auto& word : candidate_words) {
        const auto it = vocab_embeddings.find(word);
        if (it == vocab_embeddings.end()) throw Error(ErrorCode::NotFound, "no embedding for word '" + word + "'");
        scored.push_back({word, cosine_similarity(it->second, centroid)});
    }
    return detail::top_scored(TopwordMethod::cosine, std::move(scored), count);
}

inline constexpr std::size_t kNamingTopwords = 500;

/// The leading `count` tf-idf words used to title and describe a topic.
inline TopwordList topwords_for_naming(const TopwordList& tfidf, std::size_t count = kNamingTopwords) {
    return tfidf.prefix(count);
}

}  // namespace topicforge
