#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "topicforge/clustering.hpp"
#include "topicforge/corpus.hpp"
#include "topicforge/embedding.hpp"
#include "topicforge/error.hpp"
#include "topicforge/reduction.hpp"
#include "topicforge/topwords.hpp"

namespace topicforge {

struct Topic {
    std::size_t index = 0;
    std::string title;
    std::string description;
    std::vector<DocId> doc_ids;  // ascending
    Vector centroid_full;
    Vector centroid_reduced;
    TopwordList topwords_tfidf;
    std::optional<TopwordList> topwords_cosine;

    std::size_t size() const noexcept { return doc_ids.size(); }
};

enum class ModificationKind { merge, delete_topic, split_kmeans, split_hdbscan, split_keyword, create_keyword };

inline std::string to_string(ModificationKind kind) {
    switch (kind) {
    case ModificationKind::merge: return "merge";
    case ModificationKind::delete_topic: return "delete";
    case ModificationKind::split_kmeans: return "split_kmeans";
    case ModificationKind::split_hdbscan: return "split_hdbscan";
    case ModificationKind::split_keyword: return "split_keyword";
    case ModificationKind::create_keyword: return "create_keyword";
    }
    return "unknown";
}

inline ModificationKind modification_kind_from_string(const std::string& s) {
    for (const auto k : {ModificationKind::merge, ModificationKind::delete_topic, ModificationKind::split_kmeans,
                         ModificationKind::split_hdbscan, ModificationKind::split_keyword,
                         ModificationKind::create_keyword}) {
        if (to_string(k) == s) return k;
    }
    throw Error(ErrorCode::CorruptState, "unknown modification kind '" + s + "'");
}

/// One applied modification. `no_op` records carry an explanation in `note`
/// and leave the partition unchanged.
struct ModificationRecord {
    ModificationKind kind = ModificationKind::merge;
    nlohmann::json params = nlohmann::json::object();
    std::vector<std::size_t> affected_before;
    std::vector<std::size_t> affected_after;
    std::string timestamp;
    bool no_op = false;
    std::string note;

    nlohmann::json to_json() const {
        return {{"kind", to_string(kind)},     {"params", params},   {"affected_before", affected_before},
                {"affected_after", affected_after}, {"timestamp", timestamp}, {"no_op", no_op},
                {"note", note}};
    }

    static ModificationRecord from_json(const nlohmann::json& j) {
        ModificationRecord r;
        r.kind = modification_kind_from_string(j.at("kind").get<std::string>());
        r.params = j.at("params");
        r.affected_before = j.at("affected_before").get<std::vector<std::size_t>>();
        r.affected_after = j.at("affected_after").get<std::vector<std::size_t>>();
        r.timestamp = j.at("timestamp").get<std::string>();
        r.no_op = j.at("no_op").get<bool>();
        r.note = j.at("note").get<std::string>();
        return r;
    }
};

struct TopicSettings {
    std::size_t stored_topwords = kNamingTopwords;
    std::size_t naming_topwords = kNamingTopwords;
    bool cosine_topwords = false;
    std::size_t cosine_topwords_count = 50;
    std::uint64_t kmeans_seed = 42;
    std::size_t kmeans_max_iter = 300;

    nlohmann::json to_json() const {
        return {{"stored_topwords", stored_topwords},       {"naming_topwords", naming_topwords},
                {"cosine_topwords", cosine_topwords},       {"cosine_topwords_count", cosine_topwords_count},
                {"kmeans_seed", kmeans_seed},               {"kmeans_max_iter", kmeans_max_iter}};
    }
    static TopicSettings from_json(const nlohmann::json& j) {
        TopicSettings s;
        s.stored_topwords = j.value("stored_topwords", s.stored_topwords);
        s.naming_topwords = j.value("naming_topwords", s.naming_topwords);
        s.cosine_topwords = j.value("cosine_topwords", s.cosine_topwords);
        s.cosine_topwords_count = j.value("cosine_topwords_count", s.cosine_topwords_count);
        s.kmeans_seed = j.value("kmeans_seed", s.kmeans_seed);
        s.kmeans_max_iter = j.value("kmeans_max_iter", s.kmeans_max_iter);
        return s;
    }
};

/// The fitted model. Heavy immutable parts are shared between versions so a
/// modification can work on a copy and publish it atomically.
struct TopicModelState {
    std::shared_ptr<const Corpus> corpus;
    std::shared_ptr<const EmbeddingMatrix> embeddings;  // N x D
    std::shared_ptr<const EmbeddingMatrix> reduced;     // N x d
    std::shared_ptr<const ReducerModel> reducer;
    nlohmann::json config = nlohmann::json::object();
    TopicSettings settings;
    std::vector<Topic> topics;
    std::uint64_t version = 0;
    std::vector<ModificationRecord> history;
    Partition initial_partition;

    Partition partition() const {
        Partition p;
        p.reserve(topics.size());
        for (const auto& t : topics) p.push_back(t.doc_ids);
        return p;
    }

    const Topic& topic(std::size_t index) const {
        if (index >= topics.size()) {
            throw Error(ErrorCode::InvalidTopicIndex, "topic " + std::to_string(index) + " does not exist (" +
                                                          std::to_string(topics.size()) + " topics)");
        }
        return topics[index];
    }
};

struct TopicLabel {
    std::string title;
    std::string description;
};

/// Produces a title and description from a topic's naming words.
using TopicNamer = std::function<TopicLabel(const TopwordList& naming_words, std::size_t topic_index)>;

inline std::string placeholder_title(std::size_t index) { return "Topic " + std::to_string(index); }

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Collaborators needed to (re)compute topic representations.
struct TopicContext {
    TopicNamer namer;                      // empty: placeholder titles
    const Embedder* embedder = nullptr;    // keyword embeddings
    std::shared_ptr<const WordEmbeddings> word_embeddings;  // cosine top-words
    std::function<std::string()> clock = utc_timestamp;

    Vector embed_keyword(const std::string& keyword) const {
        if (!embedder) throw Error(ErrorCode::InvalidConfig, "no embedder configured for keyword operations");
        return embedder->embed_one(keyword);
    }
};

// ---------------------------------------------------------------------------
// Partition-level operators. These are pure and are what history replay runs.
// ---------------------------------------------------------------------------

struct PartitionChange {
    Partition next;
    /// For each topic of `next`, the index it had before if its documents
    /// are unchanged.
    std::vector<std::optional<std::size_t>> carried_from;
    std::vector<std::size_t> affected_before;
    std::vector<std::size_t> affected_after;
    bool no_op = false;
    std::string note;
};

inline Vector mean_row(const EmbeddingMatrix& m, const std::vector<DocId>& ids) {
    Vector mean(m.cols(), 0.0);
    for (const DocId id : ids) {
        const auto row = m.row(id);
        for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += row[j];
    }
    for (auto& x : mean) x /= static_cast<double>(ids.size());
    return mean;
}

inline PointMatrix rows_of(const EmbeddingMatrix& m, const std::vector<DocId>& ids) {
    PointMatrix p(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(m.cols()));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto row = m.row(ids[i]);
        for (std::size_t j = 0; j < m.cols(); ++j) p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
    }
    return p;
}

namespace detail {

inline void check_index(const Partition& p, std::size_t index) {
    if (index >= p.size()) {
        throw Error(ErrorCode::InvalidTopicIndex, "topic " + std::to_string(index) + " does not exist (" +
                                                      std::to_string(p.size()) + " topics)");
    }
}

inline PartitionChange unchanged(const Partition& p, std::string note) {
    PartitionChange c;
    c.next = p;
    for (std::size_t i = 0; i < p.size(); ++i) c.carried_from.emplace_back(i);
    c.no_op = true;
    c.note = std::move(note);
    return c;
}

/// Replaces topic `index` by `parts`: the first part takes its slot, the
/// rest are appended.
inline PartitionChange replace_with_parts(const Partition& p, std::size_t index, std::vector<std::vector<DocId>> parts) {
    PartitionChange c;
    c.next = p;
    for (std::size_t i = 0; i < p.size(); ++i) c.carried_from.emplace_back(i);
    for (auto& part : parts) std::sort(part.begin(), part.end());
    c.next[index] = std::move(parts[0]);
    c.carried_from[index].reset();
    c.affected_before = {index};
    c.affected_after = {index};
    for (std::size_t s = 1; s < parts.size(); ++s) {
        c.affected_after.push_back(c.next.size());
        c.next.push_back(std::move(parts[s]));
        c.carried_from.emplace_back();
    }
    return c;
}

inline std::vector<std::vector<DocId>> group_by_label(const std::vector<DocId>& ids, const ClusterAssignment& a) {
    std::vector<std::vector<DocId>> parts(static_cast<std::size_t>(a.n_clusters));
    for (std::size_t i = 0; i < ids.size(); ++i) parts[static_cast<std::size_t>(a.labels[i])].push_back(ids[i]);
    return parts;
}

}  // namespace detail

inline PartitionChange partition_merge(const Partition& p, std::vector<std::size_t> indices) {
    std::sort(indices.begin(), indices.end());
    indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    for (const auto i : indices) detail::check_index(p, i);
    if (indices.size() < 2) throw Error(ErrorCode::NeedAtLeastTwo, "merge needs at least two distinct topics");
    std::vector<DocId> merged;
    for (const auto i : indices) merged.insert(merged.end(), p[i].begin(), p[i].end());
    std::sort(merged.begin(), merged.end());
    PartitionChange c;
    c.affected_before = indices;
    const std::set<std::size_t> gone(indices.begin() + 1, indices.end());
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (i == indices.front()) {
            c.affected_after.push_back(c.next.size());
            c.next.push_back(merged);
            c.carried_from.emplace_back();
        } else if (!gone.contains(i)) {
            c.next.push_back(p[i]);
            c.carried_from.emplace_back(i);
        }
    }
    return c;
}

/// Moves each document of the deleted topic to the other topic whose full
/// centroid is most cosine-similar (ties to the lowest index).
inline PartitionChange partition_delete(const Partition& p, std::size_t index, const EmbeddingMatrix& embeddings) {
    detail::check_index(p, index);
    if (p.size() < 2) throw Error(ErrorCode::LastTopic, "cannot delete the only topic");
    std::vector<Vector> centroids;
    for (const auto& ids : p) centroids.push_back(mean_row(embeddings, ids));
    Partition grown = p;
    std::set<std::size_t> receivers;
    for (const DocId doc : p[index]) {
        std::size_t best = p.size();
        double best_sim = -2.0;
        for (std::size_t t = 0; t < p.size(); ++t) {
            if (t == index) continue;
            const double s = cosine_similarity(embeddings.row(doc), centroids[t]);
            if (s > best_sim) {
                best_sim = s;
                best = t;
            }
        }
        grown[best].push_back(doc);
        receivers.insert(best);
    }
    PartitionChange c;
    c.affected_before.push_back(index);
    for (std::size_t t = 0; t < p.size(); ++t) {
        if (t == index) continue;
        if (receivers.contains(t)) {
            std::sort(grown[t].begin(), grown[t].end());
            c.affected_after.push_back(c.next.size());
            c.affected_before.push_back(t);
            c.carried_from.emplace_back();
        } else {
            c.carried_from.emplace_back(t);
        }
        c.next.push_back(std::move(grown[t]));
    }
    std::sort(c.affected_before.begin(), c.affected_before.end());
    return c;
}

inline PartitionChange partition_split_kmeans(const Partition& p, std::size_t index, std::size_t n_clusters,
                                              std::uint64_t seed, std::size_t max_iter, const EmbeddingMatrix& reduced) {
    detail::check_index(p, index);
    if (n_clusters < 2) throw Error(ErrorCode::InvalidArgument, "n_clusters must be >= 2");
    if (p[index].size() < n_clusters) {
        throw Error(ErrorCode::TooFewDocuments, "topic " + std::to_string(index) + " has " +
                                                    std::to_string(p[index].size()) + " documents, fewer than " +
                                                    std::to_string(n_clusters) + " clusters");
    }
    const auto result = kmeans_cluster(rows_of(reduced, p[index]), n_clusters, seed, max_iter);
    if (result.assignment.n_clusters < 2) return detail::unchanged(p, "k-means found a single cluster");
    return detail::replace_with_parts(p, index, detail::group_by_label(p[index], result.assignment));
}

inline PartitionChange partition_split_hdbscan(const Partition& p, std::size_t index, std::size_t min_cluster_size,
                                               const EmbeddingMatrix& reduced) {
    detail::check_index(p, index);
    if (min_cluster_size < 2) throw Error(ErrorCode::InvalidArgument, "min_cluster_size must be >= 2");
    if (p[index].size() < 2 * min_cluster_size) {
        throw Error(ErrorCode::TooFewDocuments, "topic " + std::to_string(index) + " has " +
                                                    std::to_string(p[index].size()) + " documents, need at least " +
                                                    std::to_string(2 * min_cluster_size));
    }
    const auto points = rows_of(reduced, p[index]);
    const auto assignment = resolve_noise(points, hdbscan_cluster(points, min_cluster_size));
    if (assignment.n_clusters < 2) {
        return detail::unchanged(p, "density clustering found no sub-structure in topic " + std::to_string(index));
    }
    return detail::replace_with_parts(p, index, detail::group_by_label(p[index], assignment));
}

/// Whether a document moves to a keyword topic: strictly closer (cosine) to
/// the keyword than to its topic centroid.
inline bool prefers_keyword(VectorView doc, VectorView keyword, VectorView centroid) {
    return cosine_similarity(doc, keyword) > cosine_similarity(doc, centroid);
}

inline PartitionChange partition_split_keyword(const Partition& p, std::size_t index, VectorView keyword,
                                               const EmbeddingMatrix& embeddings) {
    detail::check_index(p, index);
    const auto centroid = mean_row(embeddings, p[index]);
    std::vector<DocId> moved, kept;
    for (const DocId doc : p[index]) (prefers_keyword(embeddings.row(doc), keyword, centroid) ? moved : kept).push_back(doc);
    if (moved.empty()) return detail::unchanged(p, "no document is closer to the keyword than to its topic centroid");
    if (kept.empty()) return detail::unchanged(p, "every document is closer to the keyword; the topic would not change");
    return detail::replace_with_parts(p, index, {kept, moved});
}

/// Global keyword topic: every document strictly closer to the keyword than
/// to its own topic's (pre-operation) centroid moves to a new topic, which is
/// appended. Emptied topics disappear.
inline PartitionChange partition_create_keyword(const Partition& p, VectorView keyword, const EmbeddingMatrix& embeddings) {
    std::vector<Vector> centroids;
    for (const auto& ids : p) centroids.push_back(mean_row(embeddings, ids));
    std::vector<DocId> moved;
    Partition remaining(p.size());
    for (std::size_t t = 0; t < p.size(); ++t) {
        for (const DocId doc : p[t]) {
            (prefers_keyword(embeddings.row(doc), keyword, centroids[t]) ? moved : remaining[t]).push_back(doc);
        }
    }
    if (moved.empty()) return detail::unchanged(p, "no document is closer to the keyword than to its topic centroid");
    std::sort(moved.begin(), moved.end());
    PartitionChange c;
    for (std::size_t t = 0; t < p.size(); ++t) {
        const bool touched = remaining[t].size() != p[t].size();
        if (touched) c.affected_before.push_back(t);
        if (remaining[t].empty()) continue;
        if (touched) {
            c.affected_after.push_back(c.next.size());
            c.carried_from.emplace_back();
        } else {
            c.carried_from.emplace_back(t);
        }
        c.next.push_back(std::move(remaining[t]));
    }
    c.affected_after.push_back(c.next.size());
    c.next.push_back(std::move(moved));
    c.carried_from.emplace_back();
    return c;
}

// ---------------------------------------------------------------------------
// Topic (re)computation
// ---------------------------------------------------------------------------

namespace detail {

/// Rebuilds `state.topics` from `change`. Top-words are recomputed for every
/// topic (the tf-idf normalization is global); centroids and labels only for
/// topics whose documents changed.
inline void apply_partition(TopicModelState& state, const PartitionChange& change, const TopicContext& ctx) {
    const auto tfidf = ctfidf_all(*state.corpus, change.next, state.settings.stored_topwords);
    std::vector<Topic> next;
    next.reserve(change.next.size());
    for (std::size_t i = 0; i < change.next.size(); ++i) {
        Topic topic;
        const auto& origin = change.carried_from[i];
        if (origin) {
            topic = state.topics[*origin];
        } else {
            topic.doc_ids = change.next[i];
            topic.centroid_full = mean_row(*state.embeddings, topic.doc_ids);
            topic.centroid_reduced = mean_row(*state.reduced, topic.doc_ids);
            topic.topwords_cosine.reset();
            if (state.settings.cosine_topwords && ctx.word_embeddings) {
                std::vector<std::string> candidates;
                for (auto& w : cosine_candidates(*state.corpus, topic.doc_ids)) {
                    if (ctx.word_embeddings->contains(w)) candidates.push_back(std::move(w));
                }
                if (!candidates.empty() && norm(topic.centroid_full) > 0.0) {
                    topic.topwords_cosine = cosine_topwords(*ctx.word_embeddings, topic.centroid_full, candidates,
                                                            state.settings.cosine_topwords_count);
                }
            }
        }
        topic.index = i;
        topic.topwords_tfidf = tfidf[i];
        if (!origin) {
            const auto naming = topwords_for_naming(topic.topwords_tfidf, state.settings.naming_topwords);
            TopicLabel label{placeholder_title(i), ""};
            if (ctx.namer && !naming.empty()) label = ctx.namer(naming, i);
            topic.title = label.title.empty() ? placeholder_title(i) : label.title;
            topic.description = label.description;
        } else if (topic.title == placeholder_title(*origin)) {
            topic.title = placeholder_title(i);  // placeholders track the index
        }
        next.push_back(std::move(topic));
    }
    state.topics = std::move(next);
}

inline TopicModelState commit(const TopicModelState& state, ModificationKind kind, nlohmann::json params,
                              const PartitionChange& change, const TopicContext& ctx) {
    TopicModelState next = state;
    if (!change.no_op) apply_partition(next, change, ctx);
    ModificationRecord record;
    record.kind = kind;
    record.params = std::move(params);
    record.affected_before = change.affected_before;
    record.affected_after = change.affected_after;
    record.timestamp = ctx.clock ? ctx.clock() : "";
    record.no_op = change.no_op;
    record.note = change.note;
    next.history.push_back(std::move(record));
    ++next.version;
    return next;
}

}  // namespace detail

/// Builds version 0 of a model from a noise-free cluster assignment.
inline TopicModelState build_topics(std::shared_ptr<const Corpus> corpus, std::shared_ptr<const EmbeddingMatrix> embeddings,
                                    std::shared_ptr<const EmbeddingMatrix> reduced,
                                    std::shared_ptr<const ReducerModel> reducer, const ClusterAssignment& assignment,
                                    const TopicContext& ctx, TopicSettings settings = {},
                                    nlohmann::json config = nlohmann::json::object()) {
    if (assignment.has_noise()) throw Error(ErrorCode::InvalidArgument, "assignment must be noise-free");
    if (assignment.labels.size() != corpus->size() || embeddings->rows() != corpus->size() ||
        reduced->rows() != corpus->size()) {
        throw Error(ErrorCode::DimensionMismatch, "corpus, embeddings and assignment sizes differ");
    }
    TopicModelState state;
    state.corpus = std::move(corpus);
    state.embeddings = std::move(embeddings);
    state.reduced = std::move(reduced);
    state.reducer = std::move(reducer);
    state.settings = settings;
    state.config = std::move(config);
    Partition p(static_cast<std::size_t>(assignment.n_clusters));
    for (std::size_t i = 0; i < assignment.labels.size(); ++i) p[static_cast<std::size_t>(assignment.labels[i])].push_back(i);
    for (std::size_t t = 0; t < p.size(); ++t) {
        if (p[t].empty()) throw Error(ErrorCode::EmptyTopic, "cluster " + std::to_string(t) + " is empty");
    }
    PartitionChange initial;
    initial.next = p;
    initial.carried_from.assign(p.size(), std::nullopt);
    detail::apply_partition(state, initial, ctx);
    state.initial_partition = std::move(p);
    return state;
}

inline TopicModelState merge_topics(const TopicModelState& state, const std::vector<std::size_t>& indices,
                                    const TopicContext& ctx) {
    const auto change = partition_merge(state.partition(), indices);
    return detail::commit(state, ModificationKind::merge, {{"indices", indices}}, change, ctx);
}

inline TopicModelState delete_topic(const TopicModelState& state, std::size_t index, const TopicContext& ctx) {
    const auto change = partition_delete(state.partition(), index, *state.embeddings);
    return detail::commit(state, ModificationKind::delete_topic, {{"index", index}}, change, ctx);
}

inline TopicModelState split_topic_kmeans(const TopicModelState& state, std::size_t index, std::size_t n_clusters,
                                          const TopicContext& ctx, std::optional<std::uint64_t> seed = std::nullopt) {
    const auto s = seed.value_or(state.settings.kmeans_seed);
    const auto change =
        partition_split_kmeans(state.partition(), index, n_clusters, s, state.settings.kmeans_max_iter, *state.reduced);
    return detail::commit(state, ModificationKind::split_kmeans,
                          {{"index", index}, {"n_clusters", n_clusters}, {"seed", s}}, change, ctx);
}

inline TopicModelState split_topic_hdbscan(const TopicModelState& state, std::size_t index, std::size_t min_cluster_size,
                                           const TopicContext& ctx) {
    const auto change = partition_split_hdbscan(state.partition(), index, min_cluster_size, *state.reduced);
    return detail::commit(state, ModificationKind::split_hdbscan,
                          {{"index", index}, {"min_cluster_size", min_cluster_size}}, change, ctx);
}

inline TopicModelState split_topic_keyword(const TopicModelState& state, std::size_t index, const std::string& keyword,
                                           const TopicContext& ctx) {
    if (trim(keyword).empty()) throw Error(ErrorCode::EmptyKeyword, "keyword must not be empty");
    state.topic(index);
    const auto q = ctx.embed_keyword(keyword);
    const auto change = partition_split_keyword(state.partition(), index, q, *state.embeddings);
    return detail::commit(state, ModificationKind::split_keyword, {{"index", index}, {"keyword", keyword}}, change, ctx);
}

inline TopicModelState create_topic_keyword(const TopicModelState& state, const std::string& keyword,
                                            const TopicContext& ctx) {
    if (trim(keyword).empty()) throw Error(ErrorCode::EmptyKeyword, "keyword must not be empty");
    const auto q = ctx.embed_keyword(keyword);
    const auto change = partition_create_keyword(state.partition(), q, *state.embeddings);
    return detail::commit(state, ModificationKind::create_keyword, {{"keyword", keyword}}, change, ctx);
}

inline TopwordList topwords_for_naming(const Topic& topic, std::size_t count = kNamingTopwords) {
    return topwords_for_naming(topic.topwords_tfidf, count);
}

/// Re-applies `history` to `initial` at the partition level. Keyword records
/// re-embed their keyword through `embedder`.
inline Partition replay_history(const Partition& initial, const std::vector<ModificationRecord>& history,
                                const EmbeddingMatrix& embeddings, const EmbeddingMatrix& reduced,
                                const Embedder* embedder, std::size_t kmeans_max_iter = 300) {
    Partition p = initial;
    for (const auto& r : history) {
        if (r.no_op) continue;
        const auto& a = r.params;
        const auto keyword_vector = [&] {
            if (!embedder) throw Error(ErrorCode::InvalidConfig, "replaying keyword operations needs an embedder");
            return embedder->embed_one(a.at("keyword").get<std::string>());
        };
        switch (r.kind) {
        case ModificationKind::merge: p = partition_merge(p, a.at("indices").get<std::vector<std::size_t>>()).next; break;
        case ModificationKind::delete_topic: p = partition_delete(p, a.at("index").get<std::size_t>(), embeddings).next; break;
        case ModificationKind::split_kmeans:
            p = partition_split_kmeans(p, a.at("index").get<std::size_t>(), a.at("n_clusters").get<std::size_t>(),
                                       a.at("seed").get<std::uint64_t>(), kmeans_max_iter, reduced)
                    .next;
            break;
        case ModificationKind::split_hdbscan:
            p = partition_split_hdbscan(p, a.at("index").get<std::size_t>(), a.at("min_cluster_size").get<std::size_t>(),
                                        reduced)
                    .next;
            break;
        case ModificationKind::split_keyword:
            p = partition_split_keyword(p, a.at("index").get<std::size_t>(), keyword_vector(), embeddings).next;
            break;
        case ModificationKind::create_keyword: p = partition_create_keyword(p, keyword_vector(), embeddings).next; break;
        }
    }
    return p;
}

/// Checks the partition invariant: topics non-empty, pairwise disjoint, and
/// covering every document. Returns a description of the first violation.
inline std::optional<std::string> partition_violation(const Partition& p, std::size_t n_docs) {
    std::vector<char> seen(n_docs, 0);
    std::size_t total = 0;
    for (std::size_t t = 0; t < p.size(); ++t) {
        if (p[t].empty()) return "topic " + std::to_string(t) + " is empty";
        for (const DocId d : p[t]) {
            if (d >= n_docs) return "document id " + std::to_string(d) + " out of range";
            if (seen[d]) return "document " + std::to_string(d) + " appears twice";
            seen[d] = 1;
            ++total;
        }
    }
    if (total != n_docs) return std::to_string(n_docs - total) + " documents unassigned";
    return std::nullopt;
}

}  // namespace topicforge
