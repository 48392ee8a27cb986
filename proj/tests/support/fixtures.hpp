#pragma once

// Small fitted models shared by the higher-level tests.

#include <memory>
#include <string>
#include <vector>

#include "support/oracles.hpp"
#include "topicforge/topicstore.hpp"

namespace fixture {

struct Model {
    std::shared_ptr<topicforge::Embedder> embedder;
    topicforge::TopicModelState state;
    std::vector<int> labels;  // generating group per document
};

inline std::shared_ptr<topicforge::Embedder> local_embedder(std::size_t dim = 128) {
    return std::make_shared<topicforge::Embedder>(std::make_shared<topicforge::LocalHashEmbedder>(dim));
}

/// Documents from `groups` disjoint vocabularies, embedded locally, reduced
/// to 5 dimensions and partitioned with k-means into `n_topics` topics.
inline Model make_model(std::size_t groups, std::size_t docs_per_group, std::size_t n_topics,
                        const topicforge::TopicContext& base_ctx = {}, std::uint64_t seed = 3) {
    using namespace topicforge;
    const auto synth = oracle::token_disjoint_corpus(groups, docs_per_group, 30, 12, seed);
    Model m;
    m.labels = synth.labels;
    m.embedder = local_embedder();
    auto corpus = std::make_shared<const Corpus>(ingest_corpus(synth.texts, 1, {}));
    auto full = std::make_shared<const EmbeddingMatrix>(EmbeddingMatrix::from_rows(m.embedder->embed(synth.texts)));
    ReducerConfig rc;
    rc.target_dim = 5;
    auto reduction = fit_reduce(*full, rc);
    std::vector<double> values(reduction.coordinates.size());
    for (Eigen::Index i = 0; i < reduction.coordinates.rows(); ++i) {
        for (Eigen::Index j = 0; j < reduction.coordinates.cols(); ++j) {
            values[static_cast<std::size_t>(i * reduction.coordinates.cols() + j)] = reduction.coordinates(i, j);
        }
    }
    auto reduced = std::make_shared<const EmbeddingMatrix>(static_cast<std::size_t>(reduction.coordinates.rows()),
                                                           static_cast<std::size_t>(reduction.coordinates.cols()), values);
    const auto assignment = kmeans_cluster(reduction.coordinates, n_topics, seed).assignment;
    TopicContext ctx = base_ctx;
    if (!ctx.embedder) ctx.embedder = m.embedder.get();
    ctx.clock = [] { return std::string("2026-01-01T00:00:00Z"); };
    TopicSettings settings;
    settings.stored_topwords = 50;
    m.state = build_topics(corpus, full, reduced, std::make_shared<const ReducerModel>(reduction.model), assignment, ctx,
                           settings);
    return m;
}

inline topicforge::TopicContext context_for(const Model& m) {
    topicforge::TopicContext ctx;
    ctx.embedder = m.embedder.get();
    ctx.clock = [] { return std::string("2026-01-01T00:00:00Z"); };
    return ctx;
}

/// Some vocabulary word belonging to generating group `g`.
inline std::string group_word(const Model& m, int g) {
    for (std::size_t i = 0; i < m.labels.size(); ++i) {
        if (m.labels[i] == g) return m.state.corpus->document(i).tokens.front();
    }
    return {};
}

}  // namespace fixture
