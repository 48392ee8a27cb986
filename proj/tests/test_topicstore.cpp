#include <gtest/gtest.h>

#include <map>
#include <numeric>
#include <random>
#include <set>

#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "topicforge/topicstore.hpp"

using namespace topicforge;

namespace {

std::vector<double> row(const EmbeddingMatrix& m, DocId id) { return {m.row(id).begin(), m.row(id).end()}; }

std::vector<double> oracle_mean(const EmbeddingMatrix& m, const std::vector<DocId>& ids) {
    std::vector<double> sum(m.cols(), 0.0);
    for (const auto id : ids) {
        for (std::size_t j = 0; j < m.cols(); ++j) sum[j] += m.row(id)[j];
    }
    for (auto& x : sum) x /= static_cast<double>(ids.size());
    return sum;
}

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an error";
    return ErrorCode::InvalidArgument;
}

void expect_valid(const TopicModelState& s) {
    const auto violation = partition_violation(s.partition(), s.corpus->size());
    EXPECT_FALSE(violation.has_value()) << *violation;
    for (std::size_t i = 0; i < s.topics.size(); ++i) {
        EXPECT_EQ(s.topics[i].index, i);
        EXPECT_TRUE(std::is_sorted(s.topics[i].doc_ids.begin(), s.topics[i].doc_ids.end()));
        EXPECT_FALSE(s.topics[i].title.empty());
    }
}

}  // namespace

TEST(BuildTopics, CentroidsAreMeansAndTitlesArePlaceholders) {
    const auto m = fixture::make_model(3, 30, 3);
    expect_valid(m.state);
    EXPECT_EQ(m.state.version, 0u);
    EXPECT_EQ(m.state.initial_partition, m.state.partition());
    for (const auto& t : m.state.topics) {
        const auto want = oracle_mean(*m.state.embeddings, t.doc_ids);
        for (std::size_t j = 0; j < want.size(); ++j) EXPECT_NEAR(t.centroid_full[j], want[j], 1e-12);
        EXPECT_EQ(t.title, placeholder_title(t.index));
        EXPECT_LE(t.topwords_tfidf.size(), 50u);
        EXPECT_FALSE(t.topwords_cosine.has_value());
    }
}

TEST(MergeTopics, UnionTakesLowestIndex) {
    int named = 0;
    TopicContext ctx;
    ctx.namer = [&](const TopwordList&, std::size_t i) {
        ++named;
        return TopicLabel{"Named " + std::to_string(i), "d"};
    };
    auto m = fixture::make_model(3, 40, 6, ctx);
    EXPECT_EQ(named, 6);
    ctx.embedder = m.embedder.get();
    const auto before = m.state;
    const auto after = merge_topics(before, {5, 1, 2}, ctx);
    expect_valid(after);
    ASSERT_EQ(after.topics.size(), 4u);
    std::vector<DocId> expected = before.topics[1].doc_ids;
    for (const auto i : {2, 5}) expected.insert(expected.end(), before.topics[i].doc_ids.begin(), before.topics[i].doc_ids.end());
    std::sort(expected.begin(), expected.end());
    EXPECT_EQ(after.topics[1].doc_ids, expected);
    EXPECT_EQ(after.topics[0].doc_ids, before.topics[0].doc_ids);
    EXPECT_EQ(after.topics[2].doc_ids, before.topics[3].doc_ids);
    EXPECT_EQ(after.topics[3].doc_ids, before.topics[4].doc_ids);
    EXPECT_EQ(after.topics[2].title, before.topics[3].title);  // untouched topics keep labels
    EXPECT_EQ(named, 7);
    EXPECT_EQ(after.version, before.version + 1);
    ASSERT_EQ(after.history.size(), 1u);
    EXPECT_EQ(after.history[0].affected_before, (std::vector<std::size_t>{1, 2, 5}));
    EXPECT_EQ(after.history[0].affected_after, (std::vector<std::size_t>{1}));
    EXPECT_EQ(before.topics.size(), 6u);  // input state untouched
}

TEST(MergeTopics, Errors) {
    const auto m = fixture::make_model(2, 20, 3);
    const auto ctx = fixture::context_for(m);
    EXPECT_EQ(code_of([&] { merge_topics(m.state, {1}, ctx); }), ErrorCode::NeedAtLeastTwo);
    EXPECT_EQ(code_of([&] { merge_topics(m.state, {1, 1}, ctx); }), ErrorCode::NeedAtLeastTwo);
    EXPECT_EQ(code_of([&] { merge_topics(m.state, {0, 9}, ctx); }), ErrorCode::InvalidTopicIndex);
}

TEST(DeleteTopic, DocumentsGoToNearestRemainingCentroid) {
    const auto m = fixture::make_model(4, 25, 5);
    const auto ctx = fixture::context_for(m);
    const auto& before = m.state;
    const std::size_t victim = 2;
    const auto after = delete_topic(before, victim, ctx);
    expect_valid(after);
    ASSERT_EQ(after.topics.size(), 4u);
    std::vector<std::vector<double>> centroids;
    for (const auto& t : before.topics) centroids.push_back(oracle_mean(*before.embeddings, t.doc_ids));
    for (const DocId doc : before.topics[victim].doc_ids) {
        std::size_t best = 0;
        double best_sim = -2;
        for (std::size_t t = 0; t < centroids.size(); ++t) {
            if (t == victim) continue;
            const double s = oracle::cosine(row(*before.embeddings, doc), centroids[t]);
            if (s > best_sim) {
                best_sim = s;
                best = t;
            }
        }
        const std::size_t new_index = best > victim ? best - 1 : best;
        const auto& ids = after.topics[new_index].doc_ids;
        EXPECT_TRUE(std::binary_search(ids.begin(), ids.end(), doc)) << "doc " << doc;
    }
}

TEST(DeleteTopic, LastTopicAndRange) {
    const auto m = fixture::make_model(2, 20, 2);
    const auto ctx = fixture::context_for(m);
    const auto one = delete_topic(m.state, 0, ctx);
    EXPECT_EQ(one.topics.size(), 1u);
    EXPECT_EQ(code_of([&] { delete_topic(one, 0, ctx); }), ErrorCode::LastTopic);
    EXPECT_EQ(code_of([&] { delete_topic(m.state, 7, ctx); }), ErrorCode::InvalidTopicIndex);
}

TEST(SplitKmeans, FirstPartKeepsIndexOthersAppended) {
    const auto m = fixture::make_model(3, 40, 2);
    const auto ctx = fixture::context_for(m);
    const auto after = split_topic_kmeans(m.state, 0, 5, ctx);
    expect_valid(after);
    ASSERT_EQ(after.topics.size(), 6u);
    EXPECT_EQ(after.topics[1].doc_ids, m.state.topics[1].doc_ids);
    std::vector<DocId> reunion;
    for (const auto i : {0, 2, 3, 4, 5}) reunion.insert(reunion.end(), after.topics[i].doc_ids.begin(), after.topics[i].doc_ids.end());
    std::sort(reunion.begin(), reunion.end());
    EXPECT_EQ(reunion, m.state.topics[0].doc_ids);
    EXPECT_EQ(after.history.back().affected_after, (std::vector<std::size_t>{0, 2, 3, 4, 5}));
    EXPECT_EQ(after.history.back().params["seed"], 42);
    EXPECT_EQ(split_topic_kmeans(m.state, 0, 5, ctx).partition(), after.partition());
}

TEST(SplitKmeans, Preconditions) {
    const auto m = fixture::make_model(2, 3, 2);
    const auto ctx = fixture::context_for(m);
    const auto n = m.state.topics[0].size();
    EXPECT_EQ(code_of([&] { split_topic_kmeans(m.state, 0, n + 1, ctx); }), ErrorCode::TooFewDocuments);
    EXPECT_EQ(code_of([&] { split_topic_kmeans(m.state, 0, 1, ctx); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(code_of([&] { split_topic_kmeans(m.state, 4, 2, ctx); }), ErrorCode::InvalidTopicIndex);
}

TEST(SplitHdbscan, FindsGroupsInsideMergedTopic) {
    const auto m = fixture::make_model(3, 60, 1);
    const auto ctx = fixture::context_for(m);
    const auto after = split_topic_hdbscan(m.state, 0, 15, ctx);
    expect_valid(after);
    EXPECT_FALSE(after.history.back().no_op);
    EXPECT_GE(after.topics.size(), 2u);
    EXPECT_EQ(code_of([&] { split_topic_hdbscan(m.state, 0, 100, ctx); }), ErrorCode::TooFewDocuments);
}

TEST(SplitHdbscan, SingleClusterIsRecordedNoOp) {
    auto m = fixture::make_model(1, 80, 1);
    const auto ctx = fixture::context_for(m);
    const auto after = split_topic_hdbscan(m.state, 0, 40, ctx);
    EXPECT_EQ(after.partition(), m.state.partition());
    ASSERT_EQ(after.history.size(), 1u);
    EXPECT_TRUE(after.history[0].no_op);
    EXPECT_FALSE(after.history[0].note.empty());
}

TEST(SplitKeyword, EveryDocumentSatisfiesTheInequality) {
    const auto m = fixture::make_model(3, 30, 1);
    const auto ctx = fixture::context_for(m);
    const auto keyword = fixture::group_word(m, 1);
    const auto q = m.embedder->embed_one(keyword);
    const auto c = oracle_mean(*m.state.embeddings, m.state.topics[0].doc_ids);
    const auto after = split_topic_keyword(m.state, 0, keyword, ctx);
    expect_valid(after);
    ASSERT_EQ(after.topics.size(), 2u);
    const auto& moved = after.topics[1].doc_ids;
    for (const DocId d : m.state.topics[0].doc_ids) {
        const auto e = row(*m.state.embeddings, d);
        const bool should_move = oracle::cosine(e, q) > oracle::cosine(e, c);
        EXPECT_EQ(std::binary_search(moved.begin(), moved.end(), d), should_move) << "doc " << d;
    }
    EXPECT_EQ(after.history.back().params["keyword"], keyword);
}

TEST(SplitKeyword, UnrelatedKeywordIsNoOpAndEmptyKeywordFails) {
    const auto m = fixture::make_model(2, 20, 2);
    const auto ctx = fixture::context_for(m);
    const auto after = split_topic_keyword(m.state, 0, "zzzzqqq", ctx);
    EXPECT_TRUE(after.history.back().no_op);
    EXPECT_EQ(after.partition(), m.state.partition());
    EXPECT_EQ(code_of([&] { split_topic_keyword(m.state, 0, "  ", ctx); }), ErrorCode::EmptyKeyword);
    EXPECT_EQ(code_of([&] { split_topic_keyword(m.state, 3, "x", ctx); }), ErrorCode::InvalidTopicIndex);
}

TEST(CreateKeyword, GlobalRuleAndEmptiedTopicsRemoved) {
    const auto m = fixture::make_model(3, 30, 4);
    const auto ctx = fixture::context_for(m);
    const auto keyword = m.state.corpus->document(2).text;  // a whole group-2 document
    const auto q = m.embedder->embed_one(keyword);
    const auto after = create_topic_keyword(m.state, keyword, ctx);
    expect_valid(after);
    ASSERT_FALSE(after.history.back().no_op);
    const auto& created = after.topics.back().doc_ids;
    for (const auto& t : m.state.topics) {
        const auto c = oracle_mean(*m.state.embeddings, t.doc_ids);
        for (const DocId d : t.doc_ids) {
            const auto e = row(*m.state.embeddings, d);
            EXPECT_EQ(std::binary_search(created.begin(), created.end(), d), oracle::cosine(e, q) > oracle::cosine(e, c));
        }
    }
    EXPECT_EQ(create_topic_keyword(m.state, "zzzzqqq", ctx).history.back().no_op, true);
}

TEST(History, RandomOperationsKeepPartitionAndReplay) {
    auto m = fixture::make_model(4, 30, 4);
    const auto ctx = fixture::context_for(m);
    std::mt19937_64 rng(77);
    auto state = m.state;
    std::size_t failures = 0;
    for (int step = 0; step < 120; ++step) {
        const std::size_t n = state.topics.size();
        std::uniform_int_distribution<std::size_t> pick(0, n + 1);  // sometimes out of range
        const auto version = state.version;
        try {
            switch (rng() % 6) {
            case 0: state = merge_topics(state, {pick(rng), pick(rng)}, ctx); break;
            case 1: state = delete_topic(state, pick(rng), ctx); break;
            case 2: state = split_topic_kmeans(state, pick(rng), 2 + rng() % 3, ctx); break;
            case 3: state = split_topic_hdbscan(state, pick(rng), 5, ctx); break;
            case 4: state = split_topic_keyword(state, pick(rng), fixture::group_word(m, static_cast<int>(rng() % 4)), ctx); break;
            default: state = create_topic_keyword(state, fixture::group_word(m, static_cast<int>(rng() % 4)), ctx); break;
            }
            EXPECT_EQ(state.version, version + 1);
        } catch (const Error&) {
            ++failures;
            EXPECT_EQ(state.version, version);
        }
        expect_valid(state);
    }
    EXPECT_GT(state.history.size(), 40u);
    EXPECT_GT(failures, 0u);
    const auto replayed =
        replay_history(state.initial_partition, state.history, *state.embeddings, *state.reduced, m.embedder.get());
    EXPECT_EQ(replayed, state.partition());
}

TEST(History, RecordJsonRoundTrip) {
    ModificationRecord r;
    r.kind = ModificationKind::split_keyword;
    r.params = {{"index", 2}, {"keyword", "moon"}};
    r.affected_before = {2};
    r.affected_after = {2, 7};
    r.timestamp = "2026-01-01T00:00:00Z";
    const auto back = ModificationRecord::from_json(nlohmann::json::parse(r.to_json().dump()));
    EXPECT_EQ(back.to_json(), r.to_json());
}

namespace {

/// Returns scripted vectors for known texts; anything else is an error.
class ScriptedEmbedder final : public EmbeddingProvider {
public:
    explicit ScriptedEmbedder(std::map<std::string, Vector> table) : table_(std::move(table)) {}
    const std::string& model_name() const override { return name_; }
    std::vector<Vector> embed_batch(const std::vector<std::string>& texts) override {
        std::vector<Vector> out;
        for (const auto& t : texts) out.push_back(table_.at(t));
        return out;
    }

private:
    std::string name_ = "scripted";
    std::map<std::string, Vector> table_;
};

}  // namespace

TEST(MergeTopics, CentroidIsWeightedMeanOfOldCentroids) {
    const auto m = fixture::make_model(3, 30, 3);
    const auto& a = m.state.topics[0];
    const auto& b = m.state.topics[2];
    const auto merged = merge_topics(m.state, {0, 2}, fixture::context_for(m));
    const auto na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    for (std::size_t j = 0; j < a.centroid_full.size(); ++j) {
        EXPECT_NEAR(merged.topics[0].centroid_full[j], (na * a.centroid_full[j] + nb * b.centroid_full[j]) / (na + nb), 1e-9);
    }
    const auto all = merge_topics(merged, {0, 1}, fixture::context_for(m));
    ASSERT_EQ(all.topics.size(), 1u);
    std::vector<DocId> every(m.state.corpus->size());
    std::iota(every.begin(), every.end(), DocId{0});
    const auto mean = oracle_mean(*m.state.embeddings, every);
    for (std::size_t j = 0; j < mean.size(); ++j) EXPECT_NEAR(all.topics[0].centroid_full[j], mean[j], 1e-9);
}

namespace {

/// Two tight, far-apart Gaussian blobs used directly as both embedding spaces,
/// one topic per blob.
TopicModelState two_blob_state(const TopicContext& ctx) {
    const auto blobs = oracle::gaussian_blobs({{5.0, 1.0, 0.0}, {1.0, 5.0, 0.0}}, 40, 0.2, 17);
    std::vector<std::string> texts;
    std::vector<Vector> rows;
    for (Eigen::Index i = 0; i < blobs.points.rows(); ++i) {
        texts.push_back("blob" + std::to_string(blobs.labels[static_cast<std::size_t>(i)]) + " item" + std::to_string(i));
        rows.push_back({blobs.points(i, 0), blobs.points(i, 1), blobs.points(i, 2)});
    }
    auto corpus = std::make_shared<const Corpus>(ingest_corpus(texts, 1, {}));
    auto full = std::make_shared<const EmbeddingMatrix>(EmbeddingMatrix::from_rows(rows));
    ReducerConfig rc;
    rc.target_dim = 2;
    auto reduction = fit_reduce(*full, rc);
    ClusterAssignment labels{blobs.labels, 2};
    return build_topics(corpus, full, full, std::make_shared<const ReducerModel>(reduction.model), labels, ctx);
}

std::set<std::vector<DocId>> as_set(const Partition& p) { return {p.begin(), p.end()}; }

}  // namespace

TEST(SplitTopic, MergeThenSplitRestoresGroups) {
    const auto m = fixture::make_model(4, 30, 4);
    const auto ctx = fixture::context_for(m);
    const auto merged = merge_topics(m.state, {1, 3}, ctx);
    const auto by_kmeans = split_topic_kmeans(merged, 1, 2, ctx);
    EXPECT_EQ(as_set(by_kmeans.partition()), as_set(m.state.partition()));
    for (const auto& t : by_kmeans.topics) {
        const auto want = oracle_mean(*by_kmeans.embeddings, t.doc_ids);
        for (std::size_t j = 0; j < want.size(); ++j) EXPECT_NEAR(t.centroid_full[j], want[j], 1e-9);
    }
}

TEST(SplitTopic, TwoBlobsSplitIntoGenerationGroups) {
    const auto state = two_blob_state({});
    const auto merged = merge_topics(state, {0, 1}, {});
    ASSERT_EQ(merged.topics.size(), 1u);
    const auto by_kmeans = split_topic_kmeans(merged, 0, 2, {});
    const auto by_hdbscan = split_topic_hdbscan(merged, 0, 10, {});
    ASSERT_FALSE(by_hdbscan.history.back().no_op);
    EXPECT_EQ(as_set(by_kmeans.partition()), as_set(state.partition()));
    EXPECT_EQ(as_set(by_hdbscan.partition()), as_set(state.partition()));
}

TEST(SplitKeyword, KeywordAtCentroidMovesNothing) {
    auto m = fixture::make_model(2, 20, 2);
    const auto centroid = m.state.topics[1].centroid_full;
    Embedder scripted(std::make_shared<ScriptedEmbedder>(std::map<std::string, Vector>{{"centre", centroid}}));
    auto ctx = fixture::context_for(m);
    ctx.embedder = &scripted;
    const auto after = split_topic_keyword(m.state, 1, "centre", ctx);
    EXPECT_TRUE(after.history.back().no_op);
    EXPECT_EQ(after.partition(), m.state.partition());
    EXPECT_EQ(after.version, m.state.version + 1);
}

TEST(SplitKeyword, ExactlyThreeOfTenDocumentsQualify) {
    // Unit vectors at 0, 10, ..., 90 degrees; the keyword points at 90. The
    // centroid sits at 45, so sin(t) > cos(t - 45) holds only for t > 67.5.
    constexpr double kPi = 3.14159265358979323846;
    std::vector<std::string> texts;
    std::vector<Vector> rows;
    for (int k = 0; k < 10; ++k) {
        texts.push_back("doc" + std::to_string(k) + " angle");
        const double t = (k * 10.0) * kPi / 180.0;
        rows.push_back({std::cos(t), std::sin(t), 0.0});
    }
    auto corpus = std::make_shared<const Corpus>(ingest_corpus(texts, 1, {}));
    auto full = std::make_shared<const EmbeddingMatrix>(EmbeddingMatrix::from_rows(rows));
    ReducerConfig rc;
    rc.target_dim = 2;
    auto reduction = fit_reduce(*full, rc);
    auto reduced = std::make_shared<const EmbeddingMatrix>(EmbeddingMatrix::from_rows(rows));
    Embedder scripted(std::make_shared<ScriptedEmbedder>(std::map<std::string, Vector>{{"north", {0.0, 1.0, 0.0}}}));
    TopicContext ctx;
    ctx.embedder = &scripted;
    ClusterAssignment one{std::vector<int>(10, 0), 1};
    const auto state = build_topics(corpus, full, reduced, std::make_shared<const ReducerModel>(reduction.model), one, ctx);
    const auto after = split_topic_keyword(state, 0, "north", ctx);
    ASSERT_EQ(after.topics.size(), 2u);
    EXPECT_EQ(after.topics[1].doc_ids, (std::vector<DocId>{7, 8, 9}));
    EXPECT_EQ(after.topics[0].doc_ids, (std::vector<DocId>{0, 1, 2, 3, 4, 5, 6}));
}
