#include <gtest/gtest.h>

#include <random>
#include <set>

#include "support/oracles.hpp"
#include "topicforge/clustering.hpp"

using namespace topicforge;

namespace {

void expect_partition(const ClusterAssignment& a, std::size_t rows) {
    ASSERT_EQ(a.labels.size(), rows);
    std::vector<std::size_t> sizes(static_cast<std::size_t>(a.n_clusters), 0);
    for (const int l : a.labels) {
        ASSERT_GE(l, 0);
        ASSERT_LT(l, a.n_clusters);
        ++sizes[static_cast<std::size_t>(l)];
    }
    for (const auto s : sizes) EXPECT_GT(s, 0u);
}

Eigen::MatrixXd uniform_points(std::size_t n, std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::MatrixXd p(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        for (Eigen::Index j = 0; j < p.cols(); ++j) p(i, j) = u(rng);
    }
    return p;
}

}  // namespace

TEST(Hdbscan, TwoSeparatedBlobs) {
    const auto blobs = oracle::gaussian_blobs({{0, 0}, {10, 0}}, 100, 0.1, 17);
    const auto a = hdbscan_cluster(blobs.points, 10);
    EXPECT_EQ(a.n_clusters, 2);
    EXPECT_FALSE(a.has_noise());
    EXPECT_NEAR(oracle::adjusted_rand_index(a.labels, blobs.labels), 1.0, 1e-12);
    EXPECT_EQ(a, hdbscan_cluster(blobs.points, 10));
}

TEST(Hdbscan, FiveBlobsInFiveDimensions) {
    const auto blobs = oracle::gaussian_blobs(
        {{0, 0, 0, 0, 0}, {6, 0, 0, 0, 0}, {0, 6, 0, 0, 0}, {0, 0, 6, 0, 0}, {0, 0, 0, 6, 6}}, 60, 0.4, 3);
    const auto a = resolve_noise(blobs.points, hdbscan_cluster(blobs.points, 15));
    EXPECT_EQ(a.n_clusters, 5);
    EXPECT_NEAR(oracle::adjusted_rand_index(a.labels, blobs.labels), 1.0, 1e-12);
}

TEST(Hdbscan, UniformNoiseResolvesToOneCluster) {
    const auto points = uniform_points(100, 2, 8);
    const auto raw = hdbscan_cluster(points, 50);
    const auto resolved = resolve_noise(points, raw);
    EXPECT_EQ(resolved.n_clusters, 1);
    expect_partition(resolved, 100);
}

TEST(Hdbscan, TooFewPoints) {
    Eigen::MatrixXd one(1, 2);
    one << 0.5, 0.5;
    try {
        hdbscan_cluster(one, 2);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::TooFewPoints);
    }
}

TEST(ResolveNoise, IdentityTieBreakAndFallback) {
    Eigen::MatrixXd p(5, 1);
    p << 0, 0, 2, 2, 1;
    const ClusterAssignment clean{{0, 0, 1, 1, 1}, 2};
    EXPECT_EQ(resolve_noise(p, clean), clean);

    const ClusterAssignment noisy{{0, 0, 1, 1, kNoise}, 2};
    EXPECT_EQ(resolve_noise(p, noisy).labels[4], 0);  // equidistant to centroids 0 and 2

    const Eigen::MatrixXd ten = uniform_points(10, 3, 1);
    const ClusterAssignment all_noise{std::vector<int>(10, kNoise), 0};
    const auto resolved = resolve_noise(ten, all_noise);
    EXPECT_EQ(resolved.n_clusters, 1);
    expect_partition(resolved, 10);
}

TEST(AgglomerativeMerge, WardPicksCheapestPair) {
    Eigen::MatrixXd p(3, 1);
    p << 0, 1, 10;
    const ClusterAssignment a{{0, 1, 2}, 3};
    const auto merged = agglomerative_merge_to_k(p, a, 2);
    EXPECT_EQ(merged.n_clusters, 2);
    EXPECT_EQ(merged.labels[0], merged.labels[1]);
    EXPECT_NE(merged.labels[0], merged.labels[2]);
    EXPECT_EQ(merged.labels[0], 0);  // larger cluster first
}

TEST(AgglomerativeMerge, ZeroMergesOnlyRelabels) {
    Eigen::MatrixXd p(4, 1);
    p << 0, 5, 6, 7;
    const ClusterAssignment a{{0, 1, 1, 1}, 2};
    const auto same = agglomerative_merge_to_k(p, a, 2);
    EXPECT_EQ(same.labels, (std::vector<int>{1, 0, 0, 0}));
    try {
        agglomerative_merge_to_k(p, a, 3);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::KExceedsClusters);
    }
}

TEST(AgglomerativeMerge, CoarseningProperty) {
    std::vector<std::vector<double>> centers;
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(-20, 20);
    for (int c = 0; c < 20; ++c) centers.push_back({u(rng), u(rng), u(rng)});
    const auto blobs = oracle::gaussian_blobs(centers, 10, 0.2, 2);
    const ClusterAssignment initial = densify_labels(blobs.labels);
    EXPECT_EQ(agglomerative_merge_to_k(blobs.points, initial, 20).n_clusters, 20);
    for (const std::size_t k : {1u, 3u, 7u, 19u}) {
        const auto merged = agglomerative_merge_to_k(blobs.points, initial, k);
        EXPECT_EQ(merged.n_clusters, static_cast<int>(k));
        expect_partition(merged, blobs.labels.size());
        std::map<int, int> image;
        for (std::size_t i = 0; i < blobs.labels.size(); ++i) {
            const auto [it, inserted] = image.emplace(initial.labels[i], merged.labels[i]);
            EXPECT_EQ(it->second, merged.labels[i]) << "input cluster split across outputs";
        }
    }
}

TEST(KMeans, SingleClusterCentroidIsMean) {
    const auto p = uniform_points(37, 4, 2);
    const auto r = kmeans_cluster(p, 1, 5);
    expect_partition(r.assignment, 37);
    EXPECT_LT((r.centroids[0] - p.colwise().mean().transpose()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(KMeans, SaturationGivesZeroInertia) {
    const auto p = uniform_points(12, 3, 4);
    const auto r = kmeans_cluster(p, 12, 8);
    EXPECT_EQ(r.assignment.n_clusters, 12);
    EXPECT_EQ(r.inertia(), 0.0);
}

TEST(KMeans, RecoversFiveBlobs) {
    const auto blobs = oracle::gaussian_blobs({{0, 0}, {10, 0}, {0, 10}, {10, 10}, {5, 20}}, 40, 0.5, 6);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto r = kmeans_cluster(blobs.points, 5, seed);
        EXPECT_NEAR(oracle::adjusted_rand_index(r.assignment.labels, blobs.labels), 1.0, 1e-12) << "seed " << seed;
    }
}

TEST(KMeans, InertiaNeverIncreasesAndIsDeterministic) {
    const auto p = uniform_points(300, 2, 12);
    for (const std::size_t k : {2u, 5u, 9u}) {
        const auto r = kmeans_cluster(p, k, 3);
        for (std::size_t i = 1; i < r.inertia_history.size(); ++i) {
            EXPECT_LE(r.inertia_history[i], r.inertia_history[i - 1] + 1e-12);
        }
        const auto again = kmeans_cluster(p, k, 3);
        EXPECT_EQ(r.assignment, again.assignment);
        EXPECT_EQ(r.inertia_history, again.inertia_history);
        expect_partition(r.assignment, 300);
    }
    EXPECT_THROW(kmeans_cluster(p.topRows(2), 3, 0), Error);
}

TEST(KMeans, DuplicatePointsStillPartition) {
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(6, 2);
    p(5, 0) = 1.0;
    const auto r = kmeans_cluster(p, 3, 1);
    EXPECT_EQ(r.assignment.labels.size(), 6u);
    for (const int l : r.assignment.labels) EXPECT_GE(l, 0);
}

TEST(DensifyLabels, SizeThenFirstMember) {
    const auto a = densify_labels({5, 2, 2, 5, 9, kNoise});
    EXPECT_EQ(a.labels, (std::vector<int>{0, 1, 1, 0, 2, kNoise}));
    EXPECT_EQ(a.n_clusters, 3);
}
