#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "topicforge/error.hpp"
#include "topicforge/reduction.hpp"

namespace topicforge {

inline constexpr int kNoise = -1;

struct ClusterAssignment {
    std::vector<int> labels;  // one per row; kNoise before resolution
    int n_clusters = 0;

    bool has_noise() const { return std::find(labels.begin(), labels.end(), kNoise) != labels.end(); }
    bool operator==(const ClusterAssignment&) const = default;
};

/// Relabels clusters 0..k-1 by descending size, ties by smallest member row.
/// Noise labels stay noise. Returns the old -> new label map in `mapping`.
inline ClusterAssignment densify_labels(const std::vector<int>& labels, std::vector<int>* mapping = nullptr) {
    int max_label = -1;
    for (const int l : labels) max_label = std::max(max_label, l);
    std::vector<std::size_t> size(static_cast<std::size_t>(max_label + 1), 0);
    std::vector<std::size_t> first(static_cast<std::size_t>(max_label + 1), std::numeric_limits<std::size_t>::max());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0) continue;
        const auto l = static_cast<std::size_t>(labels[i]);
        ++size[l];
        first[l] = std::min(first[l], i);
    }
    std::vector<int> present;
    for (int l = 0; l <= max_label; ++l) {
        if (size[static_cast<std::size_t>(l)] > 0) present.push_back(l);
    }
    std::sort(present.begin(), present.end(), [&](int a, int b) {
        const auto ua = static_cast<std::size_t>(a), ub = static_cast<std::size_t>(b);
        return size[ua] != size[ub] ? size[ua] > size[ub] : first[ua] < first[ub];
    });
    std::vector<int> remap(static_cast<std::size_t>(max_label + 1), kNoise);
    for (std::size_t r = 0; r < present.size(); ++r) remap[static_cast<std::size_t>(present[r])] = static_cast<int>(r);
    ClusterAssignment out;
    out.n_clusters = static_cast<int>(present.size());
    out.labels.reserve(labels.size());
    for (const int l : labels) out.labels.push_back(l < 0 ? kNoise : remap[static_cast<std::size_t>(l)]);
    if (mapping) *mapping = std::move(remap);
    return out;
}

namespace detail {

struct UnionFind {
    explicit UnionFind(std::size_t n) : parent(n), size(n, 1) { std::iota(parent.begin(), parent.end(), 0); }
    std::size_t find(std::size_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }
    std::vector<std::size_t> parent;
    std::vector<std::size_t> size;
};

struct CondensedEdge {
    std::size_t parent;  // cluster id (>= n)
    std::size_t child;   // point id (< n) or cluster id
    double lambda;
    std::size_t child_size;
};

inline double to_lambda(double distance) { return distance > 0.0 ? 1.0 / distance : 1e300; }

}  // namespace detail

/// Hierarchical density clustering: core distances over min_samples =
/// min_cluster_size neighbors (self included), mutual-reachability minimum
/// spanning tree, condensed tree, and excess-of-mass selection (the root is
/// never selected). Points outside every selected cluster are kNoise.
inline ClusterAssignment hdbscan_cluster(const PointMatrix& points, std::size_t min_cluster_size) {
    const auto n = static_cast<std::size_t>(points.rows());
    if (min_cluster_size < 2) throw Error(ErrorCode::InvalidArgument, "min_cluster_size must be >= 2");
    if (n < min_cluster_size) {
        throw Error(ErrorCode::TooFewPoints, std::to_string(n) + " points, min_cluster_size " +
                                                 std::to_string(min_cluster_size));
    }
    const auto distance = [&](std::size_t i, std::size_t j) {
        return (points.row(static_cast<Eigen::Index>(i)) - points.row(static_cast<Eigen::Index>(j))).norm();
    };

    // Core distance: distance to the (min_samples - 1)-th nearest other point.
    const std::size_t kth = min_cluster_size - 1;
    std::vector<double> core(n, 0.0);
    {
        std::vector<double> d(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) d[j] = distance(i, j);
            std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(kth), d.end());
            core[i] = d[kth];
        }
    }
    const auto mutual_reach = [&](std::size_t i, std::size_t j) {
        return std::max({core[i], core[j], distance(i, j)});
    };

    // Prim's algorithm on the dense mutual-reachability graph.
    struct MstEdge {
        std::size_t a, b;
        double w;
    };
    std::vector<MstEdge> mst;
    mst.reserve(n - 1);
    {
        std::vector<char> in_tree(n, 0);
        std::vector<double> best(n, std::numeric_limits<double>::infinity());
        std::vector<std::size_t> from(n, 0);
        std::size_t current = 0;
        in_tree[0] = 1;
        for (std::size_t step = 1; step < n; ++step) {
            for (std::size_t j = 0; j < n; ++j) {
                if (in_tree[j]) continue;
                const double w = mutual_reach(current, j);
                if (w < best[j] || (w == best[j] && current < from[j])) {
                    best[j] = w;
                    from[j] = current;
                }
            }
            std::size_t next = n;
            for (std::size_t j = 0; j < n; ++j) {
                if (!in_tree[j] && (next == n || best[j] < best[next])) next = j;
            }
            in_tree[next] = 1;
            mst.push_back({std::min(from[next], next), std::max(from[next], next), best[next]});
            current = next;
        }
    }
    std::sort(mst.begin(), mst.end(), [](const MstEdge& x, const MstEdge& y) {
        if (x.w != y.w) return x.w < y.w;
        if (x.a != y.a) return x.a < y.a;
        return x.b < y.b;
    });

    // Single-linkage dendrogram: node n + i is the i-th merge.
    struct Merge {
        std::size_t left, right;
        double distance;
        std::size_t size;
    };
    std::vector<Merge> merges;
    merges.reserve(n - 1);
    {
        detail::UnionFind uf(2 * n);
        std::vector<std::size_t> node_of(2 * n);
        std::iota(node_of.begin(), node_of.end(), 0);
        std::vector<std::size_t> node_size(2 * n, 1);
        for (const auto& e : mst) {
            const auto ra = uf.find(e.a), rb = uf.find(e.b);
            const auto na = node_of[ra], nb = node_of[rb];
            const std::size_t id = n + merges.size();
            node_size[id] = node_size[na] + node_size[nb];
            merges.push_back({na, nb, e.w, node_size[id]});
            uf.parent[rb] = ra;
            node_of[ra] = id;
        }
    }
    const auto node_size = [&](std::size_t node) { return node < n ? std::size_t{1} : merges[node - n].size; };
    const auto points_under = [&](std::size_t node) {
        std::vector<std::size_t> out, stack{node};
        while (!stack.empty()) {
            const auto x = stack.back();
            stack.pop_back();
            if (x < n) {
                out.push_back(x);
            } else {
                stack.push_back(merges[x - n].left);
                stack.push_back(merges[x - n].right);
            }
        }
        return out;
    };

    // Condensed tree. Cluster ids start at n (the root); children get
    // increasing ids, so every child id exceeds its parent's.
    std::vector<detail::CondensedEdge> condensed;
    const std::size_t root_node = n + merges.size() - 1;
    std::size_t next_cluster = n + 1;
    {
        std::vector<std::pair<std::size_t, std::size_t>> stack{{n > 1 ? root_node : 0, n}};
        while (!stack.empty() && n > 1) {
            const auto [node, cluster] = stack.back();
            stack.pop_back();
            if (node < n) continue;
            const auto& m = merges[node - n];
            const double lambda = detail::to_lambda(m.distance);
            const bool left_big = node_size(m.left) >= min_cluster_size;
            const bool right_big = node_size(m.right) >= min_cluster_size;
            if (left_big && right_big) {
                for (const auto child : {m.left, m.right}) {
                    const auto id = next_cluster++;
                    condensed.push_back({cluster, id, lambda, node_size(child)});
                    stack.emplace_back(child, id);
                }
            } else {
                for (const auto child : {m.left, m.right}) {
                    const bool big = child == m.left ? left_big : right_big;
                    if (big) {
                        stack.emplace_back(child, cluster);
                    } else {
                        for (const auto p : points_under(child)) condensed.push_back({cluster, p, lambda, 1});
                    }
                }
            }
        }
    }

    const std::size_t n_cluster_ids = next_cluster - n;
    std::vector<double> birth(n_cluster_ids, 0.0);
    std::vector<std::size_t> parent_of(n_cluster_ids, 0);
    std::vector<std::vector<std::size_t>> children(n_cluster_ids);
    for (const auto& e : condensed) {
        if (e.child >= n) {
            birth[e.child - n] = e.lambda;
            parent_of[e.child - n] = e.parent - n;
            children[e.parent - n].push_back(e.child - n);
        }
    }
    std::vector<double> stability(n_cluster_ids, 0.0);
    for (const auto& e : condensed) {
        stability[e.parent - n] += (e.lambda - birth[e.parent - n]) * static_cast<double>(e.child_size);
    }

    // Excess-of-mass selection, children before parents.
    std::vector<char> selected(n_cluster_ids, 0);
    std::vector<double> subtree(n_cluster_ids, 0.0);
    for (std::size_t c = n_cluster_ids; c-- > 1;) {
        if (children[c].empty()) {
            selected[c] = 1;
            subtree[c] = stability[c];
            continue;
        }
        double child_sum = 0.0;
        for (const auto ch : children[c]) child_sum += subtree[ch];
        if (stability[c] < child_sum) {
            subtree[c] = child_sum;
        } else {
            subtree[c] = stability[c];
            selected[c] = 1;
            std::vector<std::size_t> stack(children[c].begin(), children[c].end());
            while (!stack.empty()) {
                const auto x = stack.back();
                stack.pop_back();
                selected[x] = 0;
                stack.insert(stack.end(), children[x].begin(), children[x].end());
            }
        }
    }

    std::vector<int> cluster_label(n_cluster_ids, kNoise);
    int label = 0;
    for (std::size_t c = 1; c < n_cluster_ids; ++c) {
        if (selected[c]) cluster_label[c] = label++;
    }
    std::vector<int> labels(n, kNoise);
    for (const auto& e : condensed) {
        if (e.child >= n) continue;
        for (std::size_t c = e.parent - n; c != 0; c = parent_of[c]) {
            if (selected[c]) {
                labels[e.child] = cluster_label[c];
                break;
            }
        }
    }
    return densify_labels(labels);
}

inline std::vector<Eigen::VectorXd> cluster_centroids(const PointMatrix& points, const ClusterAssignment& a) {
    std::vector<Eigen::VectorXd> sums(static_cast<std::size_t>(a.n_clusters), Eigen::VectorXd::Zero(points.cols()));
    std::vector<std::size_t> counts(static_cast<std::size_t>(a.n_clusters), 0);
    for (std::size_t i = 0; i < a.labels.size(); ++i) {
        if (a.labels[i] < 0) continue;
        sums[static_cast<std::size_t>(a.labels[i])] += points.row(static_cast<Eigen::Index>(i)).transpose();
        ++counts[static_cast<std::size_t>(a.labels[i])];
    }
    for (std::size_t c = 0; c < sums.size(); ++c) {
        if (counts[c] > 0) sums[c] /= static_cast<double>(counts[c]);
    }
    return sums;
}

/// Gives every noise point the label of the nearest cluster centroid
/// (Euclidean, ties to the lowest label). An all-noise input becomes a
/// single cluster 0.
inline ClusterAssignment resolve_noise(const PointMatrix& points, const ClusterAssignment& assignment) {
    if (!assignment.has_noise()) return assignment;
    ClusterAssignment out = assignment;
    if (assignment.n_clusters == 0) {
        std::fill(out.labels.begin(), out.labels.end(), 0);
        out.n_clusters = 1;
        return out;
    }
    const auto centroids = cluster_centroids(points, assignment);
    for (std::size_t i = 0; i < out.labels.size(); ++i) {
        if (out.labels[i] != kNoise) continue;
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < centroids.size(); ++c) {
            const double d = (points.row(static_cast<Eigen::Index>(i)).transpose() - centroids[c]).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(c);
            }
        }
        out.labels[i] = best;
    }
    return out;
}

/// Merges clusters pairwise by the smallest Ward increase
/// n_a n_b / (n_a + n_b) * |c_a - c_b|^2 until `k` remain, then relabels by
/// descending size. Ties go to the lexicographically smallest label pair.
inline ClusterAssignment agglomerative_merge_to_k(const PointMatrix& points, const ClusterAssignment& assignment,
                                                  std::size_t k) {
    if (assignment.has_noise()) throw Error(ErrorCode::InvalidArgument, "assignment must be noise-free");
    if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
    if (k > static_cast<std::size_t>(assignment.n_clusters)) {
        throw Error(ErrorCode::KExceedsClusters, "k=" + std::to_string(k) + " exceeds " +
                                                     std::to_string(assignment.n_clusters) + " clusters");
    }
    const auto c = static_cast<std::size_t>(assignment.n_clusters);
    auto centroids = cluster_centroids(points, assignment);
    std::vector<double> size(c, 0.0);
    for (const int l : assignment.labels) size[static_cast<std::size_t>(l)] += 1.0;
    std::vector<std::size_t> owner(c);  // cluster label -> surviving representative
    std::iota(owner.begin(), owner.end(), 0);
    std::vector<char> alive(c, 1);

    for (std::size_t remaining = c; remaining > k; --remaining) {
        std::size_t best_a = 0, best_b = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < c; ++a) {
            if (!alive[a]) continue;
            for (std::size_t b = a + 1; b < c; ++b) {
                if (!alive[b]) continue;
                const double delta = size[a] * size[b] / (size[a] + size[b]) * (centroids[a] - centroids[b]).squaredNorm();
                if (delta < best) {
                    best = delta;
                    best_a = a;
                    best_b = b;
                }
            }
        }
        centroids[best_a] = (size[best_a] * centroids[best_a] + size[best_b] * centroids[best_b]) /
                            (size[best_a] + size[best_b]);
        size[best_a] += size[best_b];
        alive[best_b] = 0;
        for (auto& o : owner) {
            if (o == best_b) o = best_a;
        }
    }
    std::vector<int> labels;
    labels.reserve(assignment.labels.size());
    for (const int l : assignment.labels) labels.push_back(static_cast<int>(owner[static_cast<std::size_t>(l)]));
    return densify_labels(labels);
}

struct KMeansResult {
    ClusterAssignment assignment;
    std::vector<Eigen::VectorXd> centroids;  // indexed by final label
    std::vector<double> inertia_history;     // after each assignment step
    std::size_t iterations = 0;

    double inertia() const { return inertia_history.empty() ? 0.0 : inertia_history.back(); }
};

namespace detail {

inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace detail

/// Lloyd's algorithm with k-means++ seeding. Stops when assignments stop
/// changing or after max_iter assignment steps. An empty cluster is reseeded
/// at the point farthest from its current centroid.
inline KMeansResult kmeans_cluster(const PointMatrix& points, std::size_t k, std::uint64_t seed,
                                   std::size_t max_iter = 300) {
    const auto n = static_cast<std::size_t>(points.rows());
    if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
    if (n < k) throw Error(ErrorCode::TooFewPoints, std::to_string(n) + " points for k=" + std::to_string(k));
    if (max_iter < 1) throw Error(ErrorCode::InvalidArgument, "max_iter must be >= 1");
    const auto row = [&](std::size_t i) { return points.row(static_cast<Eigen::Index>(i)).transpose(); };

    std::mt19937_64 rng(seed);
    std::vector<Eigen::VectorXd> centers;
    std::vector<char> chosen(n, 0);
    const auto first = static_cast<std::size_t>(rng() % n);
    centers.push_back(row(first));
    chosen[first] = 1;
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) d2[i] = (row(i) - centers[0]).squaredNorm();
    while (centers.size() < k) {
        const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        std::size_t pick = n;
        if (total > 0.0) {
            const double target = detail::uniform01(rng) * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (d2[i] > 0.0 && acc >= target) {
                    pick = i;
                    break;
                }
            }
            if (pick == n) {
                for (std::size_t i = n; i-- > 0;) {
                    if (d2[i] > 0.0) {
                        pick = i;
                        break;
                    }
                }
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                if (!chosen[i]) {
                    pick = i;
                    break;
                }
            }
        }
        chosen[pick] = 1;
        centers.push_back(row(pick));
        for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], (row(i) - centers.back()).squaredNorm());
    }

    KMeansResult result;
    std::vector<int> labels(n, -1);
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        bool changed = false;
        double inertia = 0.0;
        std::vector<double> own_d2(n);
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                const double d = (row(i) - centers[c]).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = static_cast<int>(c);
                }
            }
            if (labels[i] != best) changed = true;
            labels[i] = best;
            own_d2[i] = best_d;
            inertia += best_d;
        }
        result.inertia_history.push_back(inertia);
        result.iterations = iter + 1;
        if (!changed && iter > 0) break;

        std::vector<Eigen::VectorXd> sums(k, Eigen::VectorXd::Zero(points.cols()));
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            sums[static_cast<std::size_t>(labels[i])] += row(i);
            ++counts[static_cast<std::size_t>(labels[i])];
        }
        std::vector<char> taken(n, 0);
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] > 0) {
                centers[c] = sums[c] / static_cast<double>(counts[c]);
                continue;
            }
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (!taken[i] && own_d2[i] > far_d) {
                    far_d = own_d2[i];
                    far = i;
                }
            }
            taken[far] = 1;
            centers[c] = row(far);
            changed = true;
        }
        if (iter + 1 == max_iter) break;
    }
    // Final assignment against the last centers.
    {
        double inertia = 0.0;
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                const double d = (row(i) - centers[c]).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = static_cast<int>(c);
                }
            }
            changed |= labels[i] != best;
            labels[i] = best;
            inertia += best_d;
        }
        if (changed) result.inertia_history.push_back(inertia);
    }

    std::vector<int> mapping;
    result.assignment = densify_labels(labels, &mapping);
    result.centroids.assign(static_cast<std::size_t>(result.assignment.n_clusters), Eigen::VectorXd());
    for (std::size_t c = 0; c < k; ++c) {
        if (mapping.size() > c && mapping[c] >= 0) result.centroids[static_cast<std::size_t>(mapping[c])] = centers[c];
    }
    return result;
}

/// Default HDBSCAN minimum cluster size for a corpus of n documents.
inline std::size_t default_min_cluster_size(std::size_t n) { return std::max<std::size_t>(15, n / 500); }

}  // namespace topicforge
