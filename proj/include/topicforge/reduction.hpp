#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include "topicforge/embedding.hpp"
#include "topicforge/error.hpp"

namespace topicforge {

/// Dense N x d point set in the clustering space.
using PointMatrix = Eigen::MatrixXd;

enum class ReducerKind { pca_like, umap };

inline std::string to_string(ReducerKind kind) { return kind == ReducerKind::umap ? "umap" : "pca_like"; }

inline ReducerKind reducer_kind_from_string(const std::string& s) {
    if (s == "pca_like") return ReducerKind::pca_like;
    if (s == "umap") return ReducerKind::umap;
    throw Error(ErrorCode::InvalidConfig, "unknown reducer kind '" + s + "'");
}

struct ReducerConfig {
    ReducerKind kind = ReducerKind::pca_like;
    std::size_t target_dim = 5;
    std::uint64_t random_seed = 42;
    std::size_t umap_n_neighbors = 15;
    double umap_min_dist = 0.0;
    std::size_t umap_epochs = 200;

    void validate(std::size_t n, std::size_t dim) const {
        if (target_dim < 2) throw Error(ErrorCode::InvalidConfig, "target_dim must be >= 2");
        if (target_dim > dim) {
            throw Error(ErrorCode::InvalidConfig, "target_dim " + std::to_string(target_dim) +
                                                      " exceeds embedding dimension " + std::to_string(dim));
        }
        if (target_dim > n) {
            throw Error(ErrorCode::InvalidConfig, "target_dim " + std::to_string(target_dim) +
                                                      " exceeds document count " + std::to_string(n));
        }
        if (kind == ReducerKind::umap && (umap_n_neighbors < 2 || umap_min_dist < 0.0)) {
            throw Error(ErrorCode::InvalidConfig, "umap needs n_neighbors >= 2 and min_dist >= 0");
        }
    }
};

namespace detail {

inline Eigen::MatrixXd to_eigen(const EmbeddingMatrix& m) {
    Eigen::MatrixXd out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto row = m.row(i);
        for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = row[j];
    }
    return out;
}

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        std::vector<double> r(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index j = 0; j < m.cols(); ++j) r[j] = m(i, j);
        rows.push_back(std::move(r));
    }
    return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    const auto rows = j.size();
    const auto cols = rows == 0 ? 0 : j[0].size();
    Eigen::MatrixXd m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        if (j[r].size() != cols) throw Error(ErrorCode::CorruptState, "ragged matrix in reducer model");
        for (std::size_t c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
    }
    return m;
}

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

/// Centered projection onto the top `d` right singular vectors. Each singular
/// vector is oriented so its largest-magnitude entry (first on ties) is positive.
struct LinearProjection {
    Eigen::VectorXd mean;
    Eigen::MatrixXd basis;  // D x d

    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
        return (x.rowwise() - mean.transpose()) * basis;
    }

    static LinearProjection fit(const Eigen::MatrixXd& x, std::size_t d) {
        const auto n = x.rows();
        if (n < 2) throw Error(ErrorCode::RankDeficient, "need at least 2 rows to reduce");
        LinearProjection p;
        p.mean = x.colwise().mean().transpose();
        const Eigen::MatrixXd centered = x.rowwise() - p.mean.transpose();
        Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
        const auto& s = svd.singularValues();
        const double tol = s.size() == 0 ? 0.0
                                         : static_cast<double>(std::max(x.rows(), x.cols())) *
                                               std::numeric_limits<double>::epsilon() * std::max(s(0), 1e-300);
        Eigen::Index rank = 0;
        for (Eigen::Index i = 0; i < s.size(); ++i) {
            if (s(i) > tol && s(i) > 1e-12) ++rank;
        }
        if (rank < static_cast<Eigen::Index>(d)) {
            throw Error(ErrorCode::RankDeficient, "only " + std::to_string(rank) +
                                                      " non-trivial components, need " + std::to_string(d));
        }
        p.basis = svd.matrixV().leftCols(static_cast<Eigen::Index>(d));
        for (Eigen::Index c = 0; c < p.basis.cols(); ++c) {
            Eigen::Index best = 0;
            for (Eigen::Index r = 1; r < p.basis.rows(); ++r) {
                if (std::abs(p.basis(r, c)) > std::abs(p.basis(best, c))) best = r;
            }
            if (p.basis(best, c) < 0) p.basis.col(c) *= -1.0;
        }
        return p;
    }
};

}  // namespace detail

/// Fitted map from embedding space to the clustering space.
struct ReducerModel {
    ReducerKind kind = ReducerKind::pca_like;
    std::size_t target_dim = 0;
    detail::LinearProjection projection;  // pca_like output map, or umap pre-reduction
    // umap only
    Eigen::MatrixXd training_inputs;  // pre-reduced training rows
    Eigen::MatrixXd training_coordinates;
    std::size_t n_neighbors = 15;

    nlohmann::json to_json() const {
        nlohmann::json j = {{"kind", to_string(kind)},
                            {"target_dim", target_dim},
                            {"mean", detail::vector_to_json(projection.mean)},
                            {"projection", detail::matrix_to_json(projection.basis)}};
        if (kind == ReducerKind::umap) {
            j["n_neighbors"] = n_neighbors;
            j["training_inputs"] = detail::matrix_to_json(training_inputs);
            j["training_coordinates"] = detail::matrix_to_json(training_coordinates);
        }
        return j;
    }

    static ReducerModel from_json(const nlohmann::json& j) {
        ReducerModel m;
        m.kind = reducer_kind_from_string(j.at("kind").get<std::string>());
        m.target_dim = j.at("target_dim").get<std::size_t>();
        m.projection.mean = detail::vector_from_json(j.at("mean"));
        m.projection.basis = detail::matrix_from_json(j.at("projection"));
        if (m.kind == ReducerKind::umap) {
            m.n_neighbors = j.at("n_neighbors").get<std::size_t>();
            m.training_inputs = detail::matrix_from_json(j.at("training_inputs"));
            m.training_coordinates = detail::matrix_from_json(j.at("training_coordinates"));
        }
        return m;
    }
};

struct ReductionResult {
    PointMatrix coordinates;  // N x d
    ReducerModel model;
};

namespace detail {

/// Distances to the k nearest rows of `data` (excluding `skip`), ascending.
inline std::vector<std::pair<double, Eigen::Index>> nearest_rows(const Eigen::MatrixXd& data,
                                                                 const Eigen::VectorXd& point, std::size_t k,
                                                                 Eigen::Index skip = -1) {
    std::vector<std::pair<double, Eigen::Index>> dist;
    dist.reserve(static_cast<std::size_t>(data.rows()));
    for (Eigen::Index j = 0; j < data.rows(); ++j) {
        if (j == skip) continue;
        dist.emplace_back((data.row(j).transpose() - point).norm(), j);
    }
    const auto take = std::min<std::size_t>(k, dist.size());
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(take), dist.end());
    dist.resize(take);
    return dist;
}

/// Smooth-kNN membership strengths exp(-(d - rho) / sigma), with sigma chosen
/// so that they sum to log2(k).
inline std::vector<double> fuzzy_memberships(const std::vector<std::pair<double, Eigen::Index>>& nn) {
    std::vector<double> w(nn.size(), 0.0);
    if (nn.empty()) return w;
    double rho = 0.0;
    for (const auto& [d, _] : nn) {
        if (d > 0.0) {
            rho = d;
            break;
        }
    }
    const double target = std::log2(static_cast<double>(std::max<std::size_t>(nn.size(), 2)));
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    double sigma = 1.0;
    for (int iter = 0; iter < 64; ++iter) {
        double sum = 0.0;
        for (const auto& [d, _] : nn) sum += std::exp(-std::max(0.0, d - rho) / sigma);
        if (std::abs(sum - target) < 1e-5) break;
        if (sum > target) {
            hi = sigma;
            sigma = (lo + hi) / 2.0;
        } else {
            lo = sigma;
            sigma = std::isinf(hi) ? sigma * 2.0 : (lo + hi) / 2.0;
        }
    }
    for (std::size_t i = 0; i < nn.size(); ++i) w[i] = std::exp(-std::max(0.0, nn[i].first - rho) / sigma);
    return w;
}

/// Least-squares fit of 1 / (1 + a x^(2b)) to the min_dist-offset exponential
/// (spread 1), by coarse-to-fine grid search.
inline std::pair<double, double> fit_curve(double min_dist) {
    std::vector<double> xs;
    for (int i = 1; i <= 300; ++i) xs.push_back(3.0 * i / 300.0);
    const auto loss = [&](double a, double b) {
        double total = 0.0;
        for (const double x : xs) {
            const double target = x < min_dist ? 1.0 : std::exp(-(x - min_dist));
            const double y = 1.0 / (1.0 + a * std::pow(x, 2.0 * b));
            total += (y - target) * (y - target);
        }
        return total;
    };
    double best_a = 1.0, best_b = 1.0, best = loss(1.0, 1.0);
    double span_a = 4.0, span_b = 1.0;
    for (int round = 0; round < 6; ++round) {
        const double ca = best_a, cb = best_b;
        for (int i = -10; i <= 10; ++i) {
            for (int j = -10; j <= 10; ++j) {
                const double a = ca + span_a * i / 10.0;
                const double b = cb + span_b * j / 10.0;
                if (a <= 0.01 || b <= 0.05) continue;
                const double l = loss(a, b);
                if (l < best) {
                    best = l;
                    best_a = a;
                    best_b = b;
                }
            }
        }
        span_a /= 5.0;
        span_b /= 5.0;
    }
    return {best_a, best_b};
}

inline ReductionResult fit_umap(const Eigen::MatrixXd& x, const ReducerConfig& cfg) {
    const auto n = static_cast<std::size_t>(x.rows());
    ReducerModel model;
    model.kind = ReducerKind::umap;
    model.target_dim = cfg.target_dim;
    model.n_neighbors = std::min(cfg.umap_n_neighbors, n - 1);

    // Neighbor search runs on a linear pre-reduction to at most 50 dimensions.
    Eigen::BDCSVD<Eigen::MatrixXd> probe(x.rowwise() - x.colwise().mean(), 0);
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < probe.singularValues().size(); ++i) {
        if (probe.singularValues()(i) > 1e-12) ++rank;
    }
    const auto pre_dim = static_cast<std::size_t>(std::min<Eigen::Index>(rank, 50));
    if (pre_dim < cfg.target_dim) {
        throw Error(ErrorCode::RankDeficient, "only " + std::to_string(rank) + " non-trivial components");
    }
    model.projection = LinearProjection::fit(x, pre_dim);
    model.training_inputs = model.projection.apply(x);
    const auto& inputs = model.training_inputs;

    // Symmetrized fuzzy neighbor graph.
    std::vector<std::vector<std::pair<std::size_t, double>>> directed(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto nn = nearest_rows(inputs, inputs.row(static_cast<Eigen::Index>(i)).transpose(),
                                     model.n_neighbors, static_cast<Eigen::Index>(i));
        const auto w = fuzzy_memberships(nn);
        for (std::size_t t = 0; t < nn.size(); ++t) directed[i].emplace_back(nn[t].second, w[t]);
    }
    std::map<std::pair<std::size_t, std::size_t>, double> sym;
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto& [j, w] : directed[i]) {
            const auto key = std::minmax(i, j);
            auto& slot = sym[{key.first, key.second}];
            slot = slot + w - slot * w;
        }
    }
    struct Edge {
        std::size_t a, b;
        double weight;
    };
    std::vector<Edge> edges;
    double max_w = 0.0;
    for (const auto& [key, w] : sym) {
        edges.push_back({key.first, key.second, w});
        max_w = std::max(max_w, w);
    }

    // Initialize from the leading principal directions, scaled to [0, 10].
    Eigen::MatrixXd y = inputs.leftCols(static_cast<Eigen::Index>(cfg.target_dim));
    for (Eigen::Index c = 0; c < y.cols(); ++c) {
        const double lo = y.col(c).minCoeff();
        const double range = std::max(y.col(c).maxCoeff() - lo, 1e-12);
        y.col(c) = (y.col(c).array() - lo) * (10.0 / range);
    }

    const auto [a, b] = fit_curve(cfg.umap_min_dist);
    std::mt19937_64 rng(cfg.random_seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    const auto clip = [](double v) { return std::clamp(v, -4.0, 4.0); };
    constexpr int kNegativeSamples = 5;
    for (std::size_t epoch = 0; epoch < cfg.umap_epochs; ++epoch) {
        const double alpha = 1.0 - static_cast<double>(epoch) / static_cast<double>(cfg.umap_epochs);
        for (const auto& e : edges) {
            if (unit(rng) > e.weight / max_w) continue;
            auto yi = y.row(static_cast<Eigen::Index>(e.a));
            auto yj = y.row(static_cast<Eigen::Index>(e.b));
            const Eigen::RowVectorXd diff = yi - yj;
            const double d2 = diff.squaredNorm();
            if (d2 > 0.0) {
                const double coeff = (-2.0 * a * b * std::pow(d2, b - 1.0)) / (1.0 + a * std::pow(d2, b));
                for (Eigen::Index c = 0; c < y.cols(); ++c) {
                    const double g = clip(coeff * diff(c)) * alpha;
                    yi(c) += g;
                    yj(c) -= g;
                }
            }
            for (int s = 0; s < kNegativeSamples; ++s) {
                const auto k = pick(rng);
                if (k == e.a) continue;
                const Eigen::RowVectorXd nd = y.row(static_cast<Eigen::Index>(e.a)) - y.row(static_cast<Eigen::Index>(k));
                const double nd2 = nd.squaredNorm();
                const double coeff = nd2 > 0.0 ? 2.0 * b / ((0.001 + nd2) * (1.0 + a * std::pow(nd2, b))) : 0.0;
                for (Eigen::Index c = 0; c < y.cols(); ++c) {
                    const double g = nd2 > 0.0 ? clip(coeff * nd(c)) : 4.0;
                    y(static_cast<Eigen::Index>(e.a), c) += g * alpha;
                }
            }
        }
    }
    model.training_coordinates = y;
    return {y, model};
}

}  // namespace detail

inline ReductionResult fit_reduce(const EmbeddingMatrix& matrix, const ReducerConfig& cfg) {
    cfg.validate(matrix.rows(), matrix.cols());
    const Eigen::MatrixXd x = detail::to_eigen(matrix);
    if (cfg.kind == ReducerKind::umap) return detail::fit_umap(x, cfg);
    ReductionResult result;
    result.model.kind = ReducerKind::pca_like;
    result.model.target_dim = cfg.target_dim;
    result.model.projection = detail::LinearProjection::fit(x, cfg.target_dim);
    result.coordinates = result.model.projection.apply(x);
    return result;
}

/// Places new vectors in the fitted space: projection for pca_like,
/// membership-weighted average of the nearest training points for umap.
inline PointMatrix transform(const ReducerModel& model, const std::vector<Vector>& vectors) {
    const auto dim = model.projection.mean.size();
    Eigen::MatrixXd x(static_cast<Eigen::Index>(vectors.size()), dim);
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        if (static_cast<Eigen::Index>(vectors[i].size()) != dim) {
            throw Error(ErrorCode::DimensionMismatch, "vector of dimension " + std::to_string(vectors[i].size()) +
                                                          ", model expects " + std::to_string(dim));
        }
        x.row(static_cast<Eigen::Index>(i)) =
            Eigen::Map<const Eigen::RowVectorXd>(vectors[i].data(), static_cast<Eigen::Index>(vectors[i].size()));
    }
    const Eigen::MatrixXd projected = model.projection.apply(x);
    if (model.kind == ReducerKind::pca_like) return projected;

    PointMatrix out(projected.rows(), static_cast<Eigen::Index>(model.target_dim));
    for (Eigen::Index i = 0; i < projected.rows(); ++i) {
        const auto nn = detail::nearest_rows(model.training_inputs, projected.row(i).transpose(), model.n_neighbors);
        const auto w = detail::fuzzy_memberships(nn);
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(out.cols());
        double total = 0.0;
        for (std::size_t t = 0; t < nn.size(); ++t) {
            acc += w[t] * model.training_coordinates.row(nn[t].second);
            total += w[t];
        }
        out.row(i) = total > 0.0 ? Eigen::RowVectorXd(acc / total)
                                 : Eigen::RowVectorXd(model.training_coordinates.row(nn.front().second));
    }
    return out;
}

}  // namespace topicforge
