#ifndef MODESWITCH_PACMAP_HPP
#define MODESWITCH_PACMAP_HPP

#include "error.hpp"
#include "parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

/**
 * @file pacmap.hpp
 *
 * @brief Pairwise controlled manifold approximation (PaCMAP) to two dimensions.
 *
 * Three pair sets drive the layout: neighbors (attracted strongly), mid-near pairs
 * (attracted weakly, preserve global structure) and further pairs (repelled). With
 * d = ||y_i - y_j||^2 the loss is
 *
 *     w_NB sum d/(10 + d) + w_MN sum d/(10000 + d) + w_FP sum 1/(1 + d)
 *
 * and the weights follow a three-phase schedule.
 */

namespace modeswitch::pacmap {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Coords = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;
using Pair = std::pair<int, int>;

struct PairSets {
    std::vector<Pair> neighbor_pairs;
    std::vector<Pair> mid_near_pairs;
    std::vector<Pair> further_pairs;
    /** Set when some point had a zero scale and unscaled distances were used for it. */
    bool degenerate_scale = false;
};

struct PhaseWeights {
    double w_nb = 0;
    double w_mn = 0;
    double w_fp = 0;

    bool operator==(const PhaseWeights&) const = default;
};

struct Schedule {
    /** Fraction of iterations in phase 1 (mid-near weight anneals from `mn_start` to `mn_end`). */
    double phase1_fraction = 0.1;
    /** Fraction of iterations in phase 2. */
    double phase2_fraction = 0.3;
    double mn_start = 1000.0;
    double mn_end = 3.0;
};

struct Config {
    int n_neighbors = 10;
    double mn_ratio = 0.5;
    double fp_ratio = 2.0;
    int iters = 450;
    std::uint64_t seed = 0;
    double learning_rate = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;
    /** Standard deviation of the first initial coordinate. */
    double init_scale = 0.01;
    Schedule schedule{};
    int threads = default_thread_count();
};

struct EmbeddingResult {
    Coords coordinates;
    std::vector<double> loss_history;
    Config config;
    PairSets pairs;
};

/** Squared distance scaled by the two local scales. Throws DegenerateScale for a zero scale. */
inline double scaled_distance(const Eigen::Ref<const Eigen::VectorXd>& xi, const Eigen::Ref<const Eigen::VectorXd>& xj,
                              double sigma_i, double sigma_j) {
    if (!(sigma_i > 0) || !(sigma_j > 0)) {
        fail(ErrorKind::DegenerateScale, "local scale is zero");
    }
    return (xi - xj).squaredNorm() / (sigma_i * sigma_j);
}

namespace detail {

inline void squared_distances_from(const Matrix& data, Eigen::Index i, std::vector<double>& out) {
    const Eigen::Index n = data.rows();
    out.resize(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < n; ++j) {
        out[static_cast<std::size_t>(j)] = (data.row(i) - data.row(j)).squaredNorm();
    }
}

/** Indices of the k smallest entries of `d`, skipping `self`; ties by index. */
inline std::vector<int> k_smallest(const std::vector<double>& d, int self, int k) {
    std::vector<int> idx;
    idx.reserve(d.size());
    for (int j = 0; j < static_cast<int>(d.size()); ++j) {
        if (j != self) {
            idx.push_back(j);
        }
    }
    k = std::min<int>(k, static_cast<int>(idx.size()));
    auto less = [&](int a, int b) { return d[a] != d[b] ? d[a] < d[b] : a < b; };
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), less);
    idx.resize(static_cast<std::size_t>(k));
    return idx;
}

inline std::mt19937_64 point_rng(std::uint64_t seed, int i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i), 0x9ac3u};
    return std::mt19937_64(seq);
}

} // namespace detail

/**
 * Local scale of every point: mean Euclidean distance to its 4th, 5th and 6th nearest
 * neighbors. With fewer than six other points the available ranks from the 4th on are
 * used, or the farthest point if there are fewer than four.
 */
inline std::vector<double> local_scales(const Matrix& data, int threads = default_thread_count()) {
    const Eigen::Index n = data.rows();
    std::vector<double> sigma(static_cast<std::size_t>(n), 0.0);
    if (n < 2) {
        return sigma;
    }
    parallel_for(
        static_cast<std::size_t>(n),
        [&](std::size_t i) {
            std::vector<double> d;
            detail::squared_distances_from(data, static_cast<Eigen::Index>(i), d);
            const auto nn = detail::k_smallest(d, static_cast<int>(i), 6);
            const std::size_t first = std::min<std::size_t>(3, nn.size() - 1);
            double total = 0;
            for (std::size_t r = first; r < nn.size(); ++r) {
                total += std::sqrt(d[static_cast<std::size_t>(nn[r])]);
            }
            sigma[i] = total / static_cast<double>(nn.size() - first);
        },
        threads);
    return sigma;
}

/**
 * Build the three pair sets. Neighbors are the `n_neighbors` nearest points by scaled
 * distance. Each mid-near pair samples six random other points and keeps the second
 * nearest. Further pairs are drawn uniformly from non-neighbors. Deterministic given seed.
 */
inline PairSets build_pairs(const Matrix& data, int n_neighbors, double mn_ratio, double fp_ratio, std::uint64_t seed,
                            int threads = default_thread_count()) {
    const int n = static_cast<int>(data.rows());
    if (n_neighbors < 1) {
        fail(ErrorKind::InvalidArgument, "n_neighbors must be >= 1");
    }
    if (n < n_neighbors + 1) {
        fail(ErrorKind::InsufficientData, "need at least n_neighbors + 1 = " + std::to_string(n_neighbors + 1) +
                                              " points, got " + std::to_string(n));
    }
    if (!data.allFinite()) {
        fail(ErrorKind::InvalidArgument, "data contains non-finite values");
    }
    const int n_mn = static_cast<int>(std::ceil(mn_ratio * n_neighbors));
    const int n_fp = static_cast<int>(std::ceil(fp_ratio * n_neighbors));
    const auto sigma = local_scales(data, threads);
    const bool degenerate = std::any_of(sigma.begin(), sigma.end(), [](double s) { return !(s > 0); });

    std::vector<std::vector<int>> nb(static_cast<std::size_t>(n)), mn(nb.size()), fp(nb.size());
    parallel_for(
        static_cast<std::size_t>(n),
        [&](std::size_t ui) {
            const int i = static_cast<int>(ui);
            std::vector<double> d;
            detail::squared_distances_from(data, i, d);
            std::vector<double> scaled(d.size());
            for (std::size_t j = 0; j < d.size(); ++j) {
                const double si = sigma[ui], sj = sigma[j];
                scaled[j] = si > 0 && sj > 0 ? d[j] / (si * sj) : d[j];
            }
            nb[ui] = detail::k_smallest(scaled, i, n_neighbors);

            auto rng = detail::point_rng(seed, i);
            std::uniform_int_distribution<int> pick(0, n - 2);
            auto other = [&] {
                const int j = pick(rng);
                return j >= i ? j + 1 : j;
            };
            // Bounded retries keep tiny datasets from looping forever.
            const int max_tries = 64 * (n_mn + n_fp + 1);
            int tries = 0;
            const int sample = std::min(6, n - 1);
            while (static_cast<int>(mn[ui].size()) < n_mn && tries++ < max_tries) {
                std::vector<int> cand;
                while (static_cast<int>(cand.size()) < sample) {
                    const int j = other();
                    if (std::find(cand.begin(), cand.end(), j) == cand.end()) {
                        cand.push_back(j);
                    }
                }
                std::sort(cand.begin(), cand.end(), [&](int a, int b) { return d[a] != d[b] ? d[a] < d[b] : a < b; });
                const int j = cand[std::min<std::size_t>(1, cand.size() - 1)];
                if (std::find(mn[ui].begin(), mn[ui].end(), j) == mn[ui].end()) {
                    mn[ui].push_back(j);
                }
            }
            tries = 0;
            const int non_neighbors = n - 1 - static_cast<int>(nb[ui].size());
            const int want_fp = std::min(n_fp, non_neighbors);
            while (static_cast<int>(fp[ui].size()) < want_fp && tries++ < max_tries) {
                const int j = other();
                if (std::find(nb[ui].begin(), nb[ui].end(), j) == nb[ui].end() &&
                    std::find(fp[ui].begin(), fp[ui].end(), j) == fp[ui].end()) {
                    fp[ui].push_back(j);
                }
            }
        },
        threads);

    PairSets out;
    out.degenerate_scale = degenerate;
    for (int i = 0; i < n; ++i) {
        for (int j : nb[static_cast<std::size_t>(i)]) {
            out.neighbor_pairs.emplace_back(i, j);
        }
        for (int j : mn[static_cast<std::size_t>(i)]) {
            out.mid_near_pairs.emplace_back(i, j);
        }
        for (int j : fp[static_cast<std::size_t>(i)]) {
            out.further_pairs.emplace_back(i, j);
        }
    }
    return out;
}

/** Weights at iteration `iter` of `total_iters`. */
inline PhaseWeights weight_schedule(int iter, int total_iters, const Schedule& s = {}) {
    if (total_iters < 1 || iter < 0 || iter >= total_iters) {
        fail(ErrorKind::InvalidArgument, "iteration out of range");
    }
    const double p1 = s.phase1_fraction * total_iters;
    const double p2 = p1 + s.phase2_fraction * total_iters;
    if (iter < p1) {
        const double t = iter / p1;
        return {2.0, (1.0 - t) * s.mn_start + t * s.mn_end, 1.0};
    }
    if (iter < p2) {
        return {3.0, 3.0, 1.0};
    }
    return {1.0, 0.0, 1.0};
}

inline double pacmap_loss(const Coords& y, const PairSets& pairs, const PhaseWeights& w) {
    auto sq = [&](const Pair& p) { return (y.row(p.first) - y.row(p.second)).squaredNorm(); };
    double nb = 0, mn = 0, fp = 0;
    for (const auto& p : pairs.neighbor_pairs) {
        const double d = sq(p);
        nb += d / (10.0 + d);
    }
    for (const auto& p : pairs.mid_near_pairs) {
        const double d = sq(p);
        mn += d / (10000.0 + d);
    }
    for (const auto& p : pairs.further_pairs) {
        fp += 1.0 / (1.0 + sq(p));
    }
    return w.w_nb * nb + w.w_mn * mn + w.w_fp * fp;
}

inline Coords loss_gradient(const Coords& y, const PairSets& pairs, const PhaseWeights& w) {
    Coords g = Coords::Zero(y.rows(), 2);
    auto add = [&](const std::vector<Pair>& set, auto&& coef) {
        for (const auto& [i, j] : set) {
            const Eigen::RowVector2d diff = y.row(i) - y.row(j);
            const Eigen::RowVector2d f = 2.0 * coef(diff.squaredNorm()) * diff;
            g.row(i) += f;
            g.row(j) -= f;
        }
    };
    if (w.w_nb != 0) {
        add(pairs.neighbor_pairs, [&](double d) { return w.w_nb * 10.0 / ((10.0 + d) * (10.0 + d)); });
    }
    if (w.w_mn != 0) {
        add(pairs.mid_near_pairs, [&](double d) { return w.w_mn * 10000.0 / ((10000.0 + d) * (10000.0 + d)); });
    }
    if (w.w_fp != 0) {
        add(pairs.further_pairs, [&](double d) { return -w.w_fp / ((1.0 + d) * (1.0 + d)); });
    }
    return g;
}

/**
 * Projection onto the two leading principal components, scaled so the first column has
 * standard deviation `scale`. Component signs are fixed so the largest loading is positive.
 */
inline Coords pca_init(const Matrix& data, double scale) {
    const Eigen::RowVectorXd mean = data.colwise().mean();
    const Matrix centered = data.rowwise() - mean;
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / std::max<double>(1.0, data.rows() - 1.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    const Eigen::Index dim = data.cols();
    Eigen::MatrixXd basis(dim, 2);
    for (int c = 0; c < 2; ++c) {
        Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
        if (c < dim) {
            v = eig.eigenvectors().col(dim - 1 - c);
        }
        Eigen::Index k = 0;
        v.cwiseAbs().maxCoeff(&k);
        if (v[k] < 0) {
            v = -v;
        }
        basis.col(c) = v;
    }
    Coords y = centered * basis;
    const double sd = std::sqrt(y.col(0).squaredNorm() / std::max<double>(1.0, y.rows() - 1.0));
    if (sd > 0) {
        y *= scale / sd;
    }
    return y;
}

/**
 * Embed `data` (one row per point) into 2D. Adam on the exact gradient, starting from
 * the scaled principal-component projection. Deterministic given `cfg.seed`.
 */
inline EmbeddingResult fit(const Matrix& data, const Config& cfg = {},
                           const std::function<void(int, double)>& progress = {}) {
    if (data.rows() < 20) {
        fail(ErrorKind::InsufficientData, "need at least 20 points, got " + std::to_string(data.rows()));
    }
    if (cfg.iters < 1) {
        fail(ErrorKind::InvalidArgument, "iters must be >= 1");
    }
    EmbeddingResult out;
    out.config = cfg;
    out.pairs = build_pairs(data, cfg.n_neighbors, cfg.mn_ratio, cfg.fp_ratio, cfg.seed, cfg.threads);
    Coords y = pca_init(data, cfg.init_scale);
    Coords m = Coords::Zero(y.rows(), 2), v = Coords::Zero(y.rows(), 2);

    for (int it = 0; it < cfg.iters; ++it) {
        const PhaseWeights w = weight_schedule(it, cfg.iters, cfg.schedule);
        const double loss = pacmap_loss(y, out.pairs, w);
        if (!std::isfinite(loss) || !y.allFinite()) {
            fail(ErrorKind::NonFiniteLoss, "loss became non-finite at iteration " + std::to_string(it) +
                                               " (w_NB=" + std::to_string(w.w_nb) + ", w_MN=" +
                                               std::to_string(w.w_mn) + ", w_FP=" + std::to_string(w.w_fp) + ")");
        }
        out.loss_history.push_back(loss);
        if (progress) {
            progress(it, loss);
        }
        const Coords g = loss_gradient(y, out.pairs, w);
        m = cfg.beta1 * m + (1 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1 - cfg.beta2) * g.cwiseProduct(g);
        const double t = it + 1.0;
        const double step = cfg.learning_rate * std::sqrt(1 - std::pow(cfg.beta2, t)) / (1 - std::pow(cfg.beta1, t));
        y.array() -= step * m.array() / (v.array().sqrt() + cfg.epsilon);
    }
    out.coordinates = std::move(y);
    return out;
}

/** Places new points in an existing embedding by inverse-distance interpolation. */
class CachedProjector {
public:
    CachedProjector(Matrix data, Coords coordinates, int k = 5)
        : data_(std::move(data)), coords_(std::move(coordinates)), k_(k) {
        if (data_.rows() != coords_.rows()) {
            fail(ErrorKind::ShapeMismatch, "data and coordinates have different row counts");
        }
    }

    /** Weighted average of the k nearest training coordinates; exact duplicates snap to their coordinate. */
    Eigen::RowVector2d project_point(const Eigen::Ref<const Eigen::RowVectorXd>& point) const {
        if (data_.rows() == 0) {
            fail(ErrorKind::EmptyModel, "embedding has no points");
        }
        if (point.size() != data_.cols()) {
            fail(ErrorKind::DimensionMismatch, "point has dimension " + std::to_string(point.size()) +
                                                   ", model has " + std::to_string(data_.cols()));
        }
        std::vector<double> d(static_cast<std::size_t>(data_.rows()));
        for (Eigen::Index j = 0; j < data_.rows(); ++j) {
            d[static_cast<std::size_t>(j)] = (data_.row(j) - point).norm();
        }
        const auto nn = detail::k_smallest(d, -1, k_);
        const double exact = 1e-12;
        Eigen::RowVector2d acc = Eigen::RowVector2d::Zero();
        double total = 0;
        if (d[static_cast<std::size_t>(nn.front())] <= exact) {
            for (int j : nn) {
                if (d[static_cast<std::size_t>(j)] <= exact) {
                    acc += coords_.row(j);
                    total += 1;
                }
            }
            return acc / total;
        }
        for (int j : nn) {
            const double w = 1.0 / d[static_cast<std::size_t>(j)];
            acc += w * coords_.row(j);
            total += w;
        }
        return acc / total;
    }

    Coords project(const Matrix& points) const {
        Coords out(points.rows(), 2);
        for (Eigen::Index i = 0; i < points.rows(); ++i) {
            out.row(i) = project_point(points.row(i));
        }
        return out;
    }

    Eigen::Index size() const { return data_.rows(); }

private:
    Matrix data_;
    Coords coords_;
    int k_;
};

inline Coords project_cached(const EmbeddingResult& model, const Matrix& data, const Matrix& new_points, int k = 5) {
    if (model.coordinates.rows() == 0 || data.rows() == 0) {
        fail(ErrorKind::EmptyModel, "embedding has no points");
    }
    return CachedProjector(data, model.coordinates, k).project(new_points);
}

/**
 * Mean fraction of each point's k nearest 2D neighbors that share its label.
 */
inline double knn_label_agreement(const Coords& y, const std::vector<int>& labels, int k = 10) {
    if (static_cast<Eigen::Index>(labels.size()) != y.rows()) {
        fail(ErrorKind::ShapeMismatch, "one label per point required");
    }
    const int n = static_cast<int>(y.rows());
    if (n < 2) {
        fail(ErrorKind::InsufficientData, "need at least two points");
    }
    double total = 0;
    std::vector<double> d(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            d[static_cast<std::size_t>(j)] = (y.row(i) - y.row(j)).squaredNorm();
        }
        const auto nn = detail::k_smallest(d, i, k);
        int same = 0;
        for (int j : nn) {
            same += labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)];
        }
        total += static_cast<double>(same) / static_cast<double>(nn.size());
    }
    return total / n;
}

} // namespace modeswitch::pacmap

#endif
