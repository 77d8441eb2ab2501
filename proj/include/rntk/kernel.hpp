#pragma once

#include <algorithm>
#include <cstddef>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rntk/dual_activation.hpp"
#include "rntk/errors.hpp"
#include "rntk/params.hpp"

namespace rntk {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// CK and NTK Gram matrices of one dataset under one architecture.
struct GramPair {
    Matrix ck;
    Matrix ntk;
    HyperParams params;
    Variant variant;

    [[nodiscard]] Eigen::Index n_points() const { return ck.rows(); }
};

/// Rectangular kernels between a query set (rows) and a reference set (columns).
struct CrossKernels {
    Matrix ck;
    Matrix ntk;
    HyperParams params;
    Variant variant;
};

/// Kernel values of one input pair; `*_last` read the final step, `*_avg` sum all steps.
struct PairOutputs {
    double ck_last = 0.0;
    double ntk_last = 0.0;
    double ck_avg = 0.0;
    double ntk_avg = 0.0;
};

struct KernelValue {
    double ck = 0.0;
    double ntk = 0.0;
};

/// Scalar reference of the CK / NTK recursions for a single pair (x, x').
///
/// Feed coordinates one step at a time with `step`. After each step the
/// accessors expose Sigma and Psi of every layer at the current step, the
/// last-step kernels and their running sums over steps.
class PairRecursion {
public:
    explicit PairRecursion(const HyperParams& params) : params_(params), layers_(params.depth) {
        params_.validate();
    }

    void step(double a, double b) {
        const double sw2 = params_.sigma_w * params_.sigma_w;
        const double su2 = params_.sigma_u * params_.sigma_u;
        const double sb2 = params_.sigma_b * params_.sigma_b;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            Layer& cur = layers_[l];
            // Everything on the right-hand side uses this layer at the previous
            // step and the layer below at the current step.
            const DualValues prev = detail::relu_dual(cur.xx, cur.yy, cur.xy);
            double in_xx, in_yy, in_xy, in_psi = 0.0;
            if (l == 0) {
                in_xx = su2 * a * a;
                in_yy = su2 * b * b;
                in_xy = su2 * a * b;
            } else {
                const Layer& below = layers_[l - 1];
                const DualValues lower = detail::relu_dual(below.xx, below.yy, below.xy);
                in_xx = su2 * 0.5 * below.xx;
                in_yy = su2 * 0.5 * below.yy;
                in_xy = su2 * lower.value;
                in_psi = su2 * below.psi * lower.derivative;
            }
            const double xy = in_xy + sw2 * prev.value + sb2;
            cur.psi = xy + sw2 * cur.psi * prev.derivative + in_psi;
            cur.xx = in_xx + sw2 * 0.5 * cur.xx + sb2;
            cur.yy = in_yy + sw2 * 0.5 * cur.yy + sb2;
            cur.xy = xy;
        }
        const Layer& top = layers_.back();
        const DualValues out = detail::relu_dual(top.xx, top.yy, top.xy);
        const double sv2 = params_.sigma_v * params_.sigma_v;
        ck_ = sv2 * out.value;
        ntk_ = ck_ + sv2 * top.psi * out.derivative;
        ck_sum_ += ck_;
        ntk_sum_ += ntk_;
        ++steps_;
    }

    [[nodiscard]] int steps() const { return steps_; }
    /// Sigma^(l,t)(x, x') for zero-based layer `l` at the current step.
    [[nodiscard]] double sigma(int l) const { return layers_.at(l).xy; }
    [[nodiscard]] double sigma_xx(int l) const { return layers_.at(l).xx; }
    [[nodiscard]] double sigma_yy(int l) const { return layers_.at(l).yy; }
    [[nodiscard]] double psi(int l) const { return layers_.at(l).psi; }
    [[nodiscard]] double ck() const { return ck_; }
    [[nodiscard]] double ntk() const { return ntk_; }
    [[nodiscard]] double ck_sum() const { return ck_sum_; }
    [[nodiscard]] double ntk_sum() const { return ntk_sum_; }

private:
    struct Layer {
        double xx = 0.0, yy = 0.0, xy = 0.0, psi = 0.0;
    };

    HyperParams params_;
    std::vector<Layer> layers_;
    double ck_ = 0.0, ntk_ = 0.0, ck_sum_ = 0.0, ntk_sum_ = 0.0;
    int steps_ = 0;
};

/// Reverses the coordinate order: out[t] = in[T-1-t].
inline Vector flip(const Vector& x) { return x.reverse(); }

/// Reverses every row of a dataset.
inline Matrix flip_rows(const Matrix& data) { return data.rowwise().reverse(); }

/// Last-step and pooled CK / NTK of a plain RNN for one pair, default order.
inline PairOutputs kernel_pair(const Vector& x, const Vector& x_prime, const HyperParams& params) {
    if (x.size() != x_prime.size()) throw ShapeError("kernel_pair: inputs differ in length");
    if (x.size() == 0) throw ShapeError("kernel_pair: inputs are empty");
    if (!x.allFinite() || !x_prime.allFinite()) throw InvalidInput("kernel_pair: non-finite input");
    PairRecursion rec(params);
    for (Eigen::Index t = 0; t < x.size(); ++t) rec.step(x[t], x_prime[t]);
    return {rec.ck(), rec.ntk(), rec.ck_sum(), rec.ntk_sum()};
}

/// Scalar kernel of one pair under any variant (flip and bidirectional sum included).
inline KernelValue kernel_pair(const Vector& x, const Vector& x_prime, const HyperParams& params,
                               const Variant& variant) {
    auto pick = [&](const PairOutputs& o) {
        return variant.pooled() ? KernelValue{o.ck_avg, o.ntk_avg} : KernelValue{o.ck_last, o.ntk_last};
    };
    if (variant.bidirectional()) {
        const KernelValue fwd = pick(kernel_pair(x, x_prime, params));
        const KernelValue bwd = pick(kernel_pair(flip(x), flip(x_prime), params));
        return {fwd.ck + bwd.ck, fwd.ntk + bwd.ntk};
    }
    if (variant.flipped()) return pick(kernel_pair(flip(x), flip(x_prime), params));
    return pick(kernel_pair(x, x_prime, params));
}

/// Tiling and instrumentation for the batched Gram computation.
struct GramOptions {
    Eigen::Index tile = 256;
};

/// Work counters reported by one Gram computation.
struct GramStats {
    std::size_t tiles = 0;
    std::size_t pairs = 0;
    /// Pair-indexed buffers held by one tile workspace; depends on depth only.
    std::size_t state_buffers = 0;
    /// Elements per buffer, at most tile * tile.
    std::size_t buffer_elements = 0;
};

namespace detail {

/// Per-tile recursion state. Holds, for every layer, the dual-activation
/// values of K^(l,t) and Psi^(l,t) of the current step, plus the two output
/// accumulators. Its size never depends on the sequence length.
class RecursionState {
public:
    RecursionState(int depth, std::size_t pairs)
        : value_(depth, std::vector<double>(pairs, 0.0)),
          derivative_(depth, std::vector<double>(pairs, 0.25)),
          psi_(depth, std::vector<double>(pairs, 0.0)),
          ck_(pairs, 0.0),
          ntk_(pairs, 0.0) {}

    static constexpr std::size_t buffer_count(int depth) { return 3 * static_cast<std::size_t>(depth) + 2; }

    std::vector<std::vector<double>> value_;
    std::vector<std::vector<double>> derivative_;
    std::vector<std::vector<double>> psi_;
    std::vector<double> ck_;
    std::vector<double> ntk_;
};

struct Tile {
    Eigen::Index row0, rows, col0, cols;
    bool diagonal;
};

// Runs the full recursion for one tile. `a` supplies the row inputs, `b` the
// column inputs; on a diagonal tile only pairs with col >= row are evaluated.
// Returns (row, col, ck, ntk) through the callback.
template <class Sink>
void run_tile(const Matrix& a, const Matrix& b, const Tile& tile, const HyperParams& p, bool pooled,
              Sink&& sink) {
    std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
    pairs.reserve(static_cast<std::size_t>(tile.rows * tile.cols));
    for (Eigen::Index i = 0; i < tile.rows; ++i) {
        for (Eigen::Index j = tile.diagonal ? i : 0; j < tile.cols; ++j) pairs.emplace_back(i, j);
    }
    const int depth = p.depth;
    const std::size_t np = pairs.size();
    RecursionState st(depth, np);

    const double sw2 = p.sigma_w * p.sigma_w;
    const double su2 = p.sigma_u * p.sigma_u;
    const double sb2 = p.sigma_b * p.sigma_b;
    const double sv2 = p.sigma_v * p.sigma_v;

    // Self-covariances Sigma^(l,t)(x,x) of the tile's rows and columns.
    std::vector<std::vector<double>> row_var(depth, std::vector<double>(tile.rows, 0.0));
    std::vector<std::vector<double>> col_var(depth, std::vector<double>(tile.cols, 0.0));

    const Eigen::Index steps = a.cols();
    for (Eigen::Index t = 0; t < steps; ++t) {
        for (int l = 0; l < depth; ++l) {
            // relu_dual on a rank-one covariance (s, s, s) is exactly s / 2.
            auto update_var = [&](std::vector<std::vector<double>>& var, const Matrix& src, Eigen::Index off) {
                auto& cur = var[l];
                for (std::size_t i = 0; i < cur.size(); ++i) {
                    double in;
                    if (l == 0) {
                        const double v = src(off + static_cast<Eigen::Index>(i), t);
                        in = su2 * v * v;
                    } else {
                        in = su2 * 0.5 * var[l - 1][i];
                    }
                    cur[i] = in + sw2 * 0.5 * cur[i] + sb2;
                }
            };
            update_var(row_var, a, tile.row0);
            update_var(col_var, b, tile.col0);

            auto& value = st.value_[l];
            auto& deriv = st.derivative_[l];
            auto& psi = st.psi_[l];
            const std::vector<double>& rv = row_var[l];
            const std::vector<double>& cv = col_var[l];
            if (l == 0) {
                for (std::size_t q = 0; q < np; ++q) {
                    const auto [i, j] = pairs[q];
                    const double sigma = su2 * a(tile.row0 + i, t) * b(tile.col0 + j, t) + sw2 * value[q] + sb2;
                    psi[q] = sigma + sw2 * psi[q] * deriv[q];
                    const DualValues d = relu_dual(rv[i], cv[j], sigma);
                    value[q] = d.value;
                    deriv[q] = d.derivative;
                }
            } else {
                const auto& lv = st.value_[l - 1];
                const auto& ld = st.derivative_[l - 1];
                const auto& lp = st.psi_[l - 1];
                for (std::size_t q = 0; q < np; ++q) {
                    const auto [i, j] = pairs[q];
                    const double sigma = su2 * lv[q] + sw2 * value[q] + sb2;
                    psi[q] = sigma + sw2 * psi[q] * deriv[q] + su2 * lp[q] * ld[q];
                    const DualValues d = relu_dual(rv[i], cv[j], sigma);
                    value[q] = d.value;
                    deriv[q] = d.derivative;
                }
            }
        }
        const auto& top_v = st.value_[depth - 1];
        const auto& top_d = st.derivative_[depth - 1];
        const auto& top_p = st.psi_[depth - 1];
        if (pooled) {
            for (std::size_t q = 0; q < np; ++q) {
                const double ck = sv2 * top_v[q];
                st.ck_[q] += ck;
                st.ntk_[q] += ck + sv2 * top_p[q] * top_d[q];
            }
        } else if (t + 1 == steps) {
            for (std::size_t q = 0; q < np; ++q) {
                const double ck = sv2 * top_v[q];
                st.ck_[q] = ck;
                st.ntk_[q] = ck + sv2 * top_p[q] * top_d[q];
            }
        }
    }
    for (std::size_t q = 0; q < np; ++q) {
        sink(tile.row0 + pairs[q].first, tile.col0 + pairs[q].second, st.ck_[q], st.ntk_[q]);
    }
}

inline void check_data(const Matrix& data, const char* what) {
    if (data.rows() == 0) throw ShapeError(std::string(what) + ": dataset is empty");
    if (data.cols() == 0) throw ShapeError(std::string(what) + ": sequence length is zero");
    if (!data.allFinite()) throw InvalidInput(std::string(what) + ": non-finite feature");
}

inline std::vector<Tile> make_tiles(Eigen::Index rows, Eigen::Index cols, Eigen::Index size, bool symmetric) {
    if (size < 1) throw ConfigError("tile size must be positive");
    std::vector<Tile> tiles;
    for (Eigen::Index r = 0; r < rows; r += size) {
        for (Eigen::Index c = symmetric ? r : 0; c < cols; c += size) {
            tiles.push_back({r, std::min(size, rows - r), c, std::min(size, cols - c), symmetric && r == c});
        }
    }
    return tiles;
}

// Plain (non-bidirectional) Gram of `data` in its given order.
inline std::pair<Matrix, Matrix> base_gram(const Matrix& data, const HyperParams& p, bool pooled,
                                           const GramOptions& opt, GramStats* stats) {
    const Eigen::Index n = data.rows();
    Matrix ck(n, n), ntk(n, n);
    const auto tiles = make_tiles(n, n, opt.tile, true);
    const auto count = static_cast<std::ptrdiff_t>(tiles.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t k = 0; k < count; ++k) {
        run_tile(data, data, tiles[k], p, pooled, [&](Eigen::Index i, Eigen::Index j, double c, double t) {
            ck(i, j) = c;
            ck(j, i) = c;
            ntk(i, j) = t;
            ntk(j, i) = t;
        });
    }
    if (stats) {
        stats->tiles += tiles.size();
        stats->pairs += static_cast<std::size_t>(n * (n + 1) / 2);
        stats->state_buffers = RecursionState::buffer_count(p.depth);
        const auto t = static_cast<std::size_t>(std::min(opt.tile, n));
        stats->buffer_elements = std::max(stats->buffer_elements, t * t);
    }
    return {std::move(ck), std::move(ntk)};
}

inline std::pair<Matrix, Matrix> base_cross(const Matrix& query, const Matrix& ref, const HyperParams& p,
                                            bool pooled, const GramOptions& opt, GramStats* stats) {
    Matrix ck(query.rows(), ref.rows()), ntk(query.rows(), ref.rows());
    const auto tiles = make_tiles(query.rows(), ref.rows(), opt.tile, false);
    const auto count = static_cast<std::ptrdiff_t>(tiles.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t k = 0; k < count; ++k) {
        run_tile(query, ref, tiles[k], p, pooled, [&](Eigen::Index i, Eigen::Index j, double c, double t) {
            ck(i, j) = c;
            ntk(i, j) = t;
        });
    }
    if (stats) {
        stats->tiles += tiles.size();
        stats->pairs += static_cast<std::size_t>(query.rows() * ref.rows());
        stats->state_buffers = RecursionState::buffer_count(p.depth);
        const auto t = static_cast<std::size_t>(std::min(opt.tile, std::max(query.rows(), ref.rows())));
        stats->buffer_elements = std::max(stats->buffer_elements, t * t);
    }
    return {std::move(ck), std::move(ntk)};
}

}  // namespace detail

/// Sums a forward-order and a reversed-order Gram pair into the bidirectional kernel.
inline GramPair compose_bidirectional(const GramPair& fwd, const GramPair& bwd) {
    if (fwd.ck.rows() != bwd.ck.rows() || fwd.ck.cols() != bwd.ck.cols() || fwd.ntk.rows() != bwd.ntk.rows() ||
        fwd.ntk.cols() != bwd.ntk.cols() || fwd.ck.rows() != fwd.ntk.rows() || fwd.ck.cols() != fwd.ntk.cols()) {
        throw CompositionError("compose_bidirectional: shape mismatch");
    }
    if (!(fwd.params == bwd.params)) throw CompositionError("compose_bidirectional: hyperparameters differ");
    if (fwd.variant.arch != bwd.variant.arch || fwd.variant.bidirectional()) {
        throw CompositionError("compose_bidirectional: operands must share one unidirectional architecture");
    }
    const Architecture bi = fwd.variant.arch == Architecture::RNN ? Architecture::BiRNN : Architecture::BiRNNAvg;
    return {fwd.ck + bwd.ck, fwd.ntk + bwd.ntk, fwd.params, make_variant(bi)};
}

/// CK and NTK Gram matrices of `data` (one sequence per row).
///
/// Pairs are processed in tiles of `opt.tile` x `opt.tile` over the upper
/// triangle; each unordered pair is computed once and mirrored, so both
/// matrices are exactly symmetric. Tiles run in parallel under OpenMP.
inline GramPair gram(const Matrix& data, const HyperParams& params, const Variant& variant,
                     const GramOptions& opt = {}, GramStats* stats = nullptr) {
    detail::check_data(data, "gram");
    params.validate();
    const bool pooled = variant.pooled();
    const Architecture base = base_architecture(variant.arch);
    if (variant.bidirectional()) {
        auto [fc, fn] = detail::base_gram(data, params, pooled, opt, stats);
        auto [bc, bn] = detail::base_gram(flip_rows(data), params, pooled, opt, stats);
        return compose_bidirectional({std::move(fc), std::move(fn), params, make_variant(base)},
                                     {std::move(bc), std::move(bn), params, make_variant(base, InputOrder::Flipped)});
    }
    auto [ck, ntk] = variant.flipped() ? detail::base_gram(flip_rows(data), params, pooled, opt, stats)
                                       : detail::base_gram(data, params, pooled, opt, stats);
    return {std::move(ck), std::move(ntk), params, variant};
}

/// Kernels between every `query` row and every `reference` row (query x reference).
inline CrossKernels gram_cross(const Matrix& reference, const Matrix& query, const HyperParams& params,
                               const Variant& variant, const GramOptions& opt = {}, GramStats* stats = nullptr) {
    detail::check_data(reference, "gram_cross");
    detail::check_data(query, "gram_cross");
    if (reference.cols() != query.cols()) throw ShapeError("gram_cross: feature lengths differ");
    params.validate();
    const bool pooled = variant.pooled();
    if (variant.bidirectional()) {
        auto [fc, fn] = detail::base_cross(query, reference, params, pooled, opt, stats);
        auto [bc, bn] = detail::base_cross(flip_rows(query), flip_rows(reference), params, pooled, opt, stats);
        return {fc + bc, fn + bn, params, variant};
    }
    auto [ck, ntk] = variant.flipped()
                         ? detail::base_cross(flip_rows(query), flip_rows(reference), params, pooled, opt, stats)
                         : detail::base_cross(query, reference, params, pooled, opt, stats);
    return {std::move(ck), std::move(ntk), params, variant};
}

}  // namespace rntk
