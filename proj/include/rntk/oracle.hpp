#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>

#include "rntk/errors.hpp"
#include "rntk/kernel.hpp"
#include "rntk/params.hpp"

// Finite-width RNNs drawn at initialization, used to estimate the CK and NTK
// by Monte Carlo. Weights are stored unscaled (standard normal); the
// sigma / sqrt(width) factors are applied where the weights are used, and
// gradients are taken with respect to the unscaled entries.

namespace rntk {

/// One draw of every parameter of a single-direction RNN with scalar inputs.
struct RNNWeights {
    int width = 0;
    int depth = 0;
    int steps = 0;
    std::vector<Matrix> recurrent;   ///< W^(l), width x width
    Vector input;                    ///< U^(1), width x 1
    std::vector<Matrix> deep_input;  ///< U^(l) for l >= 2, width x width
    std::vector<Vector> bias;        ///< b^(l)
    Matrix heads;                    ///< steps x width; row t is the output head V^(t+1)

    [[nodiscard]] std::size_t parameter_count() const {
        const auto n = static_cast<std::size_t>(width);
        const auto l = static_cast<std::size_t>(depth);
        return l * n * n + n + (l - 1) * n * n + l * n + static_cast<std::size_t>(steps) * n;
    }
};

/// Parameters of the whole network: the forward RNN and, for bidirectional
/// variants, an independent copy that reads the reversed input.
struct NetworkDraw {
    RNNWeights forward;
    std::optional<RNNWeights> reverse;

    [[nodiscard]] std::size_t parameter_count() const {
        return forward.parameter_count() + (reverse ? reverse->parameter_count() : 0);
    }
};

namespace detail {

inline boost::random::mt19937_64 make_engine(std::uint64_t seed, std::uint32_t stream, std::uint32_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream, index};
    return boost::random::mt19937_64(seq);
}

}  // namespace detail

/// Draws every weight i.i.d. N(0, 1); deterministic in `seed`.
inline RNNWeights sample_rnn(const HyperParams& params, int width, int steps, std::uint64_t seed) {
    params.validate();
    if (width < 1) throw ConfigError("sample_rnn: width must be positive");
    if (steps < 1) throw ConfigError("sample_rnn: sequence length must be positive");
    auto engine = detail::make_engine(seed, 0x5a17u, 0);
    boost::random::normal_distribution<double> normal;
    auto fill = [&](auto& m) {
        for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = normal(engine);
    };

    RNNWeights w;
    w.width = width;
    w.depth = params.depth;
    w.steps = steps;
    const Eigen::Index n = width;
    for (int l = 0; l < params.depth; ++l) {
        w.recurrent.emplace_back(n, n);
        fill(w.recurrent.back());
        if (l == 0) {
            w.input.resize(n);
            fill(w.input);
        } else {
            w.deep_input.emplace_back(n, n);
            fill(w.deep_input.back());
        }
        w.bias.emplace_back(n);
        fill(w.bias.back());
    }
    w.heads.resize(steps, n);
    fill(w.heads);
    return w;
}

/// Draws the parameters a variant needs; bidirectional variants get an independent reverse copy.
inline NetworkDraw sample_network(const HyperParams& params, int width, int steps, const Variant& variant,
                                  std::uint64_t seed) {
    NetworkDraw d{sample_rnn(params, width, steps, seed), std::nullopt};
    if (variant.bidirectional()) {
        d.reverse = sample_rnn(params, width, steps, seed ^ 0x9e3779b97f4a7c15ull);
    }
    return d;
}

/// Forward pass of one network over a batch of inputs (one per column).
struct NetworkTrace {
    std::vector<std::vector<Matrix>> pre;     ///< [l][t] pre-activations g^(l,t), t in 1..T at index t-1
    std::vector<std::vector<Matrix>> hidden;  ///< [l][t] hidden states h^(l,t), t in 0..T; index 0 is the zero state
    Matrix inputs;                            ///< T x batch
    Matrix head_outputs;                      ///< T x batch; f^(t) for every step

    [[nodiscard]] int steps() const { return static_cast<int>(inputs.rows()); }
};

/// Which output heads a network output sums.
struct HeadSelection {
    enum class Mode { Last, Sum, Single };
    Mode mode = Mode::Last;
    int step = 0;  ///< zero-based step for Mode::Single

    [[nodiscard]] bool contains(int t, int steps) const {
        switch (mode) {
            case Mode::Last: return t == steps - 1;
            case Mode::Sum: return true;
            case Mode::Single: return t == step;
        }
        return false;
    }
    static HeadSelection of(const Variant& v) { return {v.pooled() ? Mode::Sum : Mode::Last, 0}; }
};

/// Result of `forward`: traces of both directions and the scalar output.
struct ForwardTrace {
    NetworkTrace forward;
    std::optional<NetworkTrace> reverse;
    double output = 0.0;
};

namespace detail {

inline Matrix relu(const Matrix& g) { return g.cwiseMax(0.0); }

// Eigen's GEMM spends most of its time packing when the right-hand side has
// only a few columns; streaming through W once is several times faster there.
inline constexpr Eigen::Index kStreamColumns = 16;

/// Y += W * X
inline void add_product(const Matrix& w, const Matrix& x, Matrix& y) {
    if (x.cols() > kStreamColumns) {
        y.noalias() += w * x;
        return;
    }
    constexpr Eigen::Index block = 512;
    for (Eigen::Index r = 0; r < w.rows(); r += block) {
        const Eigen::Index h = std::min(block, w.rows() - r);
        auto yb = y.middleRows(r, h);
        for (Eigen::Index j = 0; j < w.cols(); ++j) yb.noalias() += w.col(j).segment(r, h) * x.row(j);
    }
}

/// Y += W^T * X
inline void add_transposed_product(const Matrix& w, const Matrix& x, Matrix& y) {
    if (x.cols() > kStreamColumns) {
        y.noalias() += w.transpose() * x;
        return;
    }
    for (Eigen::Index j = 0; j < w.cols(); ++j) y.row(j).noalias() += w.col(j).transpose() * x;
}

inline NetworkTrace run_forward(const RNNWeights& w, const HyperParams& p, const Matrix& inputs) {
    const int steps = static_cast<int>(inputs.rows());
    if (steps < 1) throw ShapeError("forward: empty input");
    if (steps > w.steps) throw ShapeError("forward: input longer than the number of output heads");
    if (p.depth != w.depth) throw ShapeError("forward: depth differs from the weights");
    const Eigen::Index n = w.width;
    const Eigen::Index batch = inputs.cols();
    const double root_n = std::sqrt(static_cast<double>(n));
    const double rec = p.sigma_w / root_n;
    const double deep = p.sigma_u / root_n;

    NetworkTrace tr;
    tr.inputs = inputs;
    tr.pre.assign(w.depth, std::vector<Matrix>(steps));
    tr.hidden.assign(w.depth, std::vector<Matrix>(steps + 1));
    for (int l = 0; l < w.depth; ++l) tr.hidden[l][0] = Matrix::Zero(n, batch);
    tr.head_outputs.resize(steps, batch);

    for (int t = 1; t <= steps; ++t) {
        for (int l = 0; l < w.depth; ++l) {
            Matrix g = Matrix::Zero(n, batch);
            if (t > 1) add_product(w.recurrent[l], rec * tr.hidden[l][t - 1], g);
            if (l == 0) {
                g.noalias() += p.sigma_u * w.input * inputs.row(t - 1);
            } else {
                add_product(w.deep_input[l - 1], deep * tr.hidden[l - 1][t], g);
            }
            g.colwise() += p.sigma_b * w.bias[l];
            tr.hidden[l][t] = relu(g);
            tr.pre[l][t - 1] = std::move(g);
        }
        tr.head_outputs.row(t - 1).noalias() = (p.sigma_v / root_n) * (w.heads.row(t - 1) * tr.hidden[w.depth - 1][t]);
    }
    return tr;
}

/// Backpropagated pre-activation gradients dg^(l,t) = d f / d g^(l,t) for a
/// set of output columns. Column c of every matrix belongs to trace column
/// `source[c]` with heads `heads[c]`.
struct Backward {
    std::vector<int> source;
    std::vector<HeadSelection> heads;
    std::vector<std::vector<Matrix>> dpre;  ///< [l][t], t in 1..T at index t-1
};

inline Backward run_backward(const RNNWeights& w, const HyperParams& p, const NetworkTrace& tr,
                             std::vector<int> source, std::vector<HeadSelection> heads) {
    const int steps = tr.steps();
    const int depth = w.depth;
    const Eigen::Index n = w.width;
    const auto cols = static_cast<Eigen::Index>(source.size());
    const double root_n = std::sqrt(static_cast<double>(n));
    const double rec = p.sigma_w / root_n;
    const double deep = p.sigma_u / root_n;
    const double out = p.sigma_v / root_n;

    Backward bw{std::move(source), std::move(heads), {}};
    bw.dpre.assign(depth, std::vector<Matrix>(steps));
    std::vector<Matrix> from_next(depth, Matrix::Zero(n, cols));
    for (int t = steps; t >= 1; --t) {
        for (int l = depth - 1; l >= 0; --l) {
            Matrix dh = std::move(from_next[l]);
            if (l == depth - 1) {
                for (Eigen::Index c = 0; c < cols; ++c) {
                    if (bw.heads[c].contains(t - 1, steps)) dh.col(c) += out * w.heads.row(t - 1).transpose();
                }
            } else {
                add_transposed_product(w.deep_input[l], deep * bw.dpre[l + 1][t - 1], dh);
            }
            const Matrix& g = tr.pre[l][t - 1];
            for (Eigen::Index c = 0; c < cols; ++c) {
                // relu'(0) is taken as 0
                dh.col(c) = (g.col(bw.source[c]).array() > 0.0).select(dh.col(c), 0.0);
            }
            if (t > 1) {
                from_next[l] = Matrix::Zero(n, cols);
                add_transposed_product(w.recurrent[l], rec * dh, from_next[l]);
            } else {
                from_next[l] = Matrix::Zero(n, cols);
            }
            bw.dpre[l][t - 1] = std::move(dh);
        }
    }
    return bw;
}

/// Per-column gradient factors: every parameter gradient is a sum over steps
/// of an outer product dg^(l,t) * input^T, so inner products reduce to
/// step-by-step Gram matrices of these factors.
struct GradientFactors {
    std::vector<Matrix> dpre;        ///< [l] width x T
    std::vector<Matrix> prev_state;  ///< [l] width x T, columns h^(l,t-1)
    std::vector<Matrix> lower;       ///< [l] width x T for l >= 1 (h^(l-1,t)); 1 x T for l = 0 (inputs)
    Matrix top;                      ///< width x T, h^(L,t)
    HeadSelection heads;
};

inline GradientFactors factors(const NetworkTrace& tr, const Backward& bw, Eigen::Index c) {
    const int steps = tr.steps();
    const auto depth = static_cast<int>(tr.pre.size());
    const Eigen::Index n = tr.pre[0][0].rows();
    const int src = bw.source[c];
    GradientFactors f;
    f.heads = bw.heads[c];
    for (int l = 0; l < depth; ++l) {
        Matrix d(n, steps), prev(n, steps), low(l == 0 ? 1 : n, steps);
        for (int t = 0; t < steps; ++t) {
            d.col(t) = bw.dpre[l][t].col(c);
            prev.col(t) = tr.hidden[l][t].col(src);
            if (l == 0) {
                low(0, t) = tr.inputs(t, src);
            } else {
                low.col(t) = tr.hidden[l - 1][t + 1].col(src);
            }
        }
        f.dpre.push_back(std::move(d));
        f.prev_state.push_back(std::move(prev));
        f.lower.push_back(std::move(low));
    }
    f.top.resize(n, steps);
    for (int t = 0; t < steps; ++t) f.top.col(t) = tr.hidden[depth - 1][t + 1].col(src);
    return f;
}

/// <grad f_a, grad f_b> over the parameters of one network.
inline double gradient_inner(const GradientFactors& a, const GradientFactors& b, const HyperParams& p) {
    const double n = static_cast<double>(a.top.rows());
    const double sw2 = p.sigma_w * p.sigma_w;
    const double su2 = p.sigma_u * p.sigma_u;
    const double sb2 = p.sigma_b * p.sigma_b;
    const double sv2 = p.sigma_v * p.sigma_v;
    double total = 0.0;
    for (std::size_t l = 0; l < a.dpre.size(); ++l) {
        const Matrix dd = a.dpre[l].transpose() * b.dpre[l];
        total += sw2 / n * dd.cwiseProduct(a.prev_state[l].transpose() * b.prev_state[l]).sum();
        const double u_scale = l == 0 ? su2 : su2 / n;
        total += u_scale * dd.cwiseProduct(a.lower[l].transpose() * b.lower[l]).sum();
        total += sb2 * dd.sum();
    }
    const int steps_a = static_cast<int>(a.top.cols());
    const int steps_b = static_cast<int>(b.top.cols());
    for (int t = 0; t < std::min(steps_a, steps_b); ++t) {
        if (a.heads.contains(t, steps_a) && b.heads.contains(t, steps_b)) {
            total += sv2 / n * a.top.col(t).dot(b.top.col(t));
        }
    }
    return total;
}

inline double select_output(const NetworkTrace& tr, Eigen::Index col, const HeadSelection& heads) {
    double f = 0.0;
    for (int t = 0; t < tr.steps(); ++t) {
        if (heads.contains(t, tr.steps())) f += tr.head_outputs(t, col);
    }
    return f;
}

// E[f_a f_b] over the readout weights alone: sigma_v^2 / n * sum of
// top-layer state products over heads selected on both sides.
inline double readout_product(const NetworkTrace& ta, Eigen::Index ca, const HeadSelection& ha,
                              const NetworkTrace& tb, Eigen::Index cb, const HeadSelection& hb,
                              const HyperParams& p) {
    const auto top = static_cast<std::size_t>(p.depth - 1);
    const int steps = std::min(ta.steps(), tb.steps());
    double sum = 0.0;
    for (int t = 0; t < steps; ++t) {
        if (ha.contains(t, ta.steps()) && hb.contains(t, tb.steps())) {
            sum += ta.hidden[top][t + 1].col(ca).dot(tb.hidden[top][t + 1].col(cb));
        }
    }
    return p.sigma_v * p.sigma_v * sum / static_cast<double>(ta.hidden[top][0].rows());
}

inline Matrix as_column(const Vector& x) { return Matrix(x); }

inline Vector ordered_input(const Vector& x, const Variant& v) { return v.flipped() ? flip(x) : x; }

inline void check_input(const NetworkDraw& draw, const Vector& x, const Variant& variant) {
    if (x.size() == 0) throw ShapeError("empty input");
    if (x.size() > draw.forward.steps) throw ShapeError("input longer than the drawn network");
    if (!x.allFinite()) throw InvalidInput("non-finite input");
    if (variant.bidirectional() && !draw.reverse) {
        throw ShapeError("bidirectional variant needs a draw with a reverse network");
    }
}

// Appends the gradient of one network output to `out`, in the order
// W^(l) (row-major), U^(l), b^(l) for every layer, then V^(1..steps).
inline void append_flat_gradient(const RNNWeights& w, const HyperParams& p, const GradientFactors& f,
                                 std::vector<double>& out) {
    const Eigen::Index n = w.width;
    const double root_n = std::sqrt(static_cast<double>(n));
    auto push_rowmajor = [&](const Matrix& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
    };
    for (int l = 0; l < w.depth; ++l) {
        push_rowmajor((p.sigma_w / root_n) * f.dpre[l] * f.prev_state[l].transpose());
        if (l == 0) {
            push_rowmajor(p.sigma_u * f.dpre[0] * f.lower[0].transpose());
        } else {
            push_rowmajor((p.sigma_u / root_n) * f.dpre[l] * f.lower[l].transpose());
        }
        const Vector db = p.sigma_b * f.dpre[l].rowwise().sum();
        out.insert(out.end(), db.data(), db.data() + db.size());
    }
    const int steps = static_cast<int>(f.top.cols());
    for (int t = 0; t < w.steps; ++t) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const bool used = t < steps && f.heads.contains(t, steps);
            out.push_back(used ? p.sigma_v / root_n * f.top(i, t) : 0.0);
        }
    }
}

inline double& weight_at(RNNWeights& w, std::size_t index) {
    const auto n = static_cast<std::size_t>(w.width);
    for (int l = 0; l < w.depth; ++l) {
        if (index < n * n) return w.recurrent[l](static_cast<Eigen::Index>(index / n), static_cast<Eigen::Index>(index % n));
        index -= n * n;
        if (l == 0) {
            if (index < n) return w.input(static_cast<Eigen::Index>(index));
            index -= n;
        } else {
            if (index < n * n) {
                return w.deep_input[l - 1](static_cast<Eigen::Index>(index / n), static_cast<Eigen::Index>(index % n));
            }
            index -= n * n;
        }
        if (index < n) return w.bias[l](static_cast<Eigen::Index>(index));
        index -= n;
    }
    if (index < static_cast<std::size_t>(w.steps) * n) {
        return w.heads(static_cast<Eigen::Index>(index / n), static_cast<Eigen::Index>(index % n));
    }
    throw ShapeError("parameter index out of range");
}

}  // namespace detail

/// Runs the recursion on `x` (and on its reversal through the reverse network
/// for bidirectional variants) and returns every intermediate state.
inline ForwardTrace forward(const NetworkDraw& draw, const HyperParams& params, const Vector& x,
                            const Variant& variant) {
    params.validate();
    detail::check_input(draw, x, variant);
    const HeadSelection heads = HeadSelection::of(variant);
    ForwardTrace out;
    out.forward = detail::run_forward(draw.forward, params, detail::as_column(detail::ordered_input(x, variant)));
    out.output = detail::select_output(out.forward, 0, heads);
    if (variant.bidirectional()) {
        out.reverse = detail::run_forward(*draw.reverse, params, detail::as_column(flip(x)));
        out.output += detail::select_output(*out.reverse, 0, heads);
    }
    return out;
}

/// Gradient of the scalar output with respect to every parameter of the draw,
/// flattened: forward network first, then the reverse network when present.
/// Within a network: W^(l) row-major, U^(l), b^(l) per layer, then V^(1..T).
inline Vector gradient(const NetworkDraw& draw, const HyperParams& params, const Vector& x, const Variant& variant) {
    const ForwardTrace tr = forward(draw, params, x, variant);
    const HeadSelection heads = HeadSelection::of(variant);
    std::vector<double> flat;
    flat.reserve(draw.parameter_count());
    {
        const auto bw = detail::run_backward(draw.forward, params, tr.forward, {0}, {heads});
        detail::append_flat_gradient(draw.forward, params, detail::factors(tr.forward, bw, 0), flat);
    }
    if (draw.reverse) {
        if (tr.reverse) {
            const auto bw = detail::run_backward(*draw.reverse, params, *tr.reverse, {0}, {heads});
            detail::append_flat_gradient(*draw.reverse, params, detail::factors(*tr.reverse, bw, 0), flat);
        } else {
            flat.resize(flat.size() + draw.reverse->parameter_count(), 0.0);
        }
    }
    return Eigen::Map<const Vector>(flat.data(), static_cast<Eigen::Index>(flat.size()));
}

/// Mutable access to one parameter by its flat gradient index.
inline double& parameter_at(NetworkDraw& draw, std::size_t index) {
    const std::size_t fwd = draw.forward.parameter_count();
    if (index < fwd) return detail::weight_at(draw.forward, index);
    if (draw.reverse) return detail::weight_at(*draw.reverse, index - fwd);
    throw ShapeError("parameter index out of range");
}

/// Monte Carlo mean with its standard error.
struct KernelEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    int trials = 0;
    int width = 0;

    /// |mean - reference| in units of the standard error.
    [[nodiscard]] double z_score(double reference) const {
        const double diff = std::abs(mean - reference);
        if (std_error > 0.0) return diff / std_error;
        return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
};

/// One network output: an input sequence and the heads it sums.
struct OracleSide {
    Vector input;
    HeadSelection heads;
};

/// A pair of outputs whose product and gradient inner product are averaged.
/// With `bidirectional`, each output also adds the reverse network applied to
/// the reversed input with the same heads.
struct OracleQuery {
    OracleSide a;
    OracleSide b;
    bool bidirectional = false;
};

struct OracleEstimates {
    KernelEstimate output_product;   ///< mean of f(x) f(x')
    KernelEstimate readout_average;  ///< CK estimate with the Gaussian readout integrated out
    KernelEstimate gradient_inner;   ///< estimates the NTK
};

struct OracleOptions {
    int width = 4000;
    int trials = 50;
    std::uint64_t seed = 0;
};

namespace detail {

inline KernelEstimate summarize(const std::vector<double>& samples, int width) {
    const auto r = static_cast<double>(samples.size());
    double mean = 0.0;
    for (double s : samples) mean += s;
    mean /= r;
    double ss = 0.0;
    for (double s : samples) ss += (s - mean) * (s - mean);
    const double sd = std::sqrt(ss / (r - 1.0));
    return {mean, sd / std::sqrt(r), static_cast<int>(samples.size()), width};
}

}  // namespace detail

/// Estimates output products and gradient inner products for many queries,
/// sharing one weight draw per trial across all of them. All queries use
/// the same hyperparameters; inputs may differ in length.
inline std::vector<OracleEstimates> estimate_kernels(std::span<const OracleQuery> queries, const HyperParams& p,
                                                     const OracleOptions& opt) {
    p.validate();
    if (opt.width < 1) throw ConfigError("oracle width must be positive");
    if (opt.trials < 2) throw ConfigError("oracle needs at least two trials for a standard error");
    int max_len = 0;
    bool any_bi = false;
    for (const auto& q : queries) {
        if (q.a.input.size() == 0 || q.b.input.size() == 0) throw ShapeError("oracle: empty input");
        if (!q.a.input.allFinite() || !q.b.input.allFinite()) throw InvalidInput("oracle: non-finite input");
        max_len = std::max({max_len, static_cast<int>(q.a.input.size()), static_cast<int>(q.b.input.size())});
        any_bi = any_bi || q.bidirectional;
    }

    // Column layout, fixed across trials. Identical inputs share a forward
    // column and identical (input, heads) sides share a backward column.
    struct Columns {
        std::vector<Vector> inputs;
        std::vector<int> source;
        std::vector<HeadSelection> heads;
    };
    struct SideSlot {
        int length, fwd_col, rev_col;
    };
    auto same_heads = [](const HeadSelection& a, const HeadSelection& b) {
        return a.mode == b.mode && (a.mode != HeadSelection::Mode::Single || a.step == b.step);
    };
    auto place = [&](std::map<int, Columns>& m, const Vector& x, const HeadSelection& h) {
        auto& c = m[static_cast<int>(x.size())];
        auto it = std::find_if(c.inputs.begin(), c.inputs.end(), [&](const Vector& v) { return v == x; });
        const int src = static_cast<int>(it - c.inputs.begin());
        if (it == c.inputs.end()) c.inputs.push_back(x);
        for (std::size_t k = 0; k < c.source.size(); ++k) {
            if (c.source[k] == src && same_heads(c.heads[k], h)) return static_cast<int>(k);
        }
        c.source.push_back(src);
        c.heads.push_back(h);
        return static_cast<int>(c.source.size()) - 1;
    };
    std::map<int, Columns> fwd_cols, rev_cols;
    std::vector<std::pair<SideSlot, SideSlot>> slots;
    for (const auto& q : queries) {
        auto side = [&](const OracleSide& s) {
            SideSlot slot{static_cast<int>(s.input.size()), place(fwd_cols, s.input, s.heads), -1};
            if (q.bidirectional) slot.rev_col = place(rev_cols, flip(s.input), s.heads);
            return slot;
        };
        slots.emplace_back(side(q.a), side(q.b));
    }
    auto to_matrix = [](const std::vector<Vector>& cols) {
        Matrix m(cols.front().size(), static_cast<Eigen::Index>(cols.size()));
        for (std::size_t c = 0; c < cols.size(); ++c) m.col(static_cast<Eigen::Index>(c)) = cols[c];
        return m;
    };

    std::vector<std::vector<double>> products(queries.size()), readouts(queries.size()), inners(queries.size());
    for (int r = 0; r < opt.trials; ++r) {
        const std::uint64_t trial_seed = detail::make_engine(opt.seed, 0x7e1au, static_cast<std::uint32_t>(r))();
        NetworkDraw draw{sample_rnn(p, opt.width, max_len, trial_seed), std::nullopt};
        if (any_bi) draw.reverse = sample_rnn(p, opt.width, max_len, trial_seed ^ 0x9e3779b97f4a7c15ull);

        struct Evaluated {
            NetworkTrace trace;
            std::vector<int> source;
            std::vector<HeadSelection> heads;
            std::vector<detail::GradientFactors> grads;  // indexed by backward column
        };
        auto evaluate = [&](const RNNWeights& w, const std::map<int, Columns>& cols) {
            std::map<int, Evaluated> out;
            for (const auto& [len, c] : cols) {
                Evaluated ev{detail::run_forward(w, p, to_matrix(c.inputs)), c.source, c.heads, {}};
                const auto bw = detail::run_backward(w, p, ev.trace, c.source, c.heads);
                for (std::size_t k = 0; k < c.source.size(); ++k) {
                    ev.grads.push_back(detail::factors(ev.trace, bw, static_cast<Eigen::Index>(k)));
                }
                out.emplace(len, std::move(ev));
            }
            return out;
        };
        const auto fwd = evaluate(draw.forward, fwd_cols);
        std::map<int, Evaluated> rev;
        if (any_bi) rev = evaluate(*draw.reverse, rev_cols);

        auto output = [](const Evaluated& ev, int col) {
            return detail::select_output(ev.trace, ev.source[col], ev.heads[col]);
        };
        auto readout = [&](const Evaluated& ea, int ca, const Evaluated& eb, int cb) {
            return detail::readout_product(ea.trace, ea.source[ca], ea.heads[ca], eb.trace, eb.source[cb], eb.heads[cb], p);
        };
        for (std::size_t qi = 0; qi < queries.size(); ++qi) {
            const auto& [sa, sb] = slots[qi];
            const auto& ea = fwd.at(sa.length);
            const auto& eb = fwd.at(sb.length);
            double fa = output(ea, sa.fwd_col);
            double fb = output(eb, sb.fwd_col);
            double inner = detail::gradient_inner(ea.grads[sa.fwd_col], eb.grads[sb.fwd_col], p);
            double shared = readout(ea, sa.fwd_col, eb, sb.fwd_col);
            if (queries[qi].bidirectional) {
                const auto& ra = rev.at(sa.length);
                const auto& rb = rev.at(sb.length);
                fa += output(ra, sa.rev_col);
                fb += output(rb, sb.rev_col);
                inner += detail::gradient_inner(ra.grads[sa.rev_col], rb.grads[sb.rev_col], p);
                // the two directions have independent readouts, so cross terms vanish
                shared += readout(ra, sa.rev_col, rb, sb.rev_col);
            }
            products[qi].push_back(fa * fb);
            readouts[qi].push_back(shared);
            inners[qi].push_back(inner);
        }
    }

    std::vector<OracleEstimates> result;
    result.reserve(queries.size());
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
        result.push_back({detail::summarize(products[qi], opt.width), detail::summarize(readouts[qi], opt.width),
                          detail::summarize(inners[qi], opt.width)});
    }
    return result;
}

/// The oracle query realizing `variant` on the pair (x, x').
inline OracleQuery variant_query(const Vector& x, const Vector& x_prime, const Variant& variant) {
    const HeadSelection heads = HeadSelection::of(variant);
    return {{detail::ordered_input(x, variant), heads},
            {detail::ordered_input(x_prime, variant), heads},
            variant.bidirectional()};
}

/// Monte Carlo estimate of the CK: mean of f(x) f(x') over independent draws.
inline KernelEstimate empirical_ck(const Vector& x, const Vector& x_prime, const HyperParams& params,
                                   const Variant& variant, const OracleOptions& opt) {
    if (x.size() != x_prime.size()) throw ShapeError("empirical_ck: inputs differ in length");
    const OracleQuery q = variant_query(x, x_prime, variant);
    return estimate_kernels(std::span(&q, 1), params, opt).front().readout_average;
}

/// Monte Carlo estimate of the NTK: mean of <grad f(x), grad f(x')> over independent draws.
inline KernelEstimate empirical_ntk(const Vector& x, const Vector& x_prime, const HyperParams& params,
                                    const Variant& variant, const OracleOptions& opt) {
    if (x.size() != x_prime.size()) throw ShapeError("empirical_ntk: inputs differ in length");
    const OracleQuery q = variant_query(x, x_prime, variant);
    return estimate_kernels(std::span(&q, 1), params, opt).front().gradient_inner;
}

/// Output product and gradient inner product between head `t` on x and head
/// `t_prime` on x' of one plain RNN (zero-based steps).
inline OracleEstimates cross_head(const Vector& x, const Vector& x_prime, int t, int t_prime,
                                  const HyperParams& params, const OracleOptions& opt) {
    if (x.size() != x_prime.size()) throw ShapeError("cross_head: inputs differ in length");
    if (t < 0 || t_prime < 0 || t >= x.size() || t_prime >= x.size()) throw ShapeError("cross_head: step out of range");
    const OracleQuery q{{x, {HeadSelection::Mode::Single, t}}, {x_prime, {HeadSelection::Mode::Single, t_prime}}, false};
    return estimate_kernels(std::span(&q, 1), params, opt).front();
}

}  // namespace rntk
