#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rntk/errors.hpp"
#include "rntk/kernel.hpp"
#include "rntk/log.hpp"

// C-SVM on precomputed kernels: an SMO dual solver for the binary problem
//
//   max  sum_i a_i - 1/2 sum_ij a_i a_j y_i y_j K_ij
//   s.t. 0 <= a_i <= C,  sum_i a_i y_i = 0
//
// and a one-vs-one reduction for multiclass labels.

namespace rntk {

struct SmoOptions {
    double tol = 1e-3;
    long max_iterations = 10'000'000;
};

/// Trained binary classifier. `support` indexes the training rows the
/// model was fit on; `coef` holds a_i * y_i for those rows.
struct DualModel {
    std::vector<int> support;
    std::vector<double> coef;
    double bias = 0.0;
    double C = 0.0;
    /// (label predicted for decision >= 0, label predicted for decision < 0)
    std::pair<int, int> class_pair{+1, -1};
    /// Full unsigned dual vector over the training rows (empty for constant models).
    std::vector<double> alpha;
    long iterations = 0;
    /// Set when the pair had fewer than two classes in training.
    std::optional<int> constant_label;

    /// sum_k coef_k K(x, support_k) + bias, reading kernel values from `row`.
    template <class Row>
    [[nodiscard]] double decision(const Row& row) const {
        double d = bias;
        for (std::size_t k = 0; k < support.size(); ++k) d += coef[k] * row(support[k]);
        return d;
    }

    template <class Row>
    [[nodiscard]] int predict(const Row& row) const {
        if (constant_label) return *constant_label;
        return decision(row) >= 0.0 ? class_pair.first : class_pair.second;
    }
};

namespace detail {

inline void check_binary_problem(const Matrix& gram, std::span<const int> y) {
    if (gram.rows() != gram.cols()) throw ShapeError("svm: Gram matrix is not square");
    if (static_cast<std::size_t>(gram.rows()) != y.size()) throw ShapeError("svm: label count differs from Gram size");
    for (int v : y) {
        if (v != 1 && v != -1) throw InvalidInput("svm: binary labels must be +1 or -1");
    }
}

inline bool in_up(int y, double a, double C) { return (y > 0 && a < C) || (y < 0 && a > 0.0); }
inline bool in_low(int y, double a, double C) { return (y > 0 && a > 0.0) || (y < 0 && a < C); }

}  // namespace detail

/// Dual objective sum(a) - 1/2 a^T Q a with Q_ij = y_i y_j K_ij.
inline double dual_objective(const Matrix& gram, std::span<const int> y, std::span<const double> alpha) {
    const auto n = static_cast<Eigen::Index>(y.size());
    Vector ya(n);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        ya[i] = alpha[i] * y[i];
        sum += alpha[i];
    }
    return sum - 0.5 * ya.dot(gram * ya);
}

/// Maximal KKT violation m(a) - M(a); the dual is tol-optimal when this is <= tol.
inline double kkt_violation(const Matrix& gram, std::span<const int> y, std::span<const double> alpha, double C) {
    const auto n = static_cast<Eigen::Index>(y.size());
    Vector ya(n);
    for (Eigen::Index i = 0; i < n; ++i) ya[i] = alpha[i] * y[i];
    const Vector ka = gram * ya;
    double up = -std::numeric_limits<double>::infinity();
    double low = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i) {
        // -y_i * grad_i with grad = Q a - 1
        const double v = -y[i] * (y[i] * ka[i] - 1.0);
        if (detail::in_up(y[i], alpha[i], C)) up = std::max(up, v);
        if (detail::in_low(y[i], alpha[i], C)) low = std::min(low, v);
    }
    if (!std::isfinite(up) || !std::isfinite(low)) return 0.0;
    return up - low;
}

namespace detail {

struct SmoResult {
    std::vector<double> alpha;
    double bias = 0.0;
    long iterations = 0;
    bool converged = false;
};

// Maximal-violating-pair SMO without shrinking.
inline SmoResult smo_solve(const Matrix& k, std::span<const int> y, double C, const SmoOptions& opt) {
    constexpr double tau = 1e-12;
    const auto n = static_cast<Eigen::Index>(y.size());
    std::vector<double> a(n, 0.0);
    std::vector<double> grad(n, -1.0);  // Q a - 1
    SmoResult res;
    for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
        Eigen::Index i = -1, j = -1;
        double up = -std::numeric_limits<double>::infinity();
        double low = std::numeric_limits<double>::infinity();
        for (Eigen::Index t = 0; t < n; ++t) {
            const double v = -y[t] * grad[t];
            if (in_up(y[t], a[t], C) && v > up) {
                up = v;
                i = t;
            }
            if (in_low(y[t], a[t], C) && v < low) {
                low = v;
                j = t;
            }
        }
        if (i < 0 || j < 0 || up - low < opt.tol) {
            res.converged = true;
            break;
        }

        const double old_i = a[i], old_j = a[j];
        double quad = k(i, i) + k(j, j) - 2.0 * k(i, j);
        if (quad <= 0.0) quad = tau;
        if (y[i] != y[j]) {
            const double delta = (-grad[i] - grad[j]) / quad;
            const double diff = a[i] - a[j];
            a[i] += delta;
            a[j] += delta;
            if (diff > 0.0) {
                if (a[j] < 0.0) {
                    a[j] = 0.0;
                    a[i] = diff;
                }
            } else if (a[i] < 0.0) {
                a[i] = 0.0;
                a[j] = -diff;
            }
            if (diff > 0.0) {
                if (a[i] > C) {
                    a[i] = C;
                    a[j] = C - diff;
                }
            } else if (a[j] > C) {
                a[j] = C;
                a[i] = C + diff;
            }
        } else {
            const double delta = (grad[i] - grad[j]) / quad;
            const double sum = a[i] + a[j];
            a[i] -= delta;
            a[j] += delta;
            if (sum > C) {
                if (a[i] > C) {
                    a[i] = C;
                    a[j] = sum - C;
                }
                if (a[j] > C) {
                    a[j] = C;
                    a[i] = sum - C;
                }
            } else {
                if (a[j] < 0.0) {
                    a[j] = 0.0;
                    a[i] = sum;
                }
                if (a[i] < 0.0) {
                    a[i] = 0.0;
                    a[j] = sum;
                }
            }
        }

        const double di = (a[i] - old_i) * y[i];
        const double dj = (a[j] - old_j) * y[j];
        for (Eigen::Index t = 0; t < n; ++t) grad[t] += y[t] * (k(t, i) * di + k(t, j) * dj);
    }

    // Bias: average over free vectors, otherwise the midpoint of the feasible interval.
    double free_sum = 0.0;
    int free_count = 0;
    double ub = std::numeric_limits<double>::infinity();
    double lb = -std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < n; ++t) {
        const double yg = y[t] * grad[t];
        if (a[t] > 0.0 && a[t] < C) {
            free_sum += yg;
            ++free_count;
        } else if ((y[t] > 0 && a[t] >= C) || (y[t] < 0 && a[t] <= 0.0)) {
            ub = std::min(ub, yg);
        } else {
            lb = std::max(lb, yg);
        }
    }
    double rho;
    if (free_count > 0) {
        rho = free_sum / free_count;
    } else if (std::isfinite(ub) && std::isfinite(lb)) {
        rho = 0.5 * (ub + lb);
    } else {
        rho = std::isfinite(ub) ? ub : (std::isfinite(lb) ? lb : 0.0);
    }
    res.alpha = std::move(a);
    res.bias = -rho;
    return res;
}

}  // namespace detail

/// Trains a binary C-SVM on a precomputed Gram matrix with labels in {+1, -1}.
///
/// Stops when the maximal KKT violation drops below `opt.tol`. If the
/// iteration cap is reached and the Gram has an eigenvalue below
/// -1e-6 * trace / N, warns, shifts the diagonal by |lambda_min| and retries
/// once; any remaining failure raises ConvergenceError.
inline DualModel smo_train(const Matrix& gram, std::span<const int> y, double C, const SmoOptions& opt = {}) {
    detail::check_binary_problem(gram, y);
    if (!(C > 0.0) || !std::isfinite(C)) throw InvalidInput("svm: C must be positive and finite");
    const bool has_pos = std::find(y.begin(), y.end(), 1) != y.end();
    const bool has_neg = std::find(y.begin(), y.end(), -1) != y.end();
    if (!has_pos || !has_neg) throw DegenerateProblem("svm: training labels contain a single class");

    detail::SmoResult res = detail::smo_solve(gram, y, C, opt);
    if (!res.converged) {
        const auto n = static_cast<double>(gram.rows());
        const double lambda_min = Eigen::SelfAdjointEigenSolver<Matrix>(gram, Eigen::EigenvaluesOnly).eigenvalues()(0);
        if (lambda_min < -1e-6 * gram.trace() / n) {
            warn("svm: Gram matrix not positive semi-definite (lambda_min = " + std::to_string(lambda_min) +
                 "); retrying with diagonal jitter");
            Matrix shifted = gram;
            shifted.diagonal().array() += std::abs(lambda_min);
            res = detail::smo_solve(shifted, y, C, opt);
        }
        if (!res.converged) {
            throw ConvergenceError("svm: SMO did not converge within " + std::to_string(opt.max_iterations) +
                                   " iterations");
        }
    }

    DualModel m;
    m.C = C;
    m.bias = res.bias;
    m.iterations = res.iterations;
    for (std::size_t i = 0; i < res.alpha.size(); ++i) {
        if (res.alpha[i] > 0.0) {
            m.support.push_back(static_cast<int>(i));
            m.coef.push_back(res.alpha[i] * y[i]);
        }
    }
    m.alpha = std::move(res.alpha);
    return m;
}

/// One-vs-one ensemble over a label set.
struct MultiClassModel {
    std::vector<int> labels;  ///< sorted label set
    std::vector<DualModel> models;
    Eigen::Index train_size = 0;
};

/// Fits one binary model per unordered pair of `label_set` (defaults to the
/// labels present). A pair with only one class in training predicts that
/// class; a pair with neither predicts the most frequent training label.
inline MultiClassModel train_one_vs_one(const Matrix& gram, std::span<const int> labels, double C,
                                        const SmoOptions& opt = {}, std::vector<int> label_set = {}) {
    if (gram.rows() != gram.cols()) throw ShapeError("svm: Gram matrix is not square");
    if (static_cast<std::size_t>(gram.rows()) != labels.size()) throw ShapeError("svm: label count differs from Gram size");
    if (labels.empty()) throw ShapeError("svm: empty training set");

    std::map<int, int> counts;
    for (int v : labels) ++counts[v];
    if (label_set.empty()) {
        for (const auto& [v, c] : counts) label_set.push_back(v);
    }
    std::sort(label_set.begin(), label_set.end());
    label_set.erase(std::unique(label_set.begin(), label_set.end()), label_set.end());

    int majority = counts.begin()->first;
    for (const auto& [v, c] : counts) {
        if (c > counts[majority]) majority = v;
    }

    MultiClassModel mc;
    mc.labels = label_set;
    mc.train_size = gram.rows();
    for (std::size_t p = 0; p < label_set.size(); ++p) {
        for (std::size_t q = p + 1; q < label_set.size(); ++q) {
            const int first = label_set[p], second = label_set[q];
            std::vector<int> idx, y;
            for (std::size_t i = 0; i < labels.size(); ++i) {
                if (labels[i] == first || labels[i] == second) {
                    idx.push_back(static_cast<int>(i));
                    y.push_back(labels[i] == first ? 1 : -1);
                }
            }
            const bool has_first = counts.count(first) > 0;
            const bool has_second = counts.count(second) > 0;
            DualModel m;
            m.class_pair = {first, second};
            m.C = C;
            if (has_first && has_second) {
                const Matrix sub = gram(idx, idx);
                m = smo_train(sub, y, C, opt);
                m.class_pair = {first, second};
                for (int& s : m.support) s = idx[s];
            } else {
                m.constant_label = has_first ? first : (has_second ? second : majority);
                warn("svm: classes " + std::to_string(first) + "/" + std::to_string(second) +
                     " not both present in training; pair model predicts " + std::to_string(*m.constant_label));
            }
            mc.models.push_back(std::move(m));
        }
    }
    if (label_set.size() == 1) {
        DualModel m;
        m.constant_label = label_set.front();
        mc.models.push_back(std::move(m));
    }
    return mc;
}

/// Majority vote over pair models; ties go to the smallest label.
inline int vote(const std::map<int, int>& tally) {
    int best = tally.begin()->first;
    for (const auto& [label, count] : tally) {
        if (count > tally.at(best)) best = label;
    }
    return best;
}

/// Predicts labels for every row of `cross` (test x train kernel values).
inline std::vector<int> predict(const MultiClassModel& model, const Matrix& cross) {
    if (cross.cols() != model.train_size) throw ShapeError("predict: kernel columns differ from the training size");
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(cross.rows()));
    for (Eigen::Index i = 0; i < cross.rows(); ++i) {
        std::map<int, int> tally;
        for (int label : model.labels) tally[label] = 0;
        const auto row = cross.row(i);
        for (const auto& m : model.models) ++tally[m.predict(row)];
        out.push_back(vote(tally));
    }
    return out;
}

}  // namespace rntk
