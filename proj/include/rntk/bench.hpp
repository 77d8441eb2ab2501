#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "rntk/dataset.hpp"
#include "rntk/errors.hpp"
#include "rntk/gram_io.hpp"
#include "rntk/kernel.hpp"
#include "rntk/log.hpp"
#include "rntk/params.hpp"
#include "rntk/svm.hpp"

namespace rntk {

/// Output scale per architecture: 1, 1/sqrt(2), 1/sqrt(T), 1/sqrt(2T).
inline double sigma_v_for(const Variant& variant, int steps) {
    if (steps < 1) throw InvalidInput("sigma_v_for: sequence length must be positive");
    const double t = static_cast<double>(steps);
    switch (variant.arch) {
        case Architecture::RNN: return 1.0;
        case Architecture::BiRNN: return 1.0 / std::sqrt(2.0);
        case Architecture::RNNAvg: return 1.0 / std::sqrt(t);
        case Architecture::BiRNNAvg: return 1.0 / std::sqrt(2.0 * t);
    }
    return 1.0;
}

/// Search space of the benchmark. RBF bandwidths are multiplied by 1/T.
struct HyperGrid {
    std::vector<double> sigma_u{0.25, 0.5};
    std::vector<double> sigma_b{0.001, 0.1};
    std::vector<int> depth{1, 2};
    std::vector<double> C{0.01, 1.0, 100.0, 1e4, 1e6};
    double sigma_w = std::sqrt(2.0);
    std::vector<double> rbf_gamma{0.1, 0.5, 1.0, 2.0, 10.0};
    std::vector<int> poly_degree{2, 3};

    /// Configurations per RNN variant and input ordering (CK and NTK both counted).
    [[nodiscard]] std::size_t rntk_configs_per_ordering() const {
        return sigma_u.size() * sigma_b.size() * depth.size() * C.size() * 2;
    }
};

enum class KernelFamily { Rntk, Rbf, Poly };

struct KernelSpec {
    KernelFamily family = KernelFamily::Rntk;
    Variant variant{};
    HyperParams params{};
    KernelKind kind = KernelKind::CK;
    double gamma = 0.0;  ///< RBF: exp(-gamma |x - y|^2)
    int degree = 0;      ///< polynomial: (x.y / T + 1)^degree

    [[nodiscard]] std::string label() const {
        std::ostringstream s;
        s << std::setprecision(6);
        switch (family) {
            case KernelFamily::Rntk:
                s << to_string(variant) << (kind == KernelKind::CK ? " ck" : " ntk") << " L=" << params.depth
                  << " su=" << params.sigma_u << " sb=" << params.sigma_b << " sw=" << params.sigma_w
                  << " sv=" << params.sigma_v;
                break;
            case KernelFamily::Rbf: s << "rbf gamma=" << gamma; break;
            case KernelFamily::Poly: s << "poly d=" << degree; break;
        }
        return s.str();
    }
};

struct Config {
    KernelSpec kernel;
    double C = 1.0;

    [[nodiscard]] std::string label() const {
        std::ostringstream s;
        s << kernel.label() << " C=" << std::setprecision(6) << C;
        return s.str();
    }
};

/// A named classifier family and every configuration it validates.
struct Method {
    std::string name;
    std::vector<Config> configs;
};

inline const std::vector<std::string>& method_names() {
    static const std::vector<std::string> names{"rnn", "bi-rnn", "rnn-avg", "bi-rnn-avg", "rnn-p", "rbf", "poly"};
    return names;
}

/// Builds the validation grid of one method for sequences of length `steps`.
///
/// rnn-p is the plain RNN with the default and the flipped input ordering
/// both entering the grid.
inline Method make_method(const std::string& name, const HyperGrid& grid, int steps) {
    if (steps < 1) throw InvalidInput("make_method: sequence length must be positive");
    Method m{name, {}};
    std::vector<Variant> variants;
    if (name == "rnn-p") {
        variants = {make_variant(Architecture::RNN), make_variant(Architecture::RNN, InputOrder::Flipped)};
    } else if (auto arch = parse_architecture(name)) {
        variants = {make_variant(*arch)};
    }
    for (const Variant& v : variants) {
        for (double su : grid.sigma_u)
            for (double sb : grid.sigma_b)
                for (int depth : grid.depth)
                    for (KernelKind kind : {KernelKind::CK, KernelKind::NTK})
                        for (double c : grid.C) {
                            KernelSpec k;
                            k.variant = v;
                            k.params.sigma_w = grid.sigma_w;
                            k.params.sigma_u = su;
                            k.params.sigma_b = sb;
                            k.params.sigma_v = sigma_v_for(v, steps);
                            k.params.depth = depth;
                            k.kind = kind;
                            m.configs.push_back({k, c});
                        }
    }
    if (name == "rbf") {
        for (double g : grid.rbf_gamma)
            for (double c : grid.C) {
                KernelSpec k;
                k.family = KernelFamily::Rbf;
                k.gamma = g / steps;
                m.configs.push_back({k, c});
            }
    } else if (name == "poly") {
        for (int d : grid.poly_degree)
            for (double c : grid.C) {
                KernelSpec k;
                k.family = KernelFamily::Poly;
                k.degree = d;
                m.configs.push_back({k, c});
            }
    }
    if (m.configs.empty()) throw ConfigError("unknown method '" + name + "'");
    return m;
}

/// Training Gram and test-by-train cross kernel for one split, computed on
/// demand and shared by every configuration that needs the same kernel.
///
/// RNN kernels are cached per (pooling, ordering, sigma_u, sigma_b, sigma_w,
/// L) with sigma_v = 1; both CK and NTK come from one computation and
/// sigma_v^2 is applied on lookup. Bidirectional kernels sum the default and
/// flipped entries.
class KernelCache {
public:
    struct View {
        Matrix train;
        Matrix cross;
    };

    KernelCache(Matrix train, Matrix test, GramOptions opt = {})
        : train_(std::move(train)), test_(std::move(test)), opt_(opt) {}

    View get(const KernelSpec& spec) {
        switch (spec.family) {
            case KernelFamily::Rbf: return baseline(spec);
            case KernelFamily::Poly: return baseline(spec);
            case KernelFamily::Rntk: break;
        }
        const bool ntk = spec.kind == KernelKind::NTK;
        const double scale = spec.params.sigma_v * spec.params.sigma_v;
        const bool pooled = spec.variant.pooled();
        auto pick = [&](const Entry& e) { return View{ntk ? e.train_ntk : e.train_ck, ntk ? e.cross_ntk : e.cross_ck}; };
        if (spec.variant.bidirectional()) {
            View a = pick(rntk(spec.params, pooled, false));
            const View b = pick(rntk(spec.params, pooled, true));
            a.train = scale * (a.train + b.train);
            a.cross = scale * (a.cross + b.cross);
            return a;
        }
        View v = pick(rntk(spec.params, pooled, spec.variant.flipped()));
        v.train *= scale;
        v.cross *= scale;
        return v;
    }

    /// Number of kernel computations performed so far (cache misses).
    [[nodiscard]] std::size_t computations() const { return computations_; }

private:
    struct Entry {
        Matrix train_ck, train_ntk, cross_ck, cross_ntk;
    };

    const Entry& rntk(HyperParams p, bool pooled, bool flipped) {
        p.sigma_v = 1.0;
        std::ostringstream key;
        key << std::setprecision(17) << "rntk " << pooled << flipped << ' ' << p.sigma_u << ' ' << p.sigma_b << ' '
            << p.sigma_w << ' ' << p.depth;
        auto it = entries_.find(key.str());
        if (it != entries_.end()) return it->second;
        const Variant v = make_variant(pooled ? Architecture::RNNAvg : Architecture::RNN,
                                       flipped ? InputOrder::Flipped : InputOrder::Default);
        GramPair g = gram(train_, p, v, opt_);
        CrossKernels x = gram_cross(train_, test_, p, v, opt_);
        ++computations_;
        return entries_.emplace(key.str(), Entry{std::move(g.ck), std::move(g.ntk), std::move(x.ck), std::move(x.ntk)})
            .first->second;
    }

    View baseline(const KernelSpec& spec) {
        const std::string key = spec.label();
        auto it = entries_.find(key);
        if (it == entries_.end()) {
            Entry e;
            e.train_ck = baseline_kernel(spec, train_, train_);
            e.cross_ck = baseline_kernel(spec, test_, train_);
            ++computations_;
            it = entries_.emplace(key, std::move(e)).first;
        }
        return {it->second.train_ck, it->second.cross_ck};
    }

    static Matrix baseline_kernel(const KernelSpec& spec, const Matrix& a, const Matrix& b) {
        const Matrix dot = a * b.transpose();
        if (spec.family == KernelFamily::Poly) {
            const double t = static_cast<double>(a.cols());
            return (dot.array() / t + 1.0).pow(spec.degree).matrix();
        }
        const Vector na = a.rowwise().squaredNorm();
        const Vector nb = b.rowwise().squaredNorm();
        Matrix d2 = (-2.0 * dot).colwise() + na;
        d2.rowwise() += nb.transpose();
        Matrix k = (-spec.gamma * d2.array().max(0.0)).exp().matrix();
        if (&a == &b) k = 0.5 * (k + k.transpose()).eval();
        return k;
    }

    Matrix train_;
    Matrix test_;
    GramOptions opt_;
    std::map<std::string, Entry> entries_;
    std::size_t computations_ = 0;
};

/// Normalized features and labels of one train/test split.
struct SplitData {
    Matrix train;
    Matrix test;
    std::vector<int> train_labels;
    std::vector<int> test_labels;
};

/// Selects the rows of a split and z-scores both sides with training statistics.
inline SplitData make_split(const Dataset& d, const std::vector<int>& train_rows, const std::vector<int>& test_rows) {
    auto [train, test] = normalize(take_rows(d.features, train_rows), take_rows(d.features, test_rows));
    return {std::move(train), std::move(test), take(d.labels, train_rows), take(d.labels, test_rows)};
}

struct ProtocolOptions {
    HyperGrid grid;
    std::vector<std::string> methods = method_names();
    GramOptions gram;
    SmoOptions smo;
};

struct MethodResult {
    std::string method;
    std::size_t configs_evaluated = 0;
    double best_validation = 0.0;
    std::vector<Config> best;  ///< every configuration tying the best validation accuracy
    std::array<double, 4> fold_accuracy{};
    double accuracy = 0.0;  ///< mean over the four folds
};

struct DatasetResult {
    std::string name;
    Eigen::Index samples = 0;
    Eigen::Index steps = 0;
    int classes = 0;
    std::vector<MethodResult> methods;
    std::size_t validation_gram_computations = 0;
    std::size_t gram_computations = 0;
};

namespace detail {

inline double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

// Trains one configuration and predicts the test side; nullopt if SMO failed.
class SplitEvaluator {
public:
    SplitEvaluator(SplitData data, int classes, const ProtocolOptions& opt)
        : data_(std::move(data)), cache_(data_.train, data_.test, opt.gram), smo_(opt.smo) {
        for (int c = 0; c < classes; ++c) label_set_.push_back(c);
    }

    const std::optional<std::vector<int>>& predictions(const Config& cfg) {
        const std::string key = cfg.label();
        auto it = memo_.find(key);
        if (it != memo_.end()) return it->second;
        std::optional<std::vector<int>> out;
        const KernelCache::View k = cache_.get(cfg.kernel);
        try {
            const MultiClassModel model = train_one_vs_one(k.train, data_.train_labels, cfg.C, smo_, label_set_);
            out = predict(model, k.cross);
        } catch (const ConvergenceError& e) {
            warn(std::string(e.what()) + " [" + key + "]");
        }
        return memo_.emplace(key, std::move(out)).first->second;
    }

    [[nodiscard]] const SplitData& data() const { return data_; }
    [[nodiscard]] std::size_t computations() const { return cache_.computations(); }

private:
    SplitData data_;
    KernelCache cache_;
    SmoOptions smo_;
    std::vector<int> label_set_;
    std::map<std::string, std::optional<std::vector<int>>> memo_;
};

inline void warn_missing_classes(const Dataset& d, const SplitData& s, const std::string& phase) {
    std::vector<char> seen(static_cast<std::size_t>(d.num_classes()), 0);
    for (int y : s.train_labels) seen[static_cast<std::size_t>(y)] = 1;
    for (int c = 0; c < d.num_classes(); ++c) {
        if (!seen[static_cast<std::size_t>(c)]) {
            warn(d.name + ": class " + std::to_string(d.class_values[static_cast<std::size_t>(c)]) +
                 " absent from the " + phase + " training rows; its test rows count as errors");
        }
    }
}

}  // namespace detail

/// Runs the full protocol on one dataset:
///   1. every configuration of every method is trained on the training half
///      and scored on the validation half;
///   2. all configurations tying the best validation accuracy are kept;
///   3. for each of the 4 folds, the kept configurations are trained on the
///      other three folds and predict the held-out fold by majority vote
///      (ties to the smallest label);
///   4. the method's accuracy is the mean over folds.
inline DatasetResult run_protocol(const Dataset& d, const SplitPlan& plan, const ProtocolOptions& opt) {
    if (d.size() < 8) throw ShapeError(d.name + ": at least 8 samples are required");
    const int steps = static_cast<int>(d.length());
    std::vector<Method> methods;
    for (const auto& name : opt.methods) methods.push_back(make_method(name, opt.grid, steps));

    DatasetResult result;
    result.name = d.name;
    result.samples = d.size();
    result.steps = d.length();
    result.classes = d.num_classes();

    {
        detail::SplitEvaluator val(make_split(d, plan.train_half, plan.validation_half), d.num_classes(), opt);
        detail::warn_missing_classes(d, val.data(), "validation");
        for (const Method& m : methods) {
            MethodResult r;
            r.method = m.name;
            r.configs_evaluated = m.configs.size();
            double best = -1.0;
            for (const Config& cfg : m.configs) {
                const auto& pred = val.predictions(cfg);
                if (!pred) continue;
                const double acc = detail::accuracy(*pred, val.data().test_labels);
                if (acc > best) {
                    best = acc;
                    r.best.clear();
                }
                if (acc == best) r.best.push_back(cfg);
            }
            if (r.best.empty()) warn(d.name + ": every configuration of " + m.name + " failed to train");
            r.best_validation = std::max(best, 0.0);
            result.methods.push_back(std::move(r));
        }
        result.validation_gram_computations = val.computations();
        result.gram_computations += val.computations();
    }

    for (std::size_t k = 0; k < plan.folds.size(); ++k) {
        detail::SplitEvaluator fold(make_split(d, plan.fold_train(k), plan.folds[k]), d.num_classes(), opt);
        detail::warn_missing_classes(d, fold.data(), "fold " + std::to_string(k + 1));
        const auto& truth = fold.data().test_labels;
        for (MethodResult& r : result.methods) {
            std::vector<std::map<int, int>> tally(truth.size());
            for (const Config& cfg : r.best) {
                const auto& pred = fold.predictions(cfg);
                if (!pred) continue;
                for (std::size_t i = 0; i < truth.size(); ++i) ++tally[i][(*pred)[i]];
            }
            std::vector<int> voted(truth.size(), -1);
            for (std::size_t i = 0; i < truth.size(); ++i) {
                if (!tally[i].empty()) voted[i] = vote(tally[i]);
            }
            r.fold_accuracy[k] = detail::accuracy(voted, truth);
        }
        result.gram_computations += fold.computations();
    }
    for (MethodResult& r : result.methods) {
        double sum = 0.0;
        for (double a : r.fold_accuracy) sum += a;
        r.accuracy = sum / static_cast<double>(r.fold_accuracy.size());
    }
    return result;
}

enum class PmaMode {
    RatioMean,    ///< mean over datasets of accuracy / best accuracy
    StrictCount,  ///< fraction of datasets where the method attains the best accuracy
};

struct MethodSummary {
    std::string method;
    double acc_mean = 0.0;
    double acc_std = 0.0;  ///< population standard deviation over datasets
    double p95 = 0.0;
    double pma = 0.0;
    double friedman = 0.0;
};

/// Ranks of one row, 1 for the highest accuracy; tied entries share the mean rank.
inline std::vector<double> rank_row(const std::vector<double>& accs) {
    const std::size_t m = accs.size();
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return accs[a] > accs[b]; });
    std::vector<double> ranks(m);
    for (std::size_t i = 0; i < m;) {
        std::size_t j = i;
        while (j + 1 < m && accs[order[j + 1]] == accs[order[i]]) ++j;
        const double mean_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
        i = j + 1;
    }
    return ranks;
}

/// Aggregates a datasets x methods accuracy table.
inline std::vector<MethodSummary> compute_metrics(const Matrix& acc, const std::vector<std::string>& methods,
                                                  PmaMode pma = PmaMode::RatioMean) {
    if (acc.rows() == 0 || acc.cols() == 0) throw InvalidInput("compute_metrics: empty accuracy table");
    if (static_cast<std::size_t>(acc.cols()) != methods.size()) throw ShapeError("compute_metrics: method count differs");
    if (!acc.allFinite()) throw InvalidInput("compute_metrics: missing or non-finite entries");
    const auto n = static_cast<double>(acc.rows());
    std::vector<MethodSummary> out(methods.size());
    for (std::size_t j = 0; j < methods.size(); ++j) {
        const auto col = acc.col(static_cast<Eigen::Index>(j));
        out[j].method = methods[j];
        out[j].acc_mean = col.mean();
        out[j].acc_std = std::sqrt((col.array() - out[j].acc_mean).square().sum() / n);
    }
    for (Eigen::Index i = 0; i < acc.rows(); ++i) {
        const double best = acc.row(i).maxCoeff();
        std::vector<double> row(acc.cols());
        for (Eigen::Index j = 0; j < acc.cols(); ++j) row[static_cast<std::size_t>(j)] = acc(i, j);
        const auto ranks = rank_row(row);
        for (std::size_t j = 0; j < methods.size(); ++j) {
            const double a = row[j];
            if (a >= 0.95 * best) out[j].p95 += 1.0;
            if (pma == PmaMode::StrictCount) {
                out[j].pma += a == best ? 1.0 : 0.0;
            } else {
                out[j].pma += best > 0.0 ? a / best : 1.0;
            }
            out[j].friedman += ranks[j];
        }
    }
    for (auto& s : out) {
        s.p95 /= n;
        s.pma /= n;
        s.friedman /= n;
    }
    return out;
}

struct BenchReport {
    std::vector<std::string> methods;
    std::vector<DatasetResult> datasets;
    Matrix accuracy;  ///< datasets x methods
    std::vector<MethodSummary> summary;
    PmaMode pma_mode = PmaMode::RatioMean;
};

inline BenchReport make_report(std::vector<DatasetResult> datasets, std::vector<std::string> methods,
                               PmaMode pma = PmaMode::RatioMean) {
    BenchReport rep;
    rep.methods = std::move(methods);
    rep.datasets = std::move(datasets);
    rep.pma_mode = pma;
    rep.accuracy.resize(static_cast<Eigen::Index>(rep.datasets.size()), static_cast<Eigen::Index>(rep.methods.size()));
    for (std::size_t i = 0; i < rep.datasets.size(); ++i) {
        const auto& rs = rep.datasets[i].methods;
        for (std::size_t j = 0; j < rep.methods.size(); ++j) {
            auto it = std::find_if(rs.begin(), rs.end(), [&](const MethodResult& r) { return r.method == rep.methods[j]; });
            if (it == rs.end()) throw ShapeError("make_report: " + rep.datasets[i].name + " lacks method " + rep.methods[j]);
            rep.accuracy(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = it->accuracy;
        }
    }
    rep.summary = compute_metrics(rep.accuracy, rep.methods, pma);
    return rep;
}

inline nlohmann::json to_json(const BenchReport& rep) {
    using nlohmann::json;
    json j;
    j["methods"] = rep.methods;
    j["pma_mode"] = rep.pma_mode == PmaMode::RatioMean ? "ratio-mean" : "strict-count";
    j["datasets"] = json::array();
    for (const auto& d : rep.datasets) {
        json jd{{"name", d.name},
                {"samples", d.samples},
                {"length", d.steps},
                {"classes", d.classes},
                {"gram_computations", d.gram_computations},
                {"validation_gram_computations", d.validation_gram_computations}};
        std::vector<double> accs;
        for (const auto& r : d.methods) accs.push_back(r.accuracy);
        const auto ranks = rank_row(accs);
        jd["methods"] = json::array();
        for (std::size_t k = 0; k < d.methods.size(); ++k) {
            const auto& r = d.methods[k];
            json best = json::array();
            for (const auto& c : r.best) best.push_back(c.label());
            jd["methods"].push_back({{"method", r.method},
                                     {"accuracy", r.accuracy},
                                     {"fold_accuracy", r.fold_accuracy},
                                     {"validation_accuracy", r.best_validation},
                                     {"configs_evaluated", r.configs_evaluated},
                                     {"rank", ranks[k]},
                                     {"best_configs", best}});
        }
        j["datasets"].push_back(std::move(jd));
    }
    j["summary"] = json::array();
    for (const auto& s : rep.summary) {
        j["summary"].push_back({{"method", s.method},
                                {"acc_mean", s.acc_mean},
                                {"acc_std", s.acc_std},
                                {"p95", s.p95},
                                {"pma", s.pma},
                                {"friedman_rank", s.friedman}});
    }
    return j;
}

inline void write_report_json(const std::filesystem::path& path, const BenchReport& rep) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << to_json(rep).dump(2) << '\n';
}

/// One line per method: method,acc_mean,acc_std,p95,pma,friedman_rank.
inline void write_summary_csv(const std::filesystem::path& path, const BenchReport& rep) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    out << "method,acc_mean,acc_std,p95,pma,friedman_rank\n";
    for (const auto& s : rep.summary) {
        out << s.method << ',' << s.acc_mean << ',' << s.acc_std << ',' << s.p95 << ',' << s.pma << ',' << s.friedman
            << '\n';
    }
}

}  // namespace rntk
