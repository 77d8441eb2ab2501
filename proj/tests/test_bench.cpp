#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "rntk/bench.hpp"

using namespace rntk;

namespace {

Dataset blobs(int n, int steps, int classes, std::uint64_t seed, double spread = 0.8) {
    std::mt19937_64 g(seed);
    std::normal_distribution<double> d(0.0, spread);
    Dataset ds;
    ds.name = "blobs";
    ds.features.resize(n, steps);
    for (int i = 0; i < n; ++i) {
        const int c = i % classes;
        ds.labels.push_back(c);
        for (int t = 0; t < steps; ++t) ds.features(i, t) = (t % classes == c ? 1.0 : 0.0) + d(g);
    }
    for (int c = 0; c < classes; ++c) ds.class_values.push_back(c);
    return ds;
}

HyperGrid small_grid() {
    HyperGrid g;
    g.sigma_u = {0.5};
    g.sigma_b = {0.1};
    g.depth = {1};
    g.C = {1.0, 100.0};
    g.rbf_gamma = {1.0};
    g.poly_degree = {2};
    return g;
}

Matrix random_rows(int n, int steps, std::uint64_t seed) {
    std::mt19937_64 g(seed);
    std::normal_distribution<double> d;
    Matrix m(n, steps);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = d(g);
    return m;
}

}  // namespace

TEST(SigmaV, PerVariantValues) {
    EXPECT_EQ(sigma_v_for(make_variant(Architecture::RNN), 1), 1.0);
    EXPECT_EQ(sigma_v_for(make_variant(Architecture::RNN), 50), 1.0);
    EXPECT_DOUBLE_EQ(sigma_v_for(make_variant(Architecture::RNNAvg), 4), 0.5);
    EXPECT_DOUBLE_EQ(sigma_v_for(make_variant(Architecture::BiRNNAvg), 2), 0.5);
    EXPECT_DOUBLE_EQ(sigma_v_for(make_variant(Architecture::BiRNN), 9), 1.0 / std::sqrt(2.0));
    EXPECT_THROW(sigma_v_for(make_variant(Architecture::RNN), 0), InvalidInput);
}

TEST(Grid, CountsPerOrdering) {
    const HyperGrid g;
    EXPECT_EQ(g.rntk_configs_per_ordering(), 80u);
    EXPECT_EQ(g.sigma_w, std::sqrt(2.0));
    for (const char* name : {"rnn", "bi-rnn", "rnn-avg", "bi-rnn-avg"}) EXPECT_EQ(make_method(name, g, 7).configs.size(), 80u);
    EXPECT_EQ(make_method("rnn-p", g, 7).configs.size(), 160u);
    EXPECT_EQ(make_method("rbf", g, 7).configs.size(), 25u);
    EXPECT_EQ(make_method("poly", g, 7).configs.size(), 10u);
    EXPECT_THROW(make_method("lstm", g, 7), ConfigError);
}

TEST(Grid, ConfigurationsAreDistinctAndUseDerivedSigmaV) {
    const HyperGrid g;
    const Method m = make_method("rnn-p", g, 9);
    std::set<std::string> labels;
    std::set<InputOrder> orders;
    for (const Config& c : m.configs) {
        labels.insert(c.label());
        orders.insert(c.kernel.variant.order);
        EXPECT_EQ(c.kernel.params.sigma_v, 1.0);
        EXPECT_EQ(c.kernel.params.sigma_w, std::sqrt(2.0));
    }
    EXPECT_EQ(labels.size(), m.configs.size());
    EXPECT_EQ(orders.size(), 2u);
    for (const Config& c : make_method("bi-rnn-avg", g, 8).configs)
        EXPECT_DOUBLE_EQ(c.kernel.params.sigma_v, 0.25);
    for (const Config& c : make_method("rbf", g, 10).configs) EXPECT_LE(c.kernel.gamma, 1.0);
}

TEST(Metrics, FriedmanExample) {
    Matrix acc(2, 2);
    acc << 0.9, 0.8, 0.7, 0.7;
    const auto s = compute_metrics(acc, {"A", "B"});
    EXPECT_DOUBLE_EQ(s[0].friedman, 1.25);
    EXPECT_DOUBLE_EQ(s[1].friedman, 1.75);
}

TEST(Metrics, SingleMethod) {
    Matrix acc(3, 1);
    acc << 0.5, 0.9, 0.1;
    const auto s = compute_metrics(acc, {"only"});
    EXPECT_EQ(s[0].p95, 1.0);
    EXPECT_EQ(s[0].pma, 1.0);
    EXPECT_EQ(s[0].friedman, 1.0);
    EXPECT_NEAR(s[0].acc_mean, 0.5, 1e-15);
    EXPECT_NEAR(s[0].acc_std, std::sqrt(0.32 / 3.0), 1e-15);
}

TEST(Metrics, P95BoundaryIsInclusive) {
    Matrix acc(2, 2);
    acc << 0.8, 0.95 * 0.8, 0.6, 0.95 * 0.6;
    const auto s = compute_metrics(acc, {"A", "B"});
    EXPECT_EQ(s[1].p95, 1.0);
    EXPECT_NEAR(s[1].pma, 0.95, 1e-15);
}

TEST(Metrics, PmaModes) {
    Matrix acc(4, 2);
    acc << 1.0, 0.5, 0.8, 0.8, 0.6, 0.9, 0.5, 1.0;
    const auto ratio = compute_metrics(acc, {"A", "B"});
    const auto strict = compute_metrics(acc, {"A", "B"}, PmaMode::StrictCount);
    EXPECT_NEAR(ratio[0].pma, (1.0 + 1.0 + 0.6 / 0.9 + 0.5) / 4.0, 1e-15);
    EXPECT_EQ(strict[0].pma, 0.5);
    EXPECT_EQ(strict[1].pma, 0.75);
    for (const auto& s : ratio) {
        EXPECT_GE(s.p95, 0.0);
        EXPECT_LE(s.p95, 1.0);
        EXPECT_GE(s.pma, 0.0);
        EXPECT_LE(s.pma, 1.0);
    }
}

TEST(Metrics, RankSumsAndErrors) {
    std::mt19937_64 g(4);
    std::uniform_int_distribution<int> u(0, 5);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t m = 1 + trial % 7;
        std::vector<double> row(m);
        for (double& a : row) a = u(g) / 5.0;  // many ties
        const auto r = rank_row(row);
        double sum = 0.0;
        for (double v : r) sum += v;
        EXPECT_DOUBLE_EQ(sum, m * (m + 1) / 2.0);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j)
                if (row[i] > row[j]) EXPECT_LT(r[i], r[j]);
    }
    EXPECT_THROW(compute_metrics(Matrix(0, 2), {"A", "B"}), InvalidInput);
    Matrix nan(1, 2);
    nan << 0.5, std::nan("");
    EXPECT_THROW(compute_metrics(nan, {"A", "B"}), InvalidInput);
    EXPECT_THROW(compute_metrics(Matrix::Ones(1, 2), {"A"}), ShapeError);
}

TEST(KernelCache, CValuesAndKindsShareOneGram) {
    const HyperGrid g;
    KernelCache cache(random_rows(10, 4, 1), random_rows(3, 4, 2));
    for (const Config& c : make_method("rnn", g, 4).configs) cache.get(c.kernel);
    EXPECT_EQ(cache.computations(), g.sigma_u.size() * g.sigma_b.size() * g.depth.size());
    // bidirectional adds only the flipped ordering
    for (const Config& c : make_method("bi-rnn", g, 4).configs) cache.get(c.kernel);
    EXPECT_EQ(cache.computations(), 2 * g.sigma_u.size() * g.sigma_b.size() * g.depth.size());
    for (const Config& c : make_method("rbf", g, 4).configs) cache.get(c.kernel);
    EXPECT_EQ(cache.computations(), 16u + g.rbf_gamma.size());
}

TEST(KernelCache, ViewsMatchDirectKernels) {
    const Matrix train = random_rows(7, 5, 3), test = random_rows(4, 5, 4);
    KernelCache cache(train, test);
    for (const char* name : {"rnn", "bi-rnn", "rnn-avg", "bi-rnn-avg", "rnn-p"}) {
        for (const Config& c : make_method(name, small_grid(), 5).configs) {
            const auto view = cache.get(c.kernel);
            const GramPair gp = gram(train, c.kernel.params, c.kernel.variant);
            const CrossKernels cx = gram_cross(train, test, c.kernel.params, c.kernel.variant);
            const bool ntk = c.kernel.kind == KernelKind::NTK;
            const Matrix& want = ntk ? gp.ntk : gp.ck;
            const Matrix& want_cross = ntk ? cx.ntk : cx.ck;
            EXPECT_LE((view.train - want).cwiseAbs().maxCoeff(), 1e-12 * want.cwiseAbs().maxCoeff()) << c.label();
            EXPECT_LE((view.cross - want_cross).cwiseAbs().maxCoeff(), 1e-12 * want.cwiseAbs().maxCoeff()) << c.label();
        }
    }
}

TEST(KernelCache, Baselines) {
    Matrix a(2, 2);
    a << 1, 0, 0, 1;
    KernelCache cache(a, a.topRows(1));
    KernelSpec rbf;
    rbf.family = KernelFamily::Rbf;
    rbf.gamma = 0.5;
    const auto r = cache.get(rbf);
    EXPECT_NEAR(r.train(0, 1), std::exp(-1.0), 1e-15);
    EXPECT_EQ(r.train(0, 0), 1.0);
    KernelSpec poly;
    poly.family = KernelFamily::Poly;
    poly.degree = 3;
    const auto p = cache.get(poly);
    EXPECT_NEAR(p.train(0, 0), 1.5 * 1.5 * 1.5, 1e-14);
    EXPECT_NEAR(p.cross(0, 1), 1.0, 1e-15);
}

TEST(Protocol, DeterministicAndComplete) {
    const Dataset d = blobs(40, 3, 2, 8, 0.4);
    const SplitPlan plan = make_splits(40, name_seed(d.name));
    ProtocolOptions opt;
    opt.grid = small_grid();
    opt.methods = {"rnn", "rnn-p", "rbf"};
    const DatasetResult a = run_protocol(d, plan, opt);
    const DatasetResult b = run_protocol(d, plan, opt);
    ASSERT_EQ(a.methods.size(), 3u);
    EXPECT_EQ(a.methods[0].configs_evaluated, opt.grid.rntk_configs_per_ordering());
    EXPECT_EQ(a.methods[1].configs_evaluated, 2 * opt.grid.rntk_configs_per_ordering());
    for (std::size_t m = 0; m < 3; ++m) {
        EXPECT_EQ(a.methods[m].accuracy, b.methods[m].accuracy);
        EXPECT_EQ(a.methods[m].fold_accuracy, b.methods[m].fold_accuracy);
        EXPECT_FALSE(a.methods[m].best.empty());
        EXPECT_GT(a.methods[m].accuracy, 0.8);
    }
    // rnn and rnn-p default share one kernel; flipped adds one; rbf adds one
    EXPECT_EQ(a.validation_gram_computations, 3u);
}

TEST(Protocol, SingleBestConfigurationIsThatModel) {
    const Dataset d = blobs(32, 4, 3, 9, 1.5);
    const SplitPlan plan = make_splits(32, 5);
    ProtocolOptions opt;
    opt.grid = small_grid();
    opt.grid.C = {1.0};
    opt.methods = {"rbf"};
    const DatasetResult r = run_protocol(d, plan, opt);
    ASSERT_EQ(r.methods[0].best.size(), 1u);
    const Config& cfg = r.methods[0].best.front();
    for (std::size_t k = 0; k < 4; ++k) {
        const SplitData s = make_split(d, plan.fold_train(k), plan.folds[k]);
        KernelCache cache(s.train, s.test);
        const auto v = cache.get(cfg.kernel);
        const auto model = train_one_vs_one(v.train, s.train_labels, cfg.C, {}, {0, 1, 2});
        const auto pred = predict(model, v.cross);
        std::size_t hits = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == s.test_labels[i];
        EXPECT_EQ(r.methods[0].fold_accuracy[k], static_cast<double>(hits) / pred.size());
    }
}

TEST(Protocol, SplitNormalizationUsesTrainRowsOnly) {
    Dataset d = blobs(16, 2, 2, 1);
    const std::vector<int> tr{0, 1, 2, 3, 4, 5, 6, 7}, te{8, 9};
    const SplitData a = make_split(d, tr, te);
    d.features.row(9).setConstant(1e6);  // a held-out row cannot shift train statistics
    const SplitData b = make_split(d, tr, te);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.test.row(0), b.test.row(0));
}

TEST(Report, JsonAndCsv) {
    DatasetResult r1, r2;
    r1.name = "x";
    r2.name = "y";
    for (auto* r : {&r1, &r2}) {
        for (const char* m : {"rnn", "rbf"}) {
            MethodResult mr;
            mr.method = m;
            mr.accuracy = r == &r1 ? 0.9 : 0.5;
            r->methods.push_back(mr);
        }
    }
    r2.methods[1].accuracy = 0.6;
    const BenchReport rep = make_report({r1, r2}, {"rnn", "rbf"});
    EXPECT_DOUBLE_EQ(rep.summary[0].friedman, 1.75);
    EXPECT_DOUBLE_EQ(rep.summary[1].friedman, 1.25);
    const auto j = to_json(rep);
    EXPECT_EQ(j["datasets"].size(), 2u);
    EXPECT_THROW(make_report({r1}, {"rnn", "poly"}), ShapeError);
}
