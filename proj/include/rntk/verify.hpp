#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "json.hpp"

#include "rntk/gram_io.hpp"
#include "rntk/kernel.hpp"
#include "rntk/oracle.hpp"
#include "rntk/params.hpp"

namespace rntk {

/// Grid of analytic-vs-Monte-Carlo comparisons.
struct VerifyOptions {
    std::vector<int> depths{1, 2};
    std::vector<int> lengths{2, 5};
    std::vector<Variant> variants{make_variant(Architecture::RNN), make_variant(Architecture::BiRNN),
                                  make_variant(Architecture::RNNAvg), make_variant(Architecture::BiRNNAvg)};
    double sigma_w = std::sqrt(2.0);
    double sigma_u = 0.5;
    double sigma_b = 0.1;
    double sigma_v = 1.0;
    OracleOptions oracle;
    double threshold = 3.0;  ///< maximal |z| for a pass
};

struct VerifyRecord {
    Variant variant;
    int depth = 1;
    int steps = 1;
    KernelKind kind = KernelKind::CK;
    double analytic = 0.0;
    KernelEstimate estimate;
    double z_score = 0.0;
    bool pass = false;
};

/// Random unit-norm pair of length `steps`, deterministic in `seed`.
inline std::pair<Vector, Vector> unit_pair(int steps, std::uint64_t seed) {
    std::mt19937_64 engine(seed ^ (0x51ed2701ull * static_cast<std::uint64_t>(steps)));
    std::normal_distribution<double> normal;
    Vector x(steps), y(steps);
    for (int i = 0; i < steps; ++i) x(i) = normal(engine);
    for (int i = 0; i < steps; ++i) y(i) = normal(engine);
    return {x.normalized(), y.normalized()};
}

/// Compares analytic CK and NTK with the oracle for every (variant, L, T).
/// One batch of weight draws per depth serves every variant and length.
inline std::vector<VerifyRecord> run_verification(const VerifyOptions& opt) {
    std::vector<VerifyRecord> out;
    for (int depth : opt.depths) {
        HyperParams p;
        p.sigma_w = opt.sigma_w;
        p.sigma_u = opt.sigma_u;
        p.sigma_b = opt.sigma_b;
        p.sigma_v = opt.sigma_v;
        p.depth = depth;
        p.validate();
        std::vector<OracleQuery> queries;
        std::vector<VerifyRecord> pending;
        for (int steps : opt.lengths) {
            const auto [x, y] = unit_pair(steps, opt.oracle.seed);
            for (const Variant& v : opt.variants) {
                const KernelValue k = kernel_pair(x, y, p, v);
                queries.push_back(variant_query(x, y, v));
                pending.push_back({v, depth, steps, KernelKind::CK, k.ck, {}, 0.0, false});
                pending.push_back({v, depth, steps, KernelKind::NTK, k.ntk, {}, 0.0, false});
            }
        }
        OracleOptions o = opt.oracle;
        o.seed = opt.oracle.seed + static_cast<std::uint64_t>(depth);
        const auto est = estimate_kernels(queries, p, o);
        for (std::size_t q = 0; q < est.size(); ++q) {
            for (int k = 0; k < 2; ++k) {
                VerifyRecord r = pending[2 * q + static_cast<std::size_t>(k)];
                r.estimate = k == 0 ? est[q].readout_average : est[q].gradient_inner;
                r.z_score = r.estimate.z_score(r.analytic);
                r.pass = r.z_score <= opt.threshold;
                out.push_back(r);
            }
        }
    }
    return out;
}

inline nlohmann::json to_json(const std::vector<VerifyRecord>& records, const VerifyOptions& opt) {
    using nlohmann::json;
    json j;
    j["width"] = opt.oracle.width;
    j["trials"] = opt.oracle.trials;
    j["seed"] = opt.oracle.seed;
    j["threshold"] = opt.threshold;
    j["results"] = json::array();
    bool all = true;
    for (const auto& r : records) {
        all = all && r.pass;
        j["results"].push_back({{"variant", to_string(r.variant)},
                                {"L", r.depth},
                                {"T", r.steps},
                                {"kernel", r.kind == KernelKind::CK ? "ck" : "ntk"},
                                {"analytic", r.analytic},
                                {"empirical_mean", r.estimate.mean},
                                {"stderr", r.estimate.std_error},
                                {"z_score", r.z_score},
                                {"pass", r.pass}});
    }
    j["pass"] = all;
    return j;
}

}  // namespace rntk
