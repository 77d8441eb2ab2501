#pragma once

#include <chrono>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rntk/kernel.hpp"
#include "rntk/params.hpp"

namespace rntk {

struct TimingPoint {
    std::string sweep;  ///< "N", "T" or "L"
    int n = 0;
    int steps = 0;
    int depth = 0;
    double seconds = 0.0;  ///< mean wall time of one gram call
    double ratio = 0.0;    ///< seconds / previous point of the same sweep; 0 for the first
};

struct TimingOptions {
    std::vector<int> n_values{100, 200, 400};
    std::vector<int> t_values{10, 20, 40};
    std::vector<int> l_values{1, 2, 4};
    int fixed_n = 200;
    int fixed_t = 20;
    int fixed_l = 1;
    int repetitions = 3;
    std::uint64_t seed = 0;
    GramOptions gram;
};

/// Mean wall time of `gram` on standard normal data, over fresh datasets per repetition.
inline double time_gram(int n, int steps, int depth, int repetitions, std::uint64_t seed, const GramOptions& opt = {}) {
    std::mt19937_64 engine(seed);
    std::normal_distribution<double> normal;
    HyperParams p;
    p.sigma_u = 0.5;
    p.sigma_b = 0.1;
    p.depth = depth;
    double total = 0.0;
    for (int r = 0; r < repetitions; ++r) {
        Matrix data(n, steps);
        for (Eigen::Index k = 0; k < data.size(); ++k) data.data()[k] = normal(engine);
        const auto start = std::chrono::steady_clock::now();
        const GramPair g = gram(data, p, make_variant(Architecture::RNN), opt);
        const auto stop = std::chrono::steady_clock::now();
        total += std::chrono::duration<double>(stop - start).count();
        if (g.ck.rows() != n) throw Error("time_gram: unexpected Gram size");
    }
    return total / repetitions;
}

/// Times the N, T and L sweeps, each varying one quantity around the fixed point.
inline std::vector<TimingPoint> timing_sweep(const TimingOptions& opt) {
    if (opt.repetitions < 1) throw ConfigError("timing: repetitions must be positive");
    std::vector<TimingPoint> out;
    auto sweep = [&](const std::string& name, const std::vector<int>& values) {
        double prev = 0.0;
        for (int v : values) {
            TimingPoint pt{name, opt.fixed_n, opt.fixed_t, opt.fixed_l, 0.0, 0.0};
            if (name == "N") pt.n = v;
            if (name == "T") pt.steps = v;
            if (name == "L") pt.depth = v;
            pt.seconds = time_gram(pt.n, pt.steps, pt.depth, opt.repetitions, opt.seed, opt.gram);
            pt.ratio = prev > 0.0 ? pt.seconds / prev : 0.0;
            prev = pt.seconds;
            out.push_back(pt);
        }
    };
    sweep("N", opt.n_values);
    sweep("T", opt.t_values);
    sweep("L", opt.l_values);
    return out;
}

}  // namespace rntk
