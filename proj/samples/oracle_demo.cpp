// Analytic NTK of one input pair against wide random networks.

#include <iostream>

#include "rntk/rntk.hpp"

int main() {
    using namespace rntk;
    const auto [x, y] = unit_pair(4, 1);
    HyperParams p;
    p.sigma_u = 0.5;
    p.sigma_b = 0.1;
    const Variant v = make_variant(Architecture::RNN);
    const KernelValue exact = kernel_pair(x, y, p, v);
    std::cout << "analytic ck " << exact.ck << " ntk " << exact.ntk << '\n';
    for (int width : {50, 200, 1000}) {
        OracleOptions opt;
        opt.width = width;
        opt.trials = 20;
        opt.seed = 9;
        const OracleQuery q = variant_query(x, y, v);
        const OracleEstimates e = estimate_kernels(std::span(&q, 1), p, opt).front();
        std::cout << "n=" << width << "  ck " << e.readout_average.mean << " +- " << e.readout_average.std_error << "  ntk "
                  << e.gradient_inner.mean << " +- " << e.gradient_inner.std_error << '\n';
    }
}
