// Gram matrices of a small random dataset under each architecture.

#include <iostream>
#include <random>

#include "rntk/rntk.hpp"

int main() {
    using namespace rntk;
    std::mt19937_64 engine(3);
    std::normal_distribution<double> normal;
    Matrix data(6, 10);
    for (Eigen::Index k = 0; k < data.size(); ++k) data.data()[k] = normal(engine);

    HyperParams p;
    p.sigma_u = 0.5;
    p.sigma_b = 0.1;
    p.depth = 2;
    for (Architecture arch : {Architecture::RNN, Architecture::BiRNN, Architecture::RNNAvg, Architecture::BiRNNAvg}) {
        const Variant v = make_variant(arch);
        p.sigma_v = sigma_v_for(v, static_cast<int>(data.cols()));
        const GramPair g = gram(data, p, v);
        std::cout << to_string(v) << " (sigma_v = " << p.sigma_v << ")\nCK\n" << g.ck << "\nNTK\n" << g.ntk << "\n\n";
    }

    // a single pair through the scalar recursion
    const Vector x = data.row(0).transpose(), y = data.row(1).transpose();
    p.sigma_v = 1.0;
    const PairOutputs o = kernel_pair(x, y, p);
    std::cout << "pair: ck_last " << o.ck_last << " ntk_last " << o.ntk_last << " ck_avg " << o.ck_avg << " ntk_avg "
              << o.ntk_avg << '\n';
}
