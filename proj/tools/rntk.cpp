// rntk: Gram computation, oracle verification, benchmark runs and timing sweeps.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <omp.h>

#include "CLI11.hpp"

#include "rntk/rntk.hpp"

namespace fs = std::filesystem;
using namespace rntk;

namespace {

const std::vector<std::string> kArchitectures{"rnn", "bi-rnn", "rnn-avg", "bi-rnn-avg"};

struct Common {
    int threads = 0;
    long tile = 256;
};

void apply_threads(const Common& c) {
    int threads = c.threads;
    if (threads <= 0) {
        if (const char* env = std::getenv("RNTK_THREADS")) {
            try {
                threads = std::stoi(env);
            } catch (const std::exception&) {
                throw ConfigError(std::string("RNTK_THREADS is not an integer: ") + env);
            }
        }
    }
    if (threads > 0) omp_set_num_threads(threads);
}

struct GramArgs {
    std::string data;
    std::string out;
    std::string variant = "rnn";
    std::string order = "default";
    int depth = 1;
    double sigma_w = std::sqrt(2.0);
    double sigma_u = 1.0;
    double sigma_b = 0.0;
    double sigma_v = 0.0;
    bool csv = false;
    bool normalize = false;
};

int cmd_gram(const GramArgs& a, const Common& c) {
    Dataset d = load_dataset(a.data);
    if (a.normalize) d.features = normalize(d.features, d.features).first;
    const Variant v = make_variant(*parse_architecture(a.variant),
                                   a.order == "flipped" ? InputOrder::Flipped : InputOrder::Default);
    HyperParams p;
    p.sigma_w = a.sigma_w;
    p.sigma_u = a.sigma_u;
    p.sigma_b = a.sigma_b;
    p.sigma_v = a.sigma_v > 0.0 ? a.sigma_v : sigma_v_for(v, static_cast<int>(d.length()));
    p.depth = a.depth;
    GramOptions opt;
    opt.tile = c.tile;
    const GramPair g = gram(d.features, p, v, opt);
    fs::create_directories(a.out);
    const fs::path dir(a.out);
    write_gram(dir / "ck.gram", g.ck, KernelKind::CK, v);
    write_gram(dir / "ntk.gram", g.ntk, KernelKind::NTK, v);
    if (a.csv) {
        write_csv(dir / "ck.csv", g.ck);
        write_csv(dir / "ntk.csv", g.ntk);
    }
    std::cout << "wrote " << (dir / "ck.gram").string() << " and " << (dir / "ntk.gram").string() << " (" << g.ck.rows()
              << "x" << g.ck.cols() << ", " << to_string(v) << ", L=" << p.depth << ", sigma_v=" << p.sigma_v << ")\n";
    return 0;
}

struct VerifyArgs {
    std::vector<int> depths{1, 2};
    std::vector<int> lengths{2, 5};
    std::vector<std::string> variants = kArchitectures;
    int width = 4000;
    int trials = 50;
    std::uint64_t seed = 0;
    double sigma_u = 0.5;
    double sigma_b = 0.1;
    double sigma_w = std::sqrt(2.0);
    std::string out;
};

int cmd_verify(const VerifyArgs& a) {
    VerifyOptions opt;
    opt.depths = a.depths;
    opt.lengths = a.lengths;
    opt.variants.clear();
    for (const auto& name : a.variants) opt.variants.push_back(make_variant(*parse_architecture(name)));
    opt.sigma_u = a.sigma_u;
    opt.sigma_b = a.sigma_b;
    opt.sigma_w = a.sigma_w;
    opt.oracle.width = a.width;
    opt.oracle.trials = a.trials;
    opt.oracle.seed = a.seed;
    const auto records = run_verification(opt);
    const auto report = to_json(records, opt);
    if (a.out.empty()) {
        std::cout << report.dump(2) << '\n';
    } else {
        std::ofstream(a.out) << report.dump(2) << '\n';
    }
    bool ok = true;
    for (const auto& r : records) {
        if (!r.pass) {
            ok = false;
            std::cerr << "FAIL " << to_string(r.variant) << " L=" << r.depth << " T=" << r.steps << ' '
                      << (r.kind == KernelKind::CK ? "ck" : "ntk") << " z=" << r.z_score << '\n';
        }
    }
    return ok ? 0 : 1;
}

struct BenchArgs {
    std::vector<std::string> inputs;
    std::vector<std::string> methods = method_names();
    std::string out_json = "bench_report.json";
    std::string out_csv = "bench_summary.csv";
    bool strict_pma = false;
};

std::vector<fs::path> dataset_files(const std::vector<std::string>& inputs) {
    std::vector<fs::path> files;
    for (const auto& in : inputs) {
        if (fs::is_directory(in)) {
            std::vector<fs::path> found;
            for (const auto& e : fs::directory_iterator(in)) {
                if (e.is_regular_file() && e.path().extension() == ".csv") found.push_back(e.path());
            }
            std::sort(found.begin(), found.end());
            files.insert(files.end(), found.begin(), found.end());
        } else {
            files.emplace_back(in);
        }
    }
    return files;
}

int cmd_bench(const BenchArgs& a, const Common& c) {
    ProtocolOptions opt;
    opt.methods = a.methods;
    opt.gram.tile = c.tile;
    for (const auto& m : opt.methods) make_method(m, opt.grid, 1);

    std::vector<DatasetResult> results;
    const auto files = dataset_files(a.inputs);
    if (files.empty()) throw Error("bench: no CSV datasets found");
    for (const auto& f : files) {
        try {
            const Dataset d = load_dataset(f);
            const SplitPlan plan = splits_for(f, d);
            std::cerr << "bench: " << d.name << " (N=" << d.size() << ", T=" << d.length() << ", classes=" << d.num_classes()
                      << ")\n";
            results.push_back(run_protocol(d, plan, opt));
            for (const auto& r : results.back().methods) {
                std::cerr << "  " << std::left << std::setw(11) << r.method << " acc " << std::fixed << std::setprecision(4)
                          << r.accuracy << "  (validation " << r.best_validation << ", " << r.best.size()
                          << " tied configs)\n"
                          << std::defaultfloat;
            }
        } catch (const Error& e) {
            warn("skipping " + f.string() + ": " + e.what());
        }
    }
    if (results.empty()) throw Error("bench: every dataset failed");
    const BenchReport rep = make_report(std::move(results), opt.methods,
                                        a.strict_pma ? PmaMode::StrictCount : PmaMode::RatioMean);
    write_report_json(a.out_json, rep);
    write_summary_csv(a.out_csv, rep);
    std::cout << "method       acc_mean  acc_std   P95      PMA      friedman\n";
    for (const auto& s : rep.summary) {
        std::cout << std::left << std::setw(12) << s.method << std::right << std::fixed << std::setprecision(4)
                  << std::setw(9) << s.acc_mean << std::setw(9) << s.acc_std << std::setw(9) << s.p95 << std::setw(9)
                  << s.pma << std::setw(9) << s.friedman << '\n';
    }
    return 0;
}

struct TimingArgs {
    TimingOptions opt;
    std::string out;
};

int cmd_timing(TimingArgs a, const Common& c) {
    a.opt.gram.tile = c.tile;
    const auto points = timing_sweep(a.opt);
    std::ofstream file;
    if (!a.out.empty()) {
        file.open(a.out);
        if (!file) throw Error("cannot open " + a.out + " for writing");
    }
    std::ostream& out = a.out.empty() ? std::cout : file;
    out << "sweep,N,T,L,seconds,ratio\n";
    for (const auto& p : points) {
        out << p.sweep << ',' << p.n << ',' << p.steps << ',' << p.depth << ',' << p.seconds << ',' << p.ratio << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Infinite-width RNN kernels: Gram matrices, Monte Carlo verification, SVM benchmark, timing"};
    app.require_subcommand(1);
    app.fallthrough();
    Common common;
    app.add_option("--threads", common.threads, "Worker threads (0: RNTK_THREADS or all cores)")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    app.add_option("--tile", common.tile, "Gram tile edge in pairs")->check(CLI::PositiveNumber)->capture_default_str();

    GramArgs ga;
    auto* gram_cmd = app.add_subcommand("gram", "Write CK and NTK Gram matrices of a dataset");
    gram_cmd->add_option("--data", ga.data, "Dataset CSV (features..., label)")->required()->check(CLI::ExistingFile);
    gram_cmd->add_option("--out", ga.out, "Output directory for ck.gram and ntk.gram")->required();
    gram_cmd->add_option("--variant", ga.variant, "Architecture")->check(CLI::IsMember(kArchitectures))->capture_default_str();
    gram_cmd->add_option("--order", ga.order, "Input ordering for rnn / rnn-avg")
        ->check(CLI::IsMember({"default", "flipped"}))
        ->capture_default_str();
    gram_cmd->add_option("--L,--depth", ga.depth, "Number of layers")->check(CLI::PositiveNumber)->capture_default_str();
    gram_cmd->add_option("--sigma-w", ga.sigma_w, "Recurrent weight scale")->capture_default_str();
    gram_cmd->add_option("--sigma-u", ga.sigma_u, "Input weight scale")->capture_default_str();
    gram_cmd->add_option("--sigma-b", ga.sigma_b, "Bias scale")->capture_default_str();
    gram_cmd->add_option("--sigma-v", ga.sigma_v, "Output weight scale (0: per-variant default)")->capture_default_str();
    gram_cmd->add_flag("--csv", ga.csv, "Also write ck.csv and ntk.csv");
    gram_cmd->add_flag("--normalize", ga.normalize, "z-score every feature before computing");

    VerifyArgs va;
    auto* verify_cmd = app.add_subcommand("verify", "Compare analytic kernels with finite-width Monte Carlo estimates");
    verify_cmd->add_option("--L,--depths", va.depths, "Depths")->check(CLI::PositiveNumber)->delimiter(',')->capture_default_str();
    verify_cmd->add_option("--T,--lengths", va.lengths, "Sequence lengths")
        ->check(CLI::PositiveNumber)
        ->delimiter(',')
        ->capture_default_str();
    verify_cmd->add_option("--variants", va.variants, "Architectures")
        ->check(CLI::IsMember(kArchitectures))
        ->delimiter(',')
        ->capture_default_str();
    verify_cmd->add_option("--width", va.width, "Hidden width n")->check(CLI::PositiveNumber)->capture_default_str();
    verify_cmd->add_option("--trials", va.trials, "Independent weight draws R (>= 2)")
        ->check(CLI::Range(2, 1 << 30))
        ->capture_default_str();
    verify_cmd->add_option("--seed", va.seed, "Seed for inputs and weights")->capture_default_str();
    verify_cmd->add_option("--sigma-u", va.sigma_u, "Input weight scale")->capture_default_str();
    verify_cmd->add_option("--sigma-b", va.sigma_b, "Bias scale")->capture_default_str();
    verify_cmd->add_option("--sigma-w", va.sigma_w, "Recurrent weight scale")->capture_default_str();
    verify_cmd->add_option("--out", va.out, "JSON report path (stdout when empty)");

    BenchArgs ba;
    auto* bench_cmd = app.add_subcommand("bench", "Run the SVM benchmark protocol on CSV datasets");
    bench_cmd->add_option("--data", ba.inputs, "Dataset CSV files or directories")->required();
    bench_cmd->add_option("--methods", ba.methods, "Methods to compare")
        ->check(CLI::IsMember(method_names()))
        ->delimiter(',')
        ->capture_default_str();
    bench_cmd->add_option("--out-json", ba.out_json, "Full report")->capture_default_str();
    bench_cmd->add_option("--out-csv", ba.out_csv, "Aggregate metrics")->capture_default_str();
    bench_cmd->add_flag("--strict-pma", ba.strict_pma, "PMA as the fraction of datasets where a method is best");

    TimingArgs ta;
    auto* timing_cmd = app.add_subcommand("timing", "Time Gram computation over N, T and L sweeps");
    timing_cmd->add_option("--N", ta.opt.n_values, "Dataset sizes")->delimiter(',')->check(CLI::PositiveNumber)->capture_default_str();
    timing_cmd->add_option("--T", ta.opt.t_values, "Lengths")->delimiter(',')->check(CLI::PositiveNumber)->capture_default_str();
    timing_cmd->add_option("--L", ta.opt.l_values, "Depths")->delimiter(',')->check(CLI::PositiveNumber)->capture_default_str();
    timing_cmd->add_option("--fixed-N", ta.opt.fixed_n, "N while sweeping T and L")->check(CLI::PositiveNumber)->capture_default_str();
    timing_cmd->add_option("--fixed-T", ta.opt.fixed_t, "T while sweeping N and L")->check(CLI::PositiveNumber)->capture_default_str();
    timing_cmd->add_option("--fixed-L", ta.opt.fixed_l, "L while sweeping N and T")->check(CLI::PositiveNumber)->capture_default_str();
    timing_cmd->add_option("--reps", ta.opt.repetitions, "Repetitions per point")->check(CLI::PositiveNumber)->capture_default_str();
    timing_cmd->add_option("--seed", ta.opt.seed, "Data seed")->capture_default_str();
    timing_cmd->add_option("--out", ta.out, "CSV path (stdout when empty)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        apply_threads(common);
        if (*gram_cmd) return cmd_gram(ga, common);
        if (*verify_cmd) return cmd_verify(va);
        if (*bench_cmd) return cmd_bench(ba, common);
        if (*timing_cmd) return cmd_timing(ta, common);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
