// treedec: verification suites, modeled decode sweeps and comparison reports
// for tree-reduction attention decoding on a two-tier cluster model.

#include <CLI11.hpp>

#include "treedec/bench.hpp"
#include "treedec/cluster.hpp"
#include "treedec/verify.hpp"

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFailure = 1;
constexpr int kExitIoError = 2;

struct BenchArgs {
    std::vector<std::int64_t> seq_lens;
    std::vector<int> nodes{1};
    int gpus_per_node = 8;
    std::int64_t batch = 1, heads = 16, head_dim = 128;
    std::string dtype = "bf16";
    std::string algo = "both";
    std::string allreduce = "hier";
    std::string config_path;
    std::string out_path;
    std::string format = "csv";
    std::uint64_t seed = 0;
};

int run_bench(const BenchArgs& args) {
    treedec::SweepSpec spec;
    spec.seq_lens = args.seq_lens;
    for (int n : args.nodes) spec.clusters.emplace_back(n, args.gpus_per_node);
    spec.batch = args.batch;
    spec.heads = args.heads;
    spec.head_dim = args.head_dim;
    spec.seed = args.seed;
    if (!treedec::parse_dtype(args.dtype, spec.dtype)) {
        std::cerr << "bench: unknown dtype '" << args.dtype << "'\n";
        return kExitIoError;
    }
    if (!treedec::parse_strategy(args.allreduce, spec.allreduce)) {
        std::cerr << "bench: unknown allreduce strategy '" << args.allreduce << "'\n";
        return kExitIoError;
    }
    spec.run_tree = args.algo == "tree" || args.algo == "both";
    spec.run_ring = args.algo == "ring" || args.algo == "both";
    if (!spec.run_tree && !spec.run_ring) {
        std::cerr << "bench: unknown algo '" << args.algo << "'\n";
        return kExitIoError;
    }
    if (args.format != "csv" && args.format != "json") {
        std::cerr << "bench: unknown format '" << args.format << "'\n";
        return kExitIoError;
    }

    treedec::Topology base;
    if (!args.config_path.empty()) {
        try {
            base = treedec::load_topology(args.config_path);
        } catch (const std::exception& e) {
            std::cerr << "bench: " << e.what() << "\n";
            return kExitIoError;
        }
    }

    treedec::SweepOutcome out;
    try {
        out = treedec::run_sweep(spec, base);
    } catch (const std::exception& e) {
        std::cerr << "bench: " << e.what() << "\n";
        return kExitIoError;
    }

    const auto emit = [&](std::ostream& os) {
        if (args.format == "csv") treedec::write_csv(out, os);
        else treedec::write_json(out, os);
    };
    if (args.out_path.empty() || args.out_path == "-") {
        emit(std::cout);
    } else {
        std::ofstream file(args.out_path);
        if (!file) {
            std::cerr << "bench: cannot open '" << args.out_path << "' for writing\n";
            return kExitIoError;
        }
        emit(file);
        file.flush();
        if (!file) {
            std::cerr << "bench: write to '" << args.out_path << "' failed\n";
            return kExitIoError;
        }
    }
    if (!out.all_within_tolerance) {
        std::cerr << "bench: some cells exceeded the dtype tolerance vs the oracle\n";
        return kExitVerifyFailure;
    }
    return kExitOk;
}

int run_report(const std::string& in_path) {
    treedec::SweepOutcome out;
    try {
        out = treedec::parse_bench_file(in_path);
    } catch (const treedec::ParseError& e) {
        std::cerr << "report: " << in_path << ":" << e.line << ": " << e.message << "\n";
        return kExitIoError;
    } catch (const std::exception& e) {
        std::cerr << "report: " << e.what() << "\n";
        return kExitIoError;
    }
    treedec::write_report(out, std::cout);
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"tree-reduction attention decoding: verification and modeled benchmarks"};
    app.require_subcommand(1);

    treedec::verify::Options vopts;
    CLI::App* verify_cmd = app.add_subcommand("verify", "run all property suites");
    verify_cmd->add_option("--seed", vopts.seed, "base seed for the generated cases");
    verify_cmd->add_option("--grid", vopts.grid, "case-count multiplier")
        ->check(CLI::PositiveNumber);
    verify_cmd->add_flag("--inject-fault", vopts.inject_fault)->group("");

    BenchArgs bargs;
    CLI::App* bench_cmd = app.add_subcommand("bench", "sweep modeled decode costs to CSV/JSON");
    bench_cmd->add_option("--seq-len", bargs.seq_lens, "sequence length (repeatable)")
        ->required()
        ->check(CLI::PositiveNumber);
    bench_cmd->add_option("--nodes", bargs.nodes, "node count (repeatable)")
        ->check(CLI::PositiveNumber);
    bench_cmd->add_option("--gpus-per-node", bargs.gpus_per_node, "workers per node")
        ->check(CLI::PositiveNumber);
    bench_cmd->add_option("--batch", bargs.batch)->check(CLI::PositiveNumber);
    bench_cmd->add_option("--heads", bargs.heads)->check(CLI::PositiveNumber);
    bench_cmd->add_option("--head-dim", bargs.head_dim)->check(CLI::PositiveNumber);
    bench_cmd->add_option("--dtype", bargs.dtype, "f64|f32|bf16 (default bf16)");
    bench_cmd->add_option("--algo", bargs.algo, "tree|ring|both (default both)");
    bench_cmd->add_option("--allreduce", bargs.allreduce, "tree|ring|hier (default hier)");
    bench_cmd->add_option("--config", bargs.config_path, "topology config file");
    bench_cmd->add_option("--out", bargs.out_path, "output path ('-' or empty for stdout)");
    bench_cmd->add_option("--format", bargs.format, "csv|json (default csv)");
    bench_cmd->add_option("--seed", bargs.seed, "data seed");

    std::string report_path;
    CLI::App* report_cmd = app.add_subcommand("report", "compare tree vs ring from a bench file");
    report_cmd->add_option("input", report_path, "bench CSV/JSON file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitIoError;
    }

    if (verify_cmd->parsed()) return treedec::verify::run_and_print(vopts, std::cout);
    if (bench_cmd->parsed()) return run_bench(bargs);
    return run_report(report_path);
}
