#pragma once

#include "treedec/cluster.hpp"
#include "treedec/decode.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace treedec {

// One modeled sweep: every (seq_len, cluster) cell is decoded with each
// requested algorithm on seeded random data and compared against the
// single-device oracle.
struct SweepSpec {
    std::vector<std::int64_t> seq_lens;
    std::vector<std::pair<int, int>> clusters; // (nodes, gpus_per_node)
    std::int64_t batch = 1;
    std::int64_t heads = 16;
    std::int64_t head_dim = 128;
    DType dtype = DType::Bf16;
    bool run_tree = true;
    bool run_ring = true;
    ReduceStrategy allreduce = ReduceStrategy::Hierarchical;
    std::uint64_t seed = 0;
};

struct BenchRecord {
    std::string algo; // "tree" | "ring"
    std::int64_t seq_len = 0;
    int p = 0;
    int nodes = 0;
    double sim_time_s = 0.0;
    double elems_intra = 0.0;
    double elems_inter = 0.0;
    std::uint64_t peak_elems = 0;
    std::uint64_t rounds = 0;
    double max_abs_err = 0.0;

    bool operator==(const BenchRecord&) const = default;
};

struct SweepOutcome {
    std::vector<BenchRecord> records;
    std::map<std::string, std::string> meta; // reproducibility header (config + seed)
    bool all_within_tolerance = true;
};

// Runs the sweep on `base` link parameters (nodes/gpus_per_node and
// element_bytes are set per cell). Throws std::invalid_argument on empty
// lists, non-positive dims, or p > N cells.
SweepOutcome run_sweep(const SweepSpec& spec, const Topology& base = {});

// CSV with '#'-comment meta lines, then the exact header
//   algo,N,p,nodes,sim_time_s,elems_intra,elems_inter,peak_elems,rounds,max_abs_err
void write_csv(const SweepOutcome& out, std::ostream& os);
// JSON object {"meta": {...}, "records": [...]} whose records carry the
// same field names as the CSV columns.
void write_json(const SweepOutcome& out, std::ostream& os);

struct ParseError {
    int line = 0;
    std::string message;
};

// Reads either format back (JSON may also be a bare array of records).
// Throws ParseError with a 1-based line number on malformed input.
SweepOutcome parse_bench_file(const std::string& path);
SweepOutcome parse_bench_stream(std::istream& is, bool json);

// Tree-vs-ring comparison table: speedup, volume ratio and peak-memory
// ratio per (N, p) cell, flagging cells where tree fails to beat ring.
// Returns the number of flagged cells.
int write_report(const SweepOutcome& out, std::ostream& os);

} // namespace treedec
