#pragma once

#include "treedec/attention.hpp"
#include "treedec/cluster.hpp"
#include "treedec/tensor.hpp"

#include <cstdint>
#include <vector>

namespace treedec {

// Keys/values split along the sequence axis into contiguous, ordered,
// disjoint chunks covering the whole cache; chunk i lives on worker i.
// Chunk sizes follow chunk_extents (they differ by at most one).
struct ShardedKVCache {
    std::vector<Tensor> k_chunks, v_chunks;
    std::int64_t seq_len = 0;

    int workers() const { return static_cast<int>(k_chunks.size()); }
};

// Shard a KV cache over p workers. Requires 1 <= p <= N; reassembling the
// chunks reproduces k and v bitwise.
ShardedKVCache shard_kv(const Tensor& k, const Tensor& v, int p);

// Executed round counts of one collective, reduce phase and broadcast phase.
struct CollectiveRounds {
    int reduce_rounds = 0;
    int broadcast_rounds = 0;
};

struct DecodeResult {
    Tensor output; // [b, n_h, 1, d_h]
    CostAccount cost;
    bool overlap_feasible = false;
    double overlap_ratio = 0.0;                // compute time / transfer time per chunk exchange
    std::vector<CollectiveRounds> collectives; // one entry per issued allreduce
};

// Per-chunk attention compute model used by the overlap analysis: the local
// kernel is assumed to stream the chunk's 2*b*t*d elements at
// `throughput_Bps` effective bytes/second. The default is calibrated so an
// 80k-row chunk of hidden size 2048 in 2-byte elements takes 1e-5 s.
struct ComputeModel {
    double throughput_Bps = 6.5536e13;
};

struct OverlapFeasibility {
    bool feasible = false;
    double ratio = 0.0;
};

// Can one chunk exchange hide behind the local attention compute?
// ratio = compute_time / transfer_time for a 2*b*t*d-element chunk over the
// slowest ring link of the topology; feasible iff ratio >= 1. Zero-size
// transfers are trivially feasible (ratio = +inf).
OverlapFeasibility overlap_feasibility(const Topology& topo, std::int64_t b, std::int64_t t,
                                       std::int64_t d, const ComputeModel& model = {});

// Distributed single-query decode over the sharded cache:
//   1. each worker computes its local (out, lse) partial,
//   2. allreduce(max) over the lse values gives the common shift,
//   3. local numerator/denominator are re-formed against the shift,
//   4. one fused sum-allreduce over the (numerator, denominator) payload,
//   5. output = numerator / denominator.
// The output matches attention_naive on the unsharded inputs within the
// dtype tolerance; cost counters follow the reporting conventions described
// in CostAccount. q must be a single query row (N_q == 1) and the cache
// worker count must equal the topology world size.
DecodeResult tree_decode(const Tensor& q, const ShardedKVCache& cache, const Topology& topo,
                         ReduceStrategy allreduce_strategy = ReduceStrategy::Hierarchical,
                         double scale = 1.0, bool parallel_workers = false);

// Baseline: p-1 synchronous rotations of the kv chunks around the ring,
// each worker folding the received chunk into its running softmax partial.
// Worker 0's final partial produces the output.
DecodeResult ring_decode(const Tensor& q, const ShardedKVCache& cache, const Topology& topo,
                         double scale = 1.0, bool parallel_workers = false);

// Exactness tolerance of decode outputs against the single-device oracle:
// Float64 is absolute (1e-10); Float32/Bf16 are relative to max|ref|
// (1e-4 and 2e-2).
double decode_tolerance_abs(DType dtype, double ref_max_abs);

} // namespace treedec
