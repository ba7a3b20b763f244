#pragma once

#include "treedec/reduce.hpp"

#include <cstdint>
#include <functional>
#include <string>

namespace treedec {

// alpha-beta point-to-point link model: a message of n bytes costs
// latency_s + n / bandwidth_Bps.
struct LinkParams {
    double latency_s = 0.0;
    double bandwidth_Bps = 1.0;
};

// Two-tier cluster: `nodes` nodes of `gpus_per_node` workers each, fast
// links inside a node and slower links across nodes. Workers are placed in
// contiguous blocks (workers 0..g-1 on node 0, and so on). Defaults model a
// DGX-class node: 8 GPUs, 900 GB/s intra-node links, 400 Gb/s (50 GB/s)
// per-GPU inter-node links, 2-byte elements on the wire. The latency
// defaults are nominal constants, not measurements.
struct Topology {
    int nodes = 1;
    int gpus_per_node = 8;
    LinkParams intra{5e-6, 900e9};
    LinkParams inter{25e-6, 50e9};
    int element_bytes = 2;

    int world_size() const { return nodes * gpus_per_node; }
    int node_of(int worker) const { return worker / gpus_per_node; }
    bool same_node(int a, int b) const { return node_of(a) == node_of(b); }
    const LinkParams& link_between(int a, int b) const { return same_node(a, b) ? intra : inter; }
};

// Smallest default-shaped cluster holding `workers` workers: one node with
// `workers` GPUs up to 8, then multiples of 8 per node. Throws if `workers`
// cannot be tiled evenly.
Topology topology_for_workers(int workers, Topology base = {});

// Per-run communication and memory accounting.
//
// elems_sent_* hold the reported volume counters. For raw schedule
// simulation they equal the executed transfer totals; the decoders re-state
// them under the closed-form reporting convention (ring: one rotation
// aggregated over all devices; allreduce: 2(p-1)/p * payload regardless of
// executed strategy) and keep the executed totals in wire_elems_*.
struct CostAccount {
    double elems_sent_intra = 0.0;
    double elems_sent_inter = 0.0;
    std::uint64_t wire_elems_intra = 0;
    std::uint64_t wire_elems_inter = 0;
    std::uint64_t rounds = 0;
    double sim_time_s = 0.0;
    std::uint64_t peak_elems_per_worker = 0;

    double elems_sent_total() const { return elems_sent_intra + elems_sent_inter; }
    std::uint64_t wire_elems_total() const { return wire_elems_intra + wire_elems_inter; }

    // Accumulate another account: sums counters, times and rounds; peak is
    // the max of the two.
    void merge(const CostAccount& other);
};

// Transfer cost of `elems` elements over one link.
double p2p_cost(std::uint64_t elems, const LinkParams& link, int element_bytes);

using PayloadFn = std::function<std::uint64_t(const TransferStep&, int round)>;

// Synchronous-round execution cost of a schedule: each round lasts as long
// as its slowest transfer; element counters accumulate per link class.
// Participants must fit inside the topology.
CostAccount simulate_schedule(const ReductionSchedule& schedule,
                              std::uint64_t payload_elems_per_step, const Topology& topo);
CostAccount simulate_schedule(const ReductionSchedule& schedule, const PayloadFn& payload,
                              const Topology& topo);

// High-water mark of live simulated buffers, per worker.
class BufferLedger {
public:
    explicit BufferLedger(int workers);
    void alloc(int worker, std::uint64_t elems);
    void release(int worker, std::uint64_t elems);
    std::uint64_t live(int worker) const;
    std::uint64_t peak(int worker) const;
    std::uint64_t peak_max() const;

private:
    std::vector<std::uint64_t> live_, peak_;
};

enum class DecodeAlgo { Ring, Tree };

const char* algo_name(DecodeAlgo a) noexcept;

// Closed-form peak element count per worker for a decode step with batch b,
// chunk length t, hidden size d (= n_h * d_h) and n_h heads:
//   ring: 4btd + 2bd        tree: 2btd + 2bd + 2bn_h
std::uint64_t peak_memory_formula(DecodeAlgo algo, std::int64_t b, std::int64_t t,
                                  std::int64_t d, std::int64_t n_h);

// Closed-form communication volume in elements:
//   ring: 2*b*t*d*p        (one rotation aggregated over p devices)
//   tree: 2*(p-1)/p * (b*d + 2*b*n_h)
double comm_volume_formula(DecodeAlgo algo, std::int64_t b, double t, std::int64_t d,
                           std::int64_t n_h, int p);

// Same quantities computed from the sequence length instead of the chunk
// size; exact in integer arithmetic even when p does not divide N
// (ring: 2*b*d*N). The tree form does not depend on N at all.
double comm_volume_formula_seq(DecodeAlgo algo, std::int64_t b, std::int64_t seq_len,
                               std::int64_t d, std::int64_t n_h, int p);

// Plain-text key=value topology config ('#' starts a comment). Keys:
// nodes, gpus_per_node, intra_bw_Bps, inter_bw_Bps, intra_lat_s,
// inter_lat_s, element_bytes. Unknown keys and malformed lines are errors.
Topology load_topology(const std::string& path);
void save_topology(const Topology& topo, const std::string& path);

} // namespace treedec
