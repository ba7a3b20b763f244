#include "treedec/decode.hpp"

#include "treedec/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

namespace treedec {
namespace {

void require_single_query(const Tensor& q, const char* what) {
    if (q.rank() != 4 || q.extent(2) != 1)
        throw std::invalid_argument(std::string(what) + ": single query row required");
}

void require_cache_topology(const ShardedKVCache& cache, const Topology& topo, const char* what) {
    if (cache.workers() == 0)
        throw std::invalid_argument(std::string(what) + ": empty cache");
    if (cache.workers() != topo.world_size())
        throw std::invalid_argument(std::string(what) + ": cache/topology worker count mismatch");
}

// The chunk partial is a pure function of (q, chunk), so it is computed once
// per chunk and reused wherever that chunk is folded.
std::vector<SoftmaxPartial> local_partials(const Tensor& q, const ShardedKVCache& cache,
                                           double scale, bool parallel) {
    const int p = cache.workers();
    std::vector<SoftmaxPartial> parts(static_cast<std::size_t>(p));
    auto compute = [&](int w) {
        parts[static_cast<std::size_t>(w)] = attention_chunk_partial(
            q, cache.k_chunks[static_cast<std::size_t>(w)],
            cache.v_chunks[static_cast<std::size_t>(w)], scale);
    };
    if (parallel && p > 1) {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(p));
        for (int w = 0; w < p; ++w) pool.emplace_back(compute, w);
        for (auto& th : pool) th.join();
    } else {
        for (int w = 0; w < p; ++w) compute(w);
    }
    return parts;
}

// Splits a convention volume across link classes proportionally to the
// executed split; difference form keeps the two parts summing bit-exactly
// to `total`.
void assign_convention_volume(CostAccount& acc, double total) {
    const std::uint64_t wire_total = acc.wire_elems_total();
    if (wire_total == 0) {
        acc.elems_sent_intra = 0.0;
        acc.elems_sent_inter = 0.0;
        return;
    }
    const double inter = total * (static_cast<double>(acc.wire_elems_inter) /
                                  static_cast<double>(wire_total));
    acc.elems_sent_inter = inter;
    acc.elems_sent_intra = total - inter;
}

std::int64_t hidden_size(const Tensor& q) { return q.extent(1) * q.extent(3); }

} // namespace

ShardedKVCache shard_kv(const Tensor& k, const Tensor& v, int p) {
    if (k.rank() != 4 || !v.same_shape(k))
        throw std::invalid_argument("shard_kv: k/v must be rank-4 with equal shapes");
    const std::int64_t n = k.extent(2);
    if (p < 1) throw std::invalid_argument("shard_kv: p must be >= 1");
    if (p > n) throw std::invalid_argument("shard_kv: more workers than keys");
    ShardedKVCache cache;
    cache.seq_len = n;
    const std::vector<std::int64_t> extents = chunk_extents(n, p);
    std::int64_t begin = 0;
    for (int w = 0; w < p; ++w) {
        const std::int64_t end = begin + extents[static_cast<std::size_t>(w)];
        cache.k_chunks.push_back(slice_seq(k, begin, end));
        cache.v_chunks.push_back(slice_seq(v, begin, end));
        begin = end;
    }
    return cache;
}

OverlapFeasibility overlap_feasibility(const Topology& topo, std::int64_t b, std::int64_t t,
                                       std::int64_t d, const ComputeModel& model) {
    const auto elems = static_cast<std::uint64_t>(2 * b * t * d);
    if (elems == 0)
        return {true, std::numeric_limits<double>::infinity()};
    const LinkParams& link = topo.nodes > 1 ? topo.inter : topo.intra;
    const double transfer = p2p_cost(elems, link, topo.element_bytes);
    const double compute =
        static_cast<double>(elems) * static_cast<double>(topo.element_bytes) / model.throughput_Bps;
    const double ratio = compute / transfer;
    return {ratio >= 1.0, ratio};
}

DecodeResult tree_decode(const Tensor& q, const ShardedKVCache& cache, const Topology& topo,
                         ReduceStrategy allreduce_strategy, double scale, bool parallel_workers) {
    require_single_query(q, "tree_decode");
    require_cache_topology(cache, topo, "tree_decode");
    const int p = cache.workers();
    const std::int64_t b = q.extent(0), n_h = q.extent(1), d_h = q.extent(3);
    const std::int64_t d = hidden_size(q);
    const DType dt = q.dtype();

    DecodeResult res;
    BufferLedger ledger(p);

    std::vector<SoftmaxPartial> parts = local_partials(q, cache, scale, parallel_workers);
    for (int w = 0; w < p; ++w) {
        // resident buffers: scattered query, local kv chunk, the local output
        // (re-formed in place into the numerator), the local lse (re-formed in
        // place into the denominator), and the received shift.
        ledger.alloc(w, static_cast<std::uint64_t>(q.numel()));
        ledger.alloc(w, static_cast<std::uint64_t>(
                            cache.k_chunks[static_cast<std::size_t>(w)].numel() +
                            cache.v_chunks[static_cast<std::size_t>(w)].numel()));
        ledger.alloc(w, static_cast<std::uint64_t>(b * d));
        ledger.alloc(w, static_cast<std::uint64_t>(b * n_h));
        ledger.alloc(w, static_cast<std::uint64_t>(b * n_h));
    }

    const ReductionSchedule schedule =
        allreduce_schedule(allreduce_strategy, topo.nodes, topo.gpus_per_node);

    // allreduce(max) over the local lse values gives the common shift
    std::vector<Tensor> shift_vals;
    shift_vals.reserve(static_cast<std::size_t>(p));
    for (const SoftmaxPartial& part : parts) shift_vals.push_back(part.lse);
    execute_schedule(schedule, shift_vals, [](const Tensor& a, const Tensor& bb) {
        Tensor r = a;
        for (std::int64_t i = 0; i < r.numel(); ++i)
            r.data()[static_cast<std::size_t>(i)] = std::max(a[i], bb[i]);
        return r;
    });
    const Tensor& shift = shift_vals.front();
    res.cost.merge(simulate_schedule(schedule, static_cast<std::uint64_t>(b * n_h), topo));
    res.collectives.push_back({schedule.reduce_rounds,
                               static_cast<int>(schedule.rounds.size()) - schedule.reduce_rounds});

    // one fused sum-allreduce over the (numerator, denominator) payload
    struct NdPair {
        Tensor num, den;
    };
    std::vector<NdPair> nd_vals;
    nd_vals.reserve(static_cast<std::size_t>(p));
    for (const SoftmaxPartial& part : parts) {
        NumeratorState st = partial_to_numerator(part, shift);
        nd_vals.push_back({std::move(st.numerator), std::move(st.denominator)});
    }
    execute_schedule(schedule, nd_vals, [](const NdPair& a, const NdPair& bb) {
        NdPair r{Tensor::zeros(a.num.shape(), a.num.dtype()),
                 Tensor::zeros(a.den.shape(), a.den.dtype())};
        for (std::int64_t i = 0; i < r.num.numel(); ++i) r.num.store(i, a.num[i] + bb.num[i]);
        for (std::int64_t i = 0; i < r.den.numel(); ++i) r.den.store(i, a.den[i] + bb.den[i]);
        return r;
    });
    res.cost.merge(simulate_schedule(schedule, static_cast<std::uint64_t>(b * d + b * n_h), topo));
    res.collectives.push_back({schedule.reduce_rounds,
                               static_cast<int>(schedule.rounds.size()) - schedule.reduce_rounds});

    const NdPair& global = nd_vals.front();
    Tensor out = Tensor::zeros({b, n_h, 1, d_h}, dt);
    for (std::int64_t ib = 0; ib < b; ++ib)
        for (std::int64_t ih = 0; ih < n_h; ++ih) {
            const double den = global.den.at3(ib, ih, 0);
            for (std::int64_t j = 0; j < d_h; ++j)
                out.store(out.offset4(ib, ih, 0, j), global.num.at4(ib, ih, 0, j) / den);
        }
    res.output = std::move(out);

    assign_convention_volume(res.cost, comm_volume_formula_seq(DecodeAlgo::Tree, b,
                                                               cache.seq_len, d, n_h, p));
    res.cost.peak_elems_per_worker = ledger.peak_max();

    const std::int64_t t_max = (cache.seq_len + p - 1) / p;
    const OverlapFeasibility of = overlap_feasibility(topo, b, t_max, d);
    res.overlap_feasible = of.feasible;
    res.overlap_ratio = of.ratio;
    return res;
}

DecodeResult ring_decode(const Tensor& q, const ShardedKVCache& cache, const Topology& topo,
                         double scale, bool parallel_workers) {
    require_single_query(q, "ring_decode");
    require_cache_topology(cache, topo, "ring_decode");
    const int p = cache.workers();
    const std::int64_t b = q.extent(0), n_h = q.extent(1);
    const std::int64_t d = hidden_size(q);

    DecodeResult res;
    BufferLedger ledger(p);

    std::vector<std::uint64_t> chunk_elems(static_cast<std::size_t>(p));
    for (int w = 0; w < p; ++w)
        chunk_elems[static_cast<std::size_t>(w)] = static_cast<std::uint64_t>(
            cache.k_chunks[static_cast<std::size_t>(w)].numel() +
            cache.v_chunks[static_cast<std::size_t>(w)].numel());

    // resident buffers: scattered query, running output accumulator, and the
    // kv chunk currently held (rotating).
    for (int w = 0; w < p; ++w) {
        ledger.alloc(w, static_cast<std::uint64_t>(q.numel()));
        ledger.alloc(w, static_cast<std::uint64_t>(b * d));
        ledger.alloc(w, chunk_elems[static_cast<std::size_t>(w)]);
    }

    std::vector<SoftmaxPartial> parts = local_partials(q, cache, scale, parallel_workers);

    // p-1 synchronous rotations; worker w currently holds chunk (w - r) mod p.
    SoftmaxPartial root = parts[0];
    for (int r = 0; r + 1 < p; ++r) {
        double duration = 0.0;
        for (int w = 0; w < p; ++w) {
            const int held = ((w - r) % p + p) % p;
            const int incoming = ((w - 1 - r) % p + p) % p;
            const int next = (w + 1) % p;
            const std::uint64_t send_elems = chunk_elems[static_cast<std::size_t>(held)];
            duration = std::max(duration,
                                p2p_cost(send_elems, topo.link_between(w, next), topo.element_bytes));
            if (topo.same_node(w, next))
                res.cost.wire_elems_intra += send_elems;
            else
                res.cost.wire_elems_inter += send_elems;
            ledger.alloc(w, chunk_elems[static_cast<std::size_t>(incoming)]);
        }
        for (int w = 0; w < p; ++w) {
            const int held = ((w - r) % p + p) % p;
            ledger.release(w, chunk_elems[static_cast<std::size_t>(held)]);
        }
        res.cost.sim_time_s += duration;
        res.cost.rounds += 1;
        const int root_incoming = ((p - 1 - r) % p + p) % p;
        root = combine_pair(root, parts[static_cast<std::size_t>(root_incoming)]);
    }
    res.output = root.out;

    const double convention =
        p > 1 ? comm_volume_formula_seq(DecodeAlgo::Ring, b, cache.seq_len, d, n_h, p) : 0.0;
    assign_convention_volume(res.cost, convention);
    res.cost.peak_elems_per_worker = ledger.peak_max();

    const std::int64_t t_max = (cache.seq_len + p - 1) / p;
    const OverlapFeasibility of = overlap_feasibility(topo, b, t_max, d);
    res.overlap_feasible = of.feasible;
    res.overlap_ratio = of.ratio;
    return res;
}

double decode_tolerance_abs(DType dtype, double ref_max_abs) {
    switch (dtype) {
    case DType::Float64: return 1e-10;
    case DType::Float32: return 1e-4 * ref_max_abs;
    case DType::Bf16: return 2e-2 * ref_max_abs;
    }
    return 1e-10;
}

} // namespace treedec
