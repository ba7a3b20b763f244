#include <benchmark/benchmark.h>

#include "treedec/attention.hpp"
#include "treedec/decode.hpp"
#include "treedec/energy.hpp"
#include "treedec/numerics.hpp"

namespace {

using namespace treedec;

AttentionInput make_input(std::int64_t n, std::int64_t n_h = 8, std::int64_t d_h = 64) {
    return {seeded_random_tensor({1, n_h, 1, d_h}, 1, 1.0),
            seeded_random_tensor({1, n_h, n, d_h}, 2, 1.0),
            seeded_random_tensor({1, n_h, n, d_h}, 3, 1.0), false, 1.0};
}

void BM_AttentionNaive(benchmark::State& state) {
    const AttentionInput in = make_input(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(attention_naive(in));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_AttentionNaive)->Arg(256)->Arg(1024)->Arg(4096);

void BM_AttentionOnline(benchmark::State& state) {
    const AttentionInput in = make_input(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(attention_online(in));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_AttentionOnline)->Arg(256)->Arg(1024)->Arg(4096);

void BM_ChunkPartialsCombine(benchmark::State& state) {
    const int p = static_cast<int>(state.range(0));
    const AttentionInput in = make_input(2048);
    const ShardedKVCache cache = shard_kv(in.k, in.v, p);
    std::vector<SoftmaxPartial> parts;
    for (int w = 0; w < p; ++w)
        parts.push_back(attention_chunk_partial(in.q, cache.k_chunks[w], cache.v_chunks[w], 1.0));
    for (auto _ : state) benchmark::DoNotOptimize(combine_partials(parts));
}
BENCHMARK(BM_ChunkPartialsCombine)->Arg(2)->Arg(8)->Arg(32);

void BM_EnergyForwardParallel(benchmark::State& state) {
    const AttentionInput in = make_input(2048);
    const int p = static_cast<int>(state.range(0));
    for (auto _ : state)
        benchmark::DoNotOptimize(energy_forward_parallel(in.q, in.k, in.v, Tensor{}, p));
}
BENCHMARK(BM_EnergyForwardParallel)->Arg(1)->Arg(8)->Arg(64);

void BM_TreeDecodeSim(benchmark::State& state) {
    const int p = static_cast<int>(state.range(0));
    const AttentionInput in = make_input(64 * p, 16, 128);
    const ShardedKVCache cache = shard_kv(in.k, in.v, p);
    const Topology topo = topology_for_workers(p);
    for (auto _ : state) benchmark::DoNotOptimize(tree_decode(in.q, cache, topo));
}
BENCHMARK(BM_TreeDecodeSim)->Arg(8)->Arg(32);

void BM_RingDecodeSim(benchmark::State& state) {
    const int p = static_cast<int>(state.range(0));
    const AttentionInput in = make_input(64 * p, 16, 128);
    const ShardedKVCache cache = shard_kv(in.k, in.v, p);
    const Topology topo = topology_for_workers(p);
    for (auto _ : state) benchmark::DoNotOptimize(ring_decode(in.q, cache, topo));
}
BENCHMARK(BM_RingDecodeSim)->Arg(8)->Arg(32);

} // namespace

BENCHMARK_MAIN();
