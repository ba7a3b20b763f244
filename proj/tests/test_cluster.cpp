#include <doctest.h>

#include <stdexcept>

#include "treedec/cluster.hpp"

#include <cstdio>
#include <fstream>
#include <string>

using namespace treedec;

TEST_CASE("p2p cost formula") {
    const LinkParams link{1e-5, 1e9};
    CHECK(p2p_cost(500000, link, 2) == 1e-5 + 1e-3);
    CHECK(p2p_cost(0, link, 2) == 1e-5);
    const LinkParams nolat{0.0, 1e9};
    CHECK(p2p_cost(2000, nolat, 2) == 2.0 * p2p_cost(1000, nolat, 2));
}

TEST_CASE("schedule simulation semantics") {
    Topology topo;
    topo.nodes = 2;
    topo.gpus_per_node = 2;

    // single intra transfer
    ReductionSchedule one{ReduceStrategy::TreeBinary, 2, {}, 1, 0, 0};
    one.rounds.push_back({{1, 0, true}});
    const CostAccount a = simulate_schedule(one, 100, topo);
    CHECK(a.sim_time_s == p2p_cost(100, topo.intra, topo.element_bytes));
    CHECK(a.elems_sent_intra == 100.0);
    CHECK(a.elems_sent_inter == 0.0);
    CHECK(a.rounds == 1);

    // two parallel transfers: the slower one sets the round duration
    ReductionSchedule two{ReduceStrategy::TreeBinary, 4, {}, 1, 0, 0};
    two.rounds.push_back({{1, 0, true}, {2, 0, false}});
    const CostAccount b = simulate_schedule(two, 80, topo);
    const double t_intra = p2p_cost(80, topo.intra, topo.element_bytes);
    const double t_inter = p2p_cost(80, topo.inter, topo.element_bytes);
    CHECK(b.sim_time_s == std::max(t_intra, t_inter));
    CHECK(b.wire_elems_intra == 80);
    CHECK(b.wire_elems_inter == 80);

    // tree reduce over one 8-gpu node: three equal rounds
    const Topology topo8 = topology_for_workers(8);
    const CostAccount c = simulate_schedule(tree_reduce_schedule(8), 64, topo8);
    CHECK(c.sim_time_s == 3.0 * p2p_cost(64, topo8.intra, topo8.element_bytes));

    // participants beyond the topology are rejected
    CHECK_THROWS_AS((void)simulate_schedule(tree_reduce_schedule(8), 1, topo),
                    std::invalid_argument);
    ReductionSchedule bad{ReduceStrategy::TreeBinary, 2, {}, 1, 0, 0};
    bad.rounds.push_back({{3, 0, true}});
    CHECK_THROWS_AS((void)simulate_schedule(bad, 1, topo), std::invalid_argument);
}

TEST_CASE("monotonicity of simulated time") {
    const Topology topo = topology_for_workers(4);
    const auto sched = tree_allreduce_schedule(4);
    const double base = simulate_schedule(sched, 1000, topo).sim_time_s;
    CHECK(simulate_schedule(sched, 2000, topo).sim_time_s >= base);
    Topology lat = topo;
    lat.intra.latency_s *= 3;
    CHECK(simulate_schedule(sched, 1000, lat).sim_time_s >= base);
    Topology bw = topo;
    bw.intra.bandwidth_Bps /= 3;
    CHECK(simulate_schedule(sched, 1000, bw).sim_time_s >= base);
}

TEST_CASE("buffer ledger tracks the high-water mark") {
    BufferLedger ledger(2);
    ledger.alloc(0, 10);
    ledger.alloc(0, 20);
    ledger.release(0, 10);
    ledger.alloc(0, 5);
    CHECK(ledger.live(0) == 25);
    CHECK(ledger.peak(0) == 30);
    ledger.alloc(1, 40);
    CHECK(ledger.peak_max() == 40);
    CHECK_THROWS_AS(ledger.release(1, 100), std::logic_error);
}

TEST_CASE("closed-form memory and volume") {
    CHECK(peak_memory_formula(DecodeAlgo::Ring, 1, 2, 4, 1) == 40);
    CHECK(peak_memory_formula(DecodeAlgo::Tree, 1, 2, 4, 1) == 26);
    CHECK(comm_volume_formula(DecodeAlgo::Ring, 1, 1000, 2048, 16, 8) == 32768000.0);
    CHECK(comm_volume_formula(DecodeAlgo::Tree, 1, 123, 2048, 16, 8) == 3640.0);
    CHECK(comm_volume_formula(DecodeAlgo::Tree, 1, 5, 2048, 16, 1) == 0.0);
    // the tree form ignores the chunk size entirely
    CHECK(comm_volume_formula(DecodeAlgo::Tree, 1, 1.0, 128, 4, 4) ==
          comm_volume_formula(DecodeAlgo::Tree, 1, 1e6, 128, 4, 4));
    CHECK(comm_volume_formula_seq(DecodeAlgo::Ring, 1, 64, 8, 1, 4) == 2.0 * 64 * 8);
    // the memory gap doubles when the hidden size doubles
    const auto gap = [](std::int64_t d) {
        return static_cast<double>(peak_memory_formula(DecodeAlgo::Ring, 1, 1000, d, 16) -
                                   peak_memory_formula(DecodeAlgo::Tree, 1, 1000, d, 16));
    };
    const double ratio = gap(4096) / gap(2048);
    CHECK(ratio >= 1.99);
    CHECK(ratio <= 2.01);
}

TEST_CASE("topology placement and worker mapping") {
    Topology topo;
    topo.nodes = 2;
    topo.gpus_per_node = 4;
    CHECK(topo.world_size() == 8);
    CHECK(topo.node_of(0) == 0);
    CHECK(topo.node_of(3) == 0);
    CHECK(topo.node_of(4) == 1);
    CHECK(topo.same_node(0, 3));
    CHECK(!topo.same_node(3, 4));

    const Topology one = topology_for_workers(5);
    CHECK(one.nodes == 1);
    CHECK(one.gpus_per_node == 5);
    const Topology two = topology_for_workers(16);
    CHECK(two.nodes == 2);
    CHECK(two.gpus_per_node == 8);
    CHECK_THROWS_AS((void)topology_for_workers(20), std::invalid_argument);
}

TEST_CASE("topology config round trip and errors") {
    const std::string path = "topo_test.cfg";
    Topology topo;
    topo.nodes = 4;
    topo.gpus_per_node = 2;
    topo.intra = {1e-6, 5e11};
    topo.inter = {2e-5, 4e10};
    topo.element_bytes = 4;
    save_topology(topo, path);
    const Topology back = load_topology(path);
    CHECK(back.nodes == 4);
    CHECK(back.gpus_per_node == 2);
    CHECK(back.intra.latency_s == 1e-6);
    CHECK(back.intra.bandwidth_Bps == 5e11);
    CHECK(back.inter.latency_s == 2e-5);
    CHECK(back.inter.bandwidth_Bps == 4e10);
    CHECK(back.element_bytes == 4);

    {
        std::ofstream bad(path);
        bad << "nodes = 2\nwarp_speed = 11\n";
    }
    CHECK_THROWS_WITH_AS((void)load_topology(path),
                         "load_topology: line 2: unknown key 'warp_speed'", std::runtime_error);
    {
        std::ofstream bad(path);
        bad << "nodes two\n";
    }
    CHECK_THROWS_AS((void)load_topology(path), std::runtime_error);
    std::remove(path.c_str());
    CHECK_THROWS_AS((void)load_topology("does_not_exist.cfg"), std::runtime_error);
}
