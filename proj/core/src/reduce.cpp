#include "treedec/reduce.hpp"

#include <bit>
#include <stdexcept>

namespace treedec {

const char* strategy_name(ReduceStrategy s) noexcept {
    switch (s) {
    case ReduceStrategy::TreeBinary: return "tree";
    case ReduceStrategy::Ring: return "ring";
    case ReduceStrategy::Hierarchical: return "hier";
    }
    return "tree";
}

bool parse_strategy(std::string_view name, ReduceStrategy& out) noexcept {
    if (name == "tree") { out = ReduceStrategy::TreeBinary; return true; }
    if (name == "ring") { out = ReduceStrategy::Ring; return true; }
    if (name == "hier") { out = ReduceStrategy::Hierarchical; return true; }
    return false;
}

int ceil_log2(int p) {
    if (p <= 1) return 0;
    return static_cast<int>(std::bit_width(static_cast<unsigned>(p - 1)));
}

namespace {

void require_participants(int p, const char* what) {
    if (p < 1) throw std::invalid_argument(std::string(what) + ": participants must be >= 1");
}

// Tree reduce rounds onto participant `base` offsets 0, strides doubling;
// receivers keep the lower index so the left operand covers lower indices.
void append_tree_reduce(ReductionSchedule& s, int base, int count, int stride_unit) {
    for (int stride = 1; stride < count; stride *= 2) {
        std::vector<TransferStep> round;
        for (int i = 0; i + stride < count; i += 2 * stride)
            round.push_back({base + (i + stride) * stride_unit, base + i * stride_unit, true});
        s.rounds.push_back(std::move(round));
    }
}

// Mirror of append_tree_reduce: broadcast from the base participant.
void append_tree_broadcast(ReductionSchedule& s, int base, int count, int stride_unit) {
    int top = 1;
    while (top < count) top *= 2;
    for (int stride = top / 2; stride >= 1; stride /= 2) {
        std::vector<TransferStep> round;
        for (int i = 0; i + stride < count; i += 2 * stride)
            round.push_back({base + i * stride_unit, base + (i + stride) * stride_unit, false});
        if (!round.empty()) s.rounds.push_back(std::move(round));
    }
}

} // namespace

ReductionSchedule tree_reduce_schedule(int participants) {
    require_participants(participants, "tree_reduce_schedule");
    ReductionSchedule s{ReduceStrategy::TreeBinary, participants, {}, 0, 0, 0};
    append_tree_reduce(s, 0, participants, 1);
    s.reduce_rounds = static_cast<int>(s.rounds.size());
    return s;
}

ReductionSchedule tree_allreduce_schedule(int participants) {
    ReductionSchedule s = tree_reduce_schedule(participants);
    append_tree_broadcast(s, 0, participants, 1);
    return s;
}

ReductionSchedule ring_allreduce_schedule(int participants) {
    require_participants(participants, "ring_allreduce_schedule");
    ReductionSchedule s{ReduceStrategy::Ring, participants, {}, 0, 0, 0};
    const int p = participants;
    for (int r = 0; r + 1 < p; ++r)
        s.rounds.push_back({{r, r + 1, true}});
    s.reduce_rounds = p - 1;
    for (int r = 0; r + 1 < p; ++r)
        s.rounds.push_back({{(p - 1 + r) % p, r, false}});
    return s;
}

ReductionSchedule hierarchical_allreduce_schedule(int nodes, int gpus_per_node) {
    if (nodes < 1 || gpus_per_node < 1)
        throw std::invalid_argument("hierarchical_allreduce_schedule: bad topology");
    const int g = gpus_per_node;
    ReductionSchedule s{ReduceStrategy::Hierarchical, nodes * g, {}, 0, 0, 0};

    // intra-node ring reduce onto each node's last worker
    for (int r = 0; r + 1 < g; ++r) {
        std::vector<TransferStep> round;
        for (int nd = 0; nd < nodes; ++nd)
            round.push_back({nd * g + r, nd * g + r + 1, true});
        s.rounds.push_back(std::move(round));
    }
    s.reduce_rounds_intra = g - 1;

    // inter-node tree reduce across the node leaders
    const auto leader = [g](int node) { return node * g + g - 1; };
    for (int stride = 1; stride < nodes; stride *= 2) {
        std::vector<TransferStep> round;
        for (int i = 0; i + stride < nodes; i += 2 * stride)
            round.push_back({leader(i + stride), leader(i), true});
        s.rounds.push_back(std::move(round));
    }
    s.reduce_rounds_inter = ceil_log2(nodes);
    s.reduce_rounds = s.reduce_rounds_intra + s.reduce_rounds_inter;

    // mirrored broadcasts: tree across leaders, ring back inside each node
    {
        int top = 1;
        while (top < nodes) top *= 2;
        for (int stride = top / 2; stride >= 1; stride /= 2) {
            std::vector<TransferStep> round;
            for (int i = 0; i + stride < nodes; i += 2 * stride)
                round.push_back({leader(i), leader(i + stride), false});
            if (!round.empty()) s.rounds.push_back(std::move(round));
        }
    }
    for (int r = 0; r + 1 < g; ++r) {
        std::vector<TransferStep> round;
        for (int nd = 0; nd < nodes; ++nd)
            round.push_back({nd * g + g - 1 - r, nd * g + g - 2 - r, false});
        s.rounds.push_back(std::move(round));
    }
    return s;
}

ReductionSchedule allreduce_schedule(ReduceStrategy strategy, int nodes, int gpus_per_node) {
    switch (strategy) {
    case ReduceStrategy::TreeBinary: return tree_allreduce_schedule(nodes * gpus_per_node);
    case ReduceStrategy::Ring: return ring_allreduce_schedule(nodes * gpus_per_node);
    case ReduceStrategy::Hierarchical: return hierarchical_allreduce_schedule(nodes, gpus_per_node);
    }
    throw std::invalid_argument("allreduce_schedule: unknown strategy");
}

ComplexityEstimate complexity_model(std::int64_t n, int p) {
    ComplexityEstimate est;
    est.local_work = p >= 1 ? (n + p - 1) / p : n;
    est.comm_rounds = ceil_log2(p);
    return est;
}

} // namespace treedec
