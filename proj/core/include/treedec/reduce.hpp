#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <thread>
#include <utility>
#include <vector>

namespace treedec {

enum class ReduceStrategy { TreeBinary, Ring, Hierarchical };

const char* strategy_name(ReduceStrategy s) noexcept;
bool parse_strategy(std::string_view name, ReduceStrategy& out) noexcept; // tree|ring|hier

// One transfer inside a synchronous round. combine == true folds the
// sender's value into the receiver's (lower participant index is always the
// left operand); combine == false copies the sender's value over.
struct TransferStep {
    int sender = 0;
    int receiver = 0;
    bool combine = true;
};

// A reduction/broadcast plan over p logical participants, grouped into
// synchronous rounds. Steps within a round are independent: receivers are
// distinct and no value written in a round is read by another step of the
// same round.
struct ReductionSchedule {
    ReduceStrategy strategy = ReduceStrategy::TreeBinary;
    int participants = 0;
    std::vector<std::vector<TransferStep>> rounds;
    int reduce_rounds = 0;       // leading rounds that reduce; the rest broadcast
    int reduce_rounds_intra = 0; // hierarchical: intra-node share of reduce_rounds
    int reduce_rounds_inter = 0; // hierarchical: inter-node share of reduce_rounds
};

// ceil(log2(p)) for p >= 1 (0 for p <= 1): rounds of a binary tree.
int ceil_log2(int p);

// Binary-tree reduce onto participant 0: neighbours pair up each round,
// halving the survivors; an unpaired participant carries over. Exactly
// ceil(log2 p) rounds.
ReductionSchedule tree_reduce_schedule(int participants);
// tree reduce + mirrored tree broadcast: 2*ceil(log2 p) rounds.
ReductionSchedule tree_allreduce_schedule(int participants);
// Accumulate around the ring onto the last participant, then pipeline the
// result back around: 2(p-1) rounds.
ReductionSchedule ring_allreduce_schedule(int participants);
// Ring reduce inside each node, binary tree across node leaders, then the
// mirrored broadcasts. Reduce phase: (g-1) intra rounds + ceil(log2 nodes)
// inter rounds; broadcast mirrors both.
ReductionSchedule hierarchical_allreduce_schedule(int nodes, int gpus_per_node);

ReductionSchedule allreduce_schedule(ReduceStrategy strategy, int nodes, int gpus_per_node);

// Applies the schedule to `values` in place. Operand order is fixed by
// participant index, so results are bitwise reproducible; with
// `parallel_rounds` the steps of a round are evaluated on separate threads
// and applied in schedule order, which must not change any result.
template <class T, class Combine>
void execute_schedule(const ReductionSchedule& schedule, std::vector<T>& values,
                      Combine&& combine, bool parallel_rounds = false) {
    if (static_cast<int>(values.size()) < schedule.participants)
        throw std::invalid_argument("execute_schedule: fewer values than participants");
    for (const auto& round : schedule.rounds) {
        std::vector<T> results(round.size());
        auto eval_step = [&](std::size_t s) {
            const TransferStep& st = round[s];
            if (!st.combine) {
                results[s] = values[static_cast<std::size_t>(st.sender)];
                return;
            }
            const int lo = st.sender < st.receiver ? st.sender : st.receiver;
            const int hi = st.sender < st.receiver ? st.receiver : st.sender;
            results[s] = combine(values[static_cast<std::size_t>(lo)],
                                 values[static_cast<std::size_t>(hi)]);
        };
        if (parallel_rounds && round.size() > 1) {
            std::vector<std::thread> pool;
            pool.reserve(round.size());
            for (std::size_t s = 0; s < round.size(); ++s)
                pool.emplace_back(eval_step, s);
            for (auto& th : pool) th.join();
        } else {
            for (std::size_t s = 0; s < round.size(); ++s) eval_step(s);
        }
        for (std::size_t s = 0; s < round.size(); ++s)
            values[static_cast<std::size_t>(round[s].receiver)] = std::move(results[s]);
    }
}

// Folds `items` with a fixed binary-tree association. Returns the value and
// the number of rounds (= ceil(log2 p)); an empty span gives the identity
// and 0 rounds.
template <class T, class Combine>
std::pair<T, int> tree_reduce(std::span<const T> items, Combine&& combine, T identity) {
    if (items.empty()) return {std::move(identity), 0};
    std::vector<T> values(items.begin(), items.end());
    const ReductionSchedule schedule = tree_reduce_schedule(static_cast<int>(items.size()));
    execute_schedule(schedule, values, combine);
    return {std::move(values.front()), static_cast<int>(schedule.rounds.size())};
}

// Ring allreduce: every participant ends with the full fold. Returns the
// value and the round count 2(p-1). Empty input gives the identity.
template <class T, class Combine>
std::pair<T, int> ring_allreduce(std::span<const T> items, Combine&& combine, T identity) {
    if (items.empty()) return {std::move(identity), 0};
    std::vector<T> values(items.begin(), items.end());
    const ReductionSchedule schedule = ring_allreduce_schedule(static_cast<int>(items.size()));
    execute_schedule(schedule, values, combine);
    return {std::move(values.front()), static_cast<int>(schedule.rounds.size())};
}

template <class T>
struct HierarchicalOutcome {
    T value;
    int rounds_intra = 0; // reduce-phase intra-node rounds (g - 1)
    int rounds_inter = 0; // reduce-phase inter-node rounds (ceil(log2 nodes))
};

// Two-tier allreduce over nodes * gpus_per_node participants; item count
// must match the topology.
template <class T, class Combine>
HierarchicalOutcome<T> hierarchical_allreduce(std::span<const T> items, Combine&& combine,
                                              T identity, int nodes, int gpus_per_node) {
    if (items.empty()) return {std::move(identity), 0, 0};
    if (static_cast<int>(items.size()) != nodes * gpus_per_node)
        throw std::invalid_argument("hierarchical_allreduce: item count does not match topology");
    std::vector<T> values(items.begin(), items.end());
    const ReductionSchedule schedule = hierarchical_allreduce_schedule(nodes, gpus_per_node);
    execute_schedule(schedule, values, combine);
    return {std::move(values.front()), schedule.reduce_rounds_intra, schedule.reduce_rounds_inter};
}

struct ComplexityEstimate {
    std::int64_t local_work = 0; // ceil(N/p)
    int comm_rounds = 0;         // ceil(log2 p)
};

// Closed-form cost of reducing N items on p workers.
ComplexityEstimate complexity_model(std::int64_t n, int p);

} // namespace treedec
