#include "treedec/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace treedec {

Topology topology_for_workers(int workers, Topology base) {
    if (workers < 1) throw std::invalid_argument("topology_for_workers: workers must be >= 1");
    if (workers <= base.gpus_per_node) {
        base.nodes = 1;
        base.gpus_per_node = workers;
        return base;
    }
    if (workers % base.gpus_per_node != 0)
        throw std::invalid_argument("topology_for_workers: workers not a multiple of gpus_per_node");
    base.nodes = workers / base.gpus_per_node;
    return base;
}

void CostAccount::merge(const CostAccount& other) {
    elems_sent_intra += other.elems_sent_intra;
    elems_sent_inter += other.elems_sent_inter;
    wire_elems_intra += other.wire_elems_intra;
    wire_elems_inter += other.wire_elems_inter;
    rounds += other.rounds;
    sim_time_s += other.sim_time_s;
    peak_elems_per_worker = std::max(peak_elems_per_worker, other.peak_elems_per_worker);
}

double p2p_cost(std::uint64_t elems, const LinkParams& link, int element_bytes) {
    return link.latency_s +
           static_cast<double>(elems) * static_cast<double>(element_bytes) / link.bandwidth_Bps;
}

CostAccount simulate_schedule(const ReductionSchedule& schedule, const PayloadFn& payload,
                              const Topology& topo) {
    if (schedule.participants > topo.world_size())
        throw std::invalid_argument("simulate_schedule: more participants than workers");
    CostAccount acc;
    int round_idx = 0;
    for (const auto& round : schedule.rounds) {
        double duration = 0.0;
        for (const TransferStep& st : round) {
            if (st.sender < 0 || st.sender >= schedule.participants || st.receiver < 0 ||
                st.receiver >= schedule.participants)
                throw std::invalid_argument("simulate_schedule: participant index out of range");
            const std::uint64_t elems = payload(st, round_idx);
            duration = std::max(duration,
                                p2p_cost(elems, topo.link_between(st.sender, st.receiver),
                                         topo.element_bytes));
            if (topo.same_node(st.sender, st.receiver)) {
                acc.wire_elems_intra += elems;
                acc.elems_sent_intra += static_cast<double>(elems);
            } else {
                acc.wire_elems_inter += elems;
                acc.elems_sent_inter += static_cast<double>(elems);
            }
        }
        acc.sim_time_s += duration;
        acc.rounds += 1;
        ++round_idx;
    }
    return acc;
}

CostAccount simulate_schedule(const ReductionSchedule& schedule,
                              std::uint64_t payload_elems_per_step, const Topology& topo) {
    return simulate_schedule(
        schedule, [payload_elems_per_step](const TransferStep&, int) { return payload_elems_per_step; },
        topo);
}

BufferLedger::BufferLedger(int workers)
    : live_(static_cast<std::size_t>(workers), 0), peak_(static_cast<std::size_t>(workers), 0) {}

void BufferLedger::alloc(int worker, std::uint64_t elems) {
    auto& l = live_[static_cast<std::size_t>(worker)];
    l += elems;
    auto& p = peak_[static_cast<std::size_t>(worker)];
    p = std::max(p, l);
}

void BufferLedger::release(int worker, std::uint64_t elems) {
    auto& l = live_[static_cast<std::size_t>(worker)];
    if (elems > l) throw std::logic_error("BufferLedger: releasing more than live");
    l -= elems;
}

std::uint64_t BufferLedger::live(int worker) const { return live_[static_cast<std::size_t>(worker)]; }
std::uint64_t BufferLedger::peak(int worker) const { return peak_[static_cast<std::size_t>(worker)]; }

std::uint64_t BufferLedger::peak_max() const {
    std::uint64_t m = 0;
    for (std::uint64_t p : peak_) m = std::max(m, p);
    return m;
}

const char* algo_name(DecodeAlgo a) noexcept {
    return a == DecodeAlgo::Ring ? "ring" : "tree";
}

std::uint64_t peak_memory_formula(DecodeAlgo algo, std::int64_t b, std::int64_t t,
                                  std::int64_t d, std::int64_t n_h) {
    const auto ub = static_cast<std::uint64_t>(b);
    const auto ut = static_cast<std::uint64_t>(t);
    const auto ud = static_cast<std::uint64_t>(d);
    const auto uh = static_cast<std::uint64_t>(n_h);
    if (algo == DecodeAlgo::Ring) return 4 * ub * ut * ud + 2 * ub * ud;
    return 2 * ub * ut * ud + 2 * ub * ud + 2 * ub * uh;
}

double comm_volume_formula(DecodeAlgo algo, std::int64_t b, double t, std::int64_t d,
                           std::int64_t n_h, int p) {
    if (algo == DecodeAlgo::Ring)
        return 2.0 * static_cast<double>(b) * t * static_cast<double>(d) *
               static_cast<double>(p);
    const double payload =
        static_cast<double>(b * d) + 2.0 * static_cast<double>(b * n_h);
    return 2.0 * static_cast<double>(p - 1) / static_cast<double>(p) * payload;
}

double comm_volume_formula_seq(DecodeAlgo algo, std::int64_t b, std::int64_t seq_len,
                               std::int64_t d, std::int64_t n_h, int p) {
    if (algo == DecodeAlgo::Ring)
        return static_cast<double>(2 * b * d * seq_len);
    return comm_volume_formula(algo, b, 0.0, d, n_h, p);
}

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

} // namespace

Topology load_topology(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_topology: cannot open " + path);
    Topology topo;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("load_topology: line " + std::to_string(lineno) +
                                     ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (key == "nodes") topo.nodes = std::stoi(value);
            else if (key == "gpus_per_node") topo.gpus_per_node = std::stoi(value);
            else if (key == "intra_bw_Bps") topo.intra.bandwidth_Bps = std::stod(value);
            else if (key == "inter_bw_Bps") topo.inter.bandwidth_Bps = std::stod(value);
            else if (key == "intra_lat_s") topo.intra.latency_s = std::stod(value);
            else if (key == "inter_lat_s") topo.inter.latency_s = std::stod(value);
            else if (key == "element_bytes") topo.element_bytes = std::stoi(value);
            else
                throw std::runtime_error("load_topology: line " + std::to_string(lineno) +
                                         ": unknown key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw std::runtime_error("load_topology: line " + std::to_string(lineno) +
                                     ": bad value for '" + key + "'");
        }
    }
    if (topo.nodes < 1 || topo.gpus_per_node < 1 || topo.element_bytes < 1 ||
        topo.intra.bandwidth_Bps <= 0 || topo.inter.bandwidth_Bps <= 0 ||
        topo.intra.latency_s < 0 || topo.inter.latency_s < 0)
        throw std::runtime_error("load_topology: invalid topology values");
    return topo;
}

void save_topology(const Topology& topo, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_topology: cannot open " + path);
    out << "# two-tier cluster topology\n";
    out << "nodes = " << topo.nodes << "\n";
    out << "gpus_per_node = " << topo.gpus_per_node << "\n";
    out << "intra_lat_s = " << topo.intra.latency_s << "\n";
    out << "intra_bw_Bps = " << topo.intra.bandwidth_Bps << "\n";
    out << "inter_lat_s = " << topo.inter.latency_s << "\n";
    out << "inter_bw_Bps = " << topo.inter.bandwidth_Bps << "\n";
    out << "element_bytes = " << topo.element_bytes << "\n";
}

} // namespace treedec
