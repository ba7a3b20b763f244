#include "treedec/bench.hpp"

#include "treedec/attention.hpp"
#include "treedec/numerics.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace treedec {
namespace {

constexpr const char* kCsvHeader =
    "algo,N,p,nodes,sim_time_s,elems_intra,elems_inter,peak_elems,rounds,max_abs_err";

std::string fmt_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

std::string join_i64(const std::vector<std::int64_t>& xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) s += ' ';
        s += std::to_string(xs[i]);
    }
    return s;
}

} // namespace

SweepOutcome run_sweep(const SweepSpec& spec, const Topology& base) {
    if (spec.seq_lens.empty() || spec.clusters.empty())
        throw std::invalid_argument("run_sweep: empty sweep lists");
    if (spec.batch < 1 || spec.heads < 1 || spec.head_dim < 1)
        throw std::invalid_argument("run_sweep: dimensions must be positive");
    if (!spec.run_tree && !spec.run_ring)
        throw std::invalid_argument("run_sweep: no algorithm selected");

    SweepOutcome out;
    out.meta["seed"] = std::to_string(spec.seed);
    out.meta["dtype"] = dtype_name(spec.dtype);
    out.meta["batch"] = std::to_string(spec.batch);
    out.meta["heads"] = std::to_string(spec.heads);
    out.meta["head_dim"] = std::to_string(spec.head_dim);
    out.meta["allreduce"] = strategy_name(spec.allreduce);
    out.meta["algos"] = spec.run_tree && spec.run_ring ? "tree ring"
                        : spec.run_tree               ? "tree"
                                                      : "ring";
    out.meta["seq_lens"] = join_i64(spec.seq_lens);
    {
        std::string cells;
        for (std::size_t i = 0; i < spec.clusters.size(); ++i) {
            if (i) cells += ' ';
            cells += std::to_string(spec.clusters[i].first) + "x" +
                     std::to_string(spec.clusters[i].second);
        }
        out.meta["clusters"] = cells;
    }
    out.meta["intra_lat_s"] = fmt_double(base.intra.latency_s);
    out.meta["intra_bw_Bps"] = fmt_double(base.intra.bandwidth_Bps);
    out.meta["inter_lat_s"] = fmt_double(base.inter.latency_s);
    out.meta["inter_bw_Bps"] = fmt_double(base.inter.bandwidth_Bps);
    out.meta["element_bytes"] = std::to_string(dtype_bytes(spec.dtype));

    for (const std::int64_t n : spec.seq_lens) {
        const std::uint64_t data_seed = mix64(spec.seed, static_cast<std::uint64_t>(n));
        const Tensor q = seeded_random_tensor({spec.batch, spec.heads, 1, spec.head_dim},
                                              mix64(data_seed, 1), 1.0, spec.dtype);
        const Tensor k = seeded_random_tensor({spec.batch, spec.heads, n, spec.head_dim},
                                              mix64(data_seed, 2), 1.0, spec.dtype);
        const Tensor v = seeded_random_tensor({spec.batch, spec.heads, n, spec.head_dim},
                                              mix64(data_seed, 3), 1.0, spec.dtype);
        const Tensor reference = attention_naive({q, k, v, false, 1.0});
        const double tol = decode_tolerance_abs(spec.dtype, max_abs(reference));

        for (const auto& [nodes, gpus] : spec.clusters) {
            if (nodes < 1 || gpus < 1)
                throw std::invalid_argument("run_sweep: bad cluster size");
            const int p = nodes * gpus;
            if (p > n)
                throw std::invalid_argument("run_sweep: cluster larger than sequence (p > N)");
            Topology topo = base;
            topo.nodes = nodes;
            topo.gpus_per_node = gpus;
            topo.element_bytes = dtype_bytes(spec.dtype);
            const ShardedKVCache cache = shard_kv(k, v, p);

            const auto emit = [&](const char* algo, const DecodeResult& dr) {
                BenchRecord rec;
                rec.algo = algo;
                rec.seq_len = n;
                rec.p = p;
                rec.nodes = nodes;
                rec.sim_time_s = dr.cost.sim_time_s;
                rec.elems_intra = dr.cost.elems_sent_intra;
                rec.elems_inter = dr.cost.elems_sent_inter;
                rec.peak_elems = dr.cost.peak_elems_per_worker;
                rec.rounds = dr.cost.rounds;
                rec.max_abs_err = max_abs_diff(dr.output, reference);
                if (rec.max_abs_err > tol) out.all_within_tolerance = false;
                out.records.push_back(std::move(rec));
            };
            if (spec.run_tree) emit("tree", tree_decode(q, cache, topo, spec.allreduce));
            if (spec.run_ring) emit("ring", ring_decode(q, cache, topo));
        }
    }
    return out;
}

void write_csv(const SweepOutcome& out, std::ostream& os) {
    for (const auto& [key, value] : out.meta) os << "# " << key << "=" << value << "\n";
    os << kCsvHeader << "\n";
    for (const BenchRecord& r : out.records) {
        os << r.algo << ',' << r.seq_len << ',' << r.p << ',' << r.nodes << ','
           << fmt_double(r.sim_time_s) << ',' << fmt_double(r.elems_intra) << ','
           << fmt_double(r.elems_inter) << ',' << r.peak_elems << ',' << r.rounds << ','
           << fmt_double(r.max_abs_err) << "\n";
    }
}

void write_json(const SweepOutcome& out, std::ostream& os) {
    nlohmann::json doc;
    doc["meta"] = out.meta;
    nlohmann::json records = nlohmann::json::array();
    for (const BenchRecord& r : out.records) {
        records.push_back({{"algo", r.algo},
                           {"N", r.seq_len},
                           {"p", r.p},
                           {"nodes", r.nodes},
                           {"sim_time_s", r.sim_time_s},
                           {"elems_intra", r.elems_intra},
                           {"elems_inter", r.elems_inter},
                           {"peak_elems", r.peak_elems},
                           {"rounds", r.rounds},
                           {"max_abs_err", r.max_abs_err}});
    }
    doc["records"] = std::move(records);
    os << doc.dump(2) << "\n";
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

[[noreturn]] void fail(int line, const std::string& msg) { throw ParseError{line, msg}; }

double to_double(const std::string& s, int line, const char* what) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(s, &pos);
        if (pos != s.size()) fail(line, std::string("trailing characters in ") + what);
        return x;
    } catch (const ParseError&) {
        throw;
    } catch (...) {
        fail(line, std::string("bad number for ") + what);
    }
}

std::int64_t to_i64(const std::string& s, int line, const char* what) {
    try {
        std::size_t pos = 0;
        const std::int64_t x = std::stoll(s, &pos);
        if (pos != s.size()) fail(line, std::string("trailing characters in ") + what);
        return x;
    } catch (const ParseError&) {
        throw;
    } catch (...) {
        fail(line, std::string("bad integer for ") + what);
    }
}

SweepOutcome parse_csv_stream(std::istream& is) {
    SweepOutcome out;
    std::string line;
    int lineno = 0;
    bool header_seen = false;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::string body = line.substr(1);
            if (!body.empty() && body.front() == ' ') body.erase(0, 1);
            const auto eq = body.find('=');
            if (eq != std::string::npos)
                out.meta[body.substr(0, eq)] = body.substr(eq + 1);
            continue;
        }
        if (!header_seen) {
            if (line != kCsvHeader) fail(lineno, "unexpected CSV header");
            header_seen = true;
            continue;
        }
        const auto fields = split_csv_line(line);
        if (fields.size() != 10) fail(lineno, "expected 10 fields");
        BenchRecord r;
        r.algo = fields[0];
        if (r.algo != "tree" && r.algo != "ring") fail(lineno, "unknown algo '" + r.algo + "'");
        r.seq_len = to_i64(fields[1], lineno, "N");
        r.p = static_cast<int>(to_i64(fields[2], lineno, "p"));
        r.nodes = static_cast<int>(to_i64(fields[3], lineno, "nodes"));
        r.sim_time_s = to_double(fields[4], lineno, "sim_time_s");
        r.elems_intra = to_double(fields[5], lineno, "elems_intra");
        r.elems_inter = to_double(fields[6], lineno, "elems_inter");
        r.peak_elems = static_cast<std::uint64_t>(to_i64(fields[7], lineno, "peak_elems"));
        r.rounds = static_cast<std::uint64_t>(to_i64(fields[8], lineno, "rounds"));
        r.max_abs_err = to_double(fields[9], lineno, "max_abs_err");
        out.records.push_back(std::move(r));
    }
    if (!header_seen) fail(lineno == 0 ? 1 : lineno, "missing CSV header");
    return out;
}

int line_of_byte(const std::string& text, std::size_t byte) {
    int line = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i)
        if (text[i] == '\n') ++line;
    return line;
}

SweepOutcome parse_json_stream(std::istream& is) {
    std::ostringstream buf;
    buf << is.rdbuf();
    const std::string text = buf.str();
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        fail(line_of_byte(text, e.byte), e.what());
    }
    SweepOutcome out;
    const nlohmann::json* records = nullptr;
    if (doc.is_array()) {
        records = &doc;
    } else if (doc.is_object() && doc.contains("records")) {
        if (doc.contains("meta"))
            for (const auto& [key, value] : doc["meta"].items())
                out.meta[key] = value.get<std::string>();
        records = &doc["records"];
    } else {
        fail(1, "expected an array of records or an object with a 'records' field");
    }
    try {
        for (const auto& jr : *records) {
            BenchRecord r;
            r.algo = jr.at("algo").get<std::string>();
            r.seq_len = jr.at("N").get<std::int64_t>();
            r.p = jr.at("p").get<int>();
            r.nodes = jr.at("nodes").get<int>();
            r.sim_time_s = jr.at("sim_time_s").get<double>();
            r.elems_intra = jr.at("elems_intra").get<double>();
            r.elems_inter = jr.at("elems_inter").get<double>();
            r.peak_elems = jr.at("peak_elems").get<std::uint64_t>();
            r.rounds = jr.at("rounds").get<std::uint64_t>();
            r.max_abs_err = jr.at("max_abs_err").get<double>();
            out.records.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(1, std::string("bad record: ") + e.what());
    }
    return out;
}

} // namespace

SweepOutcome parse_bench_stream(std::istream& is, bool json) {
    return json ? parse_json_stream(is) : parse_csv_stream(is);
}

SweepOutcome parse_bench_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    // sniff: JSON files open with '{' or '['
    int c = in.peek();
    while (c == ' ' || c == '\n' || c == '\t' || c == '\r') {
        in.get();
        c = in.peek();
    }
    const bool json = c == '{' || c == '[';
    return parse_bench_stream(in, json);
}

int write_report(const SweepOutcome& out, std::ostream& os) {
    // pair tree/ring records per (N, p, nodes) cell, in first-seen order
    struct Cell {
        const BenchRecord* tree = nullptr;
        const BenchRecord* ring = nullptr;
    };
    std::vector<std::tuple<std::int64_t, int, int>> order;
    std::map<std::tuple<std::int64_t, int, int>, Cell> cells;
    for (const BenchRecord& r : out.records) {
        const auto key = std::make_tuple(r.seq_len, r.p, r.nodes);
        if (!cells.count(key)) order.push_back(key);
        if (r.algo == "tree") cells[key].tree = &r;
        else cells[key].ring = &r;
    }

    os << "modeled tree-vs-ring comparison (sim_time is modeled, not measured)\n";
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%10s %6s %6s %12s %14s %12s  %s\n", "N", "p", "nodes",
                  "speedup", "volume_ratio", "mem_ratio", "note");
    os << buf;
    int flagged = 0;
    for (const auto& key : order) {
        const Cell& cell = cells[key];
        if (!cell.tree || !cell.ring) {
            std::snprintf(buf, sizeof(buf), "%10lld %6d %6d %12s %14s %12s  %s\n",
                          static_cast<long long>(std::get<0>(key)), std::get<1>(key),
                          std::get<2>(key), "-", "-", "-", "unpaired cell");
            os << buf;
            continue;
        }
        const BenchRecord& t = *cell.tree;
        const BenchRecord& g = *cell.ring;
        const double tree_time = t.sim_time_s, ring_time = g.sim_time_s;
        const double speedup =
            (tree_time == 0.0 && ring_time == 0.0) ? 1.0 : ring_time / tree_time;
        const double tree_vol = t.elems_intra + t.elems_inter;
        const double ring_vol = g.elems_intra + g.elems_inter;
        const double vol_ratio = (tree_vol == 0.0 && ring_vol == 0.0) ? 1.0 : ring_vol / tree_vol;
        const double mem_ratio =
            static_cast<double>(g.peak_elems) / static_cast<double>(t.peak_elems);
        const bool tree_loses = speedup < 1.0;
        if (tree_loses) ++flagged;
        std::snprintf(buf, sizeof(buf), "%10lld %6d %6d %12.2f %14.4g %12.4f  %s\n",
                      static_cast<long long>(t.seq_len), t.p, t.nodes, speedup, vol_ratio,
                      mem_ratio, tree_loses ? "tree slower" : "");
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "%zu cells, %d flagged\n", order.size(), flagged);
    os << buf;
    return flagged;
}

} // namespace treedec
