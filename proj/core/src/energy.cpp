#include "treedec/energy.hpp"

#include "treedec/attention.hpp"
#include "treedec/numerics.hpp"
#include "treedec/reduce.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace treedec {
namespace {

void require_energy_inputs(const Tensor& q, const Tensor& k, const Tensor& v,
                           const Tensor& source, const char* what) {
    if (q.rank() != 4 || k.rank() != 4 || v.rank() != 4)
        throw std::invalid_argument(std::string(what) + ": rank-4 tensors required");
    if (k.extent(0) != q.extent(0) || k.extent(1) != q.extent(1) || k.extent(3) != q.extent(3))
        throw std::invalid_argument(std::string(what) + ": q/k shape mismatch");
    if (!v.same_shape(k))
        throw std::invalid_argument(std::string(what) + ": k/v shape mismatch");
    if (!source.empty() && !source.same_shape(q))
        throw std::invalid_argument(std::string(what) + ": source must have the query shape");
}

// score_a = q.k_a + source.v_a for keys [k0, k1); one materialization per score.
void energy_scores(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& source,
                   std::int64_t ib, std::int64_t ih, std::int64_t iq, std::int64_t k0,
                   std::int64_t k1, std::vector<double>& scores) {
    const std::int64_t d_h = q.extent(3);
    const DType dt = q.dtype();
    const bool with_source = !source.empty();
    scores.clear();
    scores.reserve(static_cast<std::size_t>(k1 - k0));
    for (std::int64_t i = k0; i < k1; ++i) {
        double dot = 0.0;
        const std::int64_t qo = q.offset4(ib, ih, iq, 0);
        const std::int64_t ko = k.offset4(ib, ih, i, 0);
        for (std::int64_t j = 0; j < d_h; ++j) dot += q[qo + j] * k[ko + j];
        if (with_source) {
            const std::int64_t so = source.offset4(ib, ih, iq, 0);
            const std::int64_t vo = v.offset4(ib, ih, i, 0);
            for (std::int64_t j = 0; j < d_h; ++j) dot += source[so + j] * v[vo + j];
        }
        scores.push_back(round_to_dtype(dot, dt));
    }
}

struct RowEnergy {
    double row_max, shifted_lse;
};

RowEnergy row_energy(std::span<const double> scores) {
    double m = kNegInf;
    for (double s : scores) m = std::max(m, s);
    if (m == kNegInf) return {kNegInf, kNegInf};
    double sum = 0.0;
    for (double s : scores) sum += std::exp(s - m);
    return {m, std::log(sum)};
}

} // namespace

EnergyEval energy(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& source) {
    require_energy_inputs(q, k, v, source, "energy");
    const std::int64_t b = q.extent(0), n_h = q.extent(1), n_q = q.extent(2);
    const std::int64_t n = k.extent(2);
    const DType sdt = stats_dtype(q.dtype());
    EnergyEval eval{Tensor::zeros({b, n_h, n_q}, sdt), Tensor::zeros({b, n_h, n_q}, sdt),
                    Tensor::zeros({b, n_h, n_q}, sdt)};
    std::vector<double> scores;
    for (std::int64_t ib = 0; ib < b; ++ib)
        for (std::int64_t ih = 0; ih < n_h; ++ih)
            for (std::int64_t iq = 0; iq < n_q; ++iq) {
                energy_scores(q, k, v, source, ib, ih, iq, 0, n, scores);
                const RowEnergy re = row_energy(scores);
                const std::int64_t o3 = eval.value.offset3(ib, ih, iq);
                const double lse = round_to_dtype(re.shifted_lse, sdt);
                eval.row_max.data()[static_cast<std::size_t>(o3)] = re.row_max;
                eval.shifted_lse.data()[static_cast<std::size_t>(o3)] = lse;
                eval.value.store(o3, lse + re.row_max);
            }
    return eval;
}

Tensor partition_with_source(const Tensor& q, const Tensor& k, const Tensor& v,
                             const Tensor& source) {
    const EnergyEval eval = energy(q, k, v, source);
    static const double kLogMax = std::log(std::numeric_limits<double>::max());
    Tensor z = Tensor::zeros(eval.value.shape(), eval.value.dtype());
    for (std::int64_t i = 0; i < eval.value.numel(); ++i) {
        const double f = eval.value[i];
        if (f > kLogMax)
            throw std::overflow_error(
                "partition_with_source: Z exceeds double range; use energy() for the log form");
        z.store(i, std::exp(f));
    }
    return z;
}

double energy_total_causal(const Tensor& q, const Tensor& k, const Tensor& v,
                           const Tensor& source) {
    require_energy_inputs(q, k, v, source, "energy_total_causal");
    if (q.extent(2) != k.extent(2))
        throw std::invalid_argument("energy_total_causal: one query per position required (N_q == N)");
    const std::int64_t b = q.extent(0), n_h = q.extent(1), n = k.extent(2);
    double total = 0.0;
    std::vector<double> scores;
    for (std::int64_t ib = 0; ib < b; ++ib)
        for (std::int64_t ih = 0; ih < n_h; ++ih)
            for (std::int64_t i = 0; i < n; ++i) {
                energy_scores(q, k, v, source, ib, ih, i, 0, i + 1, scores);
                const RowEnergy re = row_energy(scores);
                total += re.row_max + re.shifted_lse;
            }
    return total;
}

Tensor grad_energy_wrt_source(const Tensor& q, const Tensor& k, const Tensor& v,
                              const Tensor& source, bool causal) {
    require_energy_inputs(q, k, v, source, "grad_energy_wrt_source");
    const std::int64_t b = q.extent(0), n_h = q.extent(1), n_q = q.extent(2), d_h = q.extent(3);
    const std::int64_t n = k.extent(2);
    if (causal && n_q > n)
        throw std::invalid_argument("grad_energy_wrt_source: causal masking needs N_q <= N");
    const std::int64_t offset = n - n_q;
    const DType dt = q.dtype();
    Tensor grad = Tensor::zeros({b, n_h, n_q, d_h}, dt);
    std::vector<double> scores;
    for (std::int64_t ib = 0; ib < b; ++ib)
        for (std::int64_t ih = 0; ih < n_h; ++ih)
            for (std::int64_t iq = 0; iq < n_q; ++iq) {
                const std::int64_t end = causal ? iq + offset + 1 : n;
                energy_scores(q, k, v, source, ib, ih, iq, 0, end, scores);
                const RowEnergy re = row_energy(scores);
                const double f = re.row_max + re.shifted_lse;
                std::vector<double> acc(static_cast<std::size_t>(d_h), 0.0);
                for (std::int64_t a = 0; a < end; ++a) {
                    const double w = round_to_dtype(
                        std::exp(scores[static_cast<std::size_t>(a)] - f), stats_dtype(dt));
                    const std::int64_t vo = v.offset4(ib, ih, a, 0);
                    for (std::int64_t j = 0; j < d_h; ++j)
                        acc[static_cast<std::size_t>(j)] += w * v[vo + j];
                }
                for (std::int64_t j = 0; j < d_h; ++j)
                    grad.store(grad.offset4(ib, ih, iq, j), acc[static_cast<std::size_t>(j)]);
            }
    return grad;
}

EnergyEval energy_forward_parallel(const Tensor& q, const Tensor& k, const Tensor& v,
                                   const Tensor& source, int chunks) {
    require_energy_inputs(q, k, v, source, "energy_forward_parallel");
    const std::int64_t n = k.extent(2);
    if (chunks < 1 || chunks > n)
        throw std::invalid_argument("energy_forward_parallel: need 1 <= chunks <= N");
    const std::int64_t b = q.extent(0), n_h = q.extent(1), n_q = q.extent(2);
    const DType dt = q.dtype();
    const DType sdt = stats_dtype(dt);
    const std::vector<std::int64_t> extents = chunk_extents(n, chunks);
    EnergyEval eval{Tensor::zeros({b, n_h, n_q}, sdt), Tensor::zeros({b, n_h, n_q}, sdt),
                    Tensor::zeros({b, n_h, n_q}, sdt)};
    std::vector<double> scores;
    std::vector<std::vector<double>> chunk_scores(static_cast<std::size_t>(chunks));
    for (std::int64_t ib = 0; ib < b; ++ib)
        for (std::int64_t ih = 0; ih < n_h; ++ih)
            for (std::int64_t iq = 0; iq < n_q; ++iq) {
                std::vector<double> local_max(static_cast<std::size_t>(chunks), kNegInf);
                std::int64_t begin = 0;
                for (int c = 0; c < chunks; ++c) {
                    const std::int64_t end = begin + extents[static_cast<std::size_t>(c)];
                    energy_scores(q, k, v, source, ib, ih, iq, begin, end, scores);
                    chunk_scores[static_cast<std::size_t>(c)] = scores;
                    for (double s : scores)
                        local_max[static_cast<std::size_t>(c)] =
                            std::max(local_max[static_cast<std::size_t>(c)], s);
                    begin = end;
                }
                const auto [m, max_rounds] = tree_reduce<double>(
                    local_max, [](double a, double bb) { return std::max(a, bb); }, kNegInf);
                (void)max_rounds;
                std::vector<double> local_lse(static_cast<std::size_t>(chunks));
                for (int c = 0; c < chunks; ++c) {
                    auto& cs = chunk_scores[static_cast<std::size_t>(c)];
                    for (double& s : cs) s = round_to_dtype(s - m, dt);
                    double sum = 0.0;
                    for (double s : cs) sum += std::exp(s);
                    local_lse[static_cast<std::size_t>(c)] =
                        cs.empty() ? kNegInf : round_to_dtype(std::log(sum), sdt);
                }
                const auto [shifted, lse_rounds] = tree_reduce<double>(
                    local_lse,
                    [sdt](double a, double bb) { return round_to_dtype(lse_combine(a, bb), sdt); },
                    kNegInf);
                (void)lse_rounds;
                const std::int64_t o3 = eval.value.offset3(ib, ih, iq);
                eval.row_max.data()[static_cast<std::size_t>(o3)] = m;
                eval.shifted_lse.data()[static_cast<std::size_t>(o3)] = shifted;
                eval.value.store(o3, shifted + m);
            }
    return eval;
}

Tensor energy_grad_parallel(const Tensor& q, const Tensor& k, const Tensor& v,
                            const EnergyEval& saved, int chunks) {
    require_energy_inputs(q, k, v, Tensor{}, "energy_grad_parallel");
    const std::int64_t b = q.extent(0), n_h = q.extent(1), n_q = q.extent(2), d_h = q.extent(3);
    const std::int64_t n = k.extent(2);
    if (chunks < 1 || chunks > n)
        throw std::invalid_argument("energy_grad_parallel: need 1 <= chunks <= N");
    const std::vector<std::int64_t> expected_shape{b, n_h, n_q};
    if (saved.value.shape() != expected_shape || saved.row_max.shape() != expected_shape ||
        saved.shifted_lse.shape() != expected_shape)
        throw std::invalid_argument("energy_grad_parallel: saved evaluation does not match inputs");
    const DType dt = q.dtype();
    const std::vector<std::int64_t> extents = chunk_extents(n, chunks);
    Tensor grad = Tensor::zeros({b, n_h, n_q, d_h}, dt);
    std::vector<double> scores;
    for (std::int64_t ib = 0; ib < b; ++ib)
        for (std::int64_t ih = 0; ih < n_h; ++ih)
            for (std::int64_t iq = 0; iq < n_q; ++iq) {
                const std::int64_t o3 = saved.value.offset3(ib, ih, iq);
                const double m = saved.row_max[o3];
                const double shifted = saved.shifted_lse[o3];
                std::vector<std::vector<double>> local(static_cast<std::size_t>(chunks));
                std::int64_t begin = 0;
                for (int c = 0; c < chunks; ++c) {
                    const std::int64_t end = begin + extents[static_cast<std::size_t>(c)];
                    energy_scores(q, k, v, Tensor{}, ib, ih, iq, begin, end, scores);
                    std::vector<double> acc(static_cast<std::size_t>(d_h), 0.0);
                    const DType sdt = stats_dtype(dt);
                    for (std::int64_t a = begin; a < end; ++a) {
                        const double r = round_to_dtype(
                            scores[static_cast<std::size_t>(a - begin)] - m, dt);
                        const double w = round_to_dtype(std::exp(r - shifted), sdt);
                        const std::int64_t vo = v.offset4(ib, ih, a, 0);
                        for (std::int64_t j = 0; j < d_h; ++j)
                            acc[static_cast<std::size_t>(j)] += w * v[vo + j];
                    }
                    for (double& x : acc) x = round_to_dtype(x, dt);
                    local[static_cast<std::size_t>(c)] = std::move(acc);
                    begin = end;
                }
                const auto [sum, rounds] = tree_reduce<std::vector<double>>(
                    local,
                    [dt](const std::vector<double>& a, const std::vector<double>& bb) {
                        std::vector<double> r(a.size());
                        for (std::size_t j = 0; j < a.size(); ++j)
                            r[j] = round_to_dtype(a[j] + bb[j], dt);
                        return r;
                    },
                    std::vector<double>(static_cast<std::size_t>(d_h), 0.0));
                (void)rounds;
                for (std::int64_t j = 0; j < d_h; ++j)
                    grad.store(grad.offset4(ib, ih, iq, j), sum[static_cast<std::size_t>(j)]);
            }
    return grad;
}

double gamma_log_likelihood(const Tensor& source, const Tensor& activation, const Tensor& q,
                            const Tensor& k, const Tensor& v) {
    require_energy_inputs(q, k, v, source, "gamma_log_likelihood");
    if (activation.shape() != q.shape())
        throw std::invalid_argument("gamma_log_likelihood: activation must have the query shape");
    if (!source.empty() && !source.same_shape(activation))
        throw std::invalid_argument("gamma_log_likelihood: source/activation shape mismatch");
    double coupling = 0.0;
    if (!source.empty())
        for (std::int64_t i = 0; i < source.numel(); ++i)
            coupling += activation[i] * source[i];
    return coupling - energy_total_causal(q, k, v, source);
}

double moment_via_source(const Tensor& q, const Tensor& k, const Tensor& v, int order,
                         std::int64_t coord_a, std::int64_t coord_b) {
    require_energy_inputs(q, k, v, Tensor{}, "moment_via_source");
    if (q.extent(0) != 1 || q.extent(1) != 1 || q.extent(2) != 1)
        throw std::invalid_argument("moment_via_source: single attention row required");
    if (order != 1 && order != 2)
        throw std::invalid_argument("moment_via_source: order must be 1 or 2");
    const std::int64_t d_h = q.extent(3);
    if (coord_a < 0 || coord_a >= d_h || (order == 2 && (coord_b < 0 || coord_b >= d_h)))
        throw std::invalid_argument("moment_via_source: coordinate out of range");
    const std::int64_t n = k.extent(2);
    std::vector<double> scores;
    energy_scores(q, k, v, Tensor{}, 0, 0, 0, 0, n, scores);
    const RowEnergy re = row_energy(scores);
    double moment = 0.0;
    for (std::int64_t a = 0; a < n; ++a) {
        const double p = std::exp(scores[static_cast<std::size_t>(a)] - re.row_max) /
                         std::exp(re.shifted_lse);
        const double va = v.at4(0, 0, a, coord_a);
        moment += order == 1 ? p * va : p * va * v.at4(0, 0, a, coord_b);
    }
    return moment;
}

} // namespace treedec
