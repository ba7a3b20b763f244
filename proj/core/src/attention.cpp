#include "treedec/attention.hpp"

#include "treedec/numerics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace treedec {
namespace {

void require_rank4(const Tensor& t, const char* what) {
    if (t.rank() != 4)
        throw std::invalid_argument(std::string(what) + ": rank-4 tensor required");
}

// Validates the [b, n_h, *, d_h] agreement between q and a k/v pair.
void require_qkv(const Tensor& q, const Tensor& k, const Tensor& v, const char* what) {
    require_rank4(q, what);
    require_rank4(k, what);
    require_rank4(v, what);
    if (k.extent(0) != q.extent(0) || k.extent(1) != q.extent(1) || k.extent(3) != q.extent(3))
        throw std::invalid_argument(std::string(what) + ": q/k shape mismatch");
    if (!v.same_shape(k))
        throw std::invalid_argument(std::string(what) + ": k/v shape mismatch");
    if (q.dtype() != k.dtype() || q.dtype() != v.dtype())
        throw std::invalid_argument(std::string(what) + ": dtype mismatch");
}

// Scaled scores of query row (ib, ih, iq) against keys [k0, k1), one
// materialization per score.
void row_scores(const Tensor& q, const Tensor& k, std::int64_t ib, std::int64_t ih,
                std::int64_t iq, std::int64_t k0, std::int64_t k1, double scale,
                std::vector<double>& scores) {
    const std::int64_t d_h = q.extent(3);
    const DType dt = q.dtype();
    scores.clear();
    scores.reserve(static_cast<std::size_t>(k1 - k0));
    for (std::int64_t i = k0; i < k1; ++i) {
        double dot = 0.0;
        const std::int64_t qo = q.offset4(ib, ih, iq, 0);
        const std::int64_t ko = k.offset4(ib, ih, i, 0);
        for (std::int64_t j = 0; j < d_h; ++j) dot += q[qo + j] * k[ko + j];
        scores.push_back(round_to_dtype(dot * scale, dt));
    }
}

// Softmax statistics of one row over precomputed scores: row max, lse, and
// the normalized value average written to out_row. Shared by the reference
// kernel and the chunk kernel so a whole-sequence chunk reproduces the
// reference bitwise.
void row_softmax_stats(std::span<const double> scores, const Tensor& v, std::int64_t ib,
                       std::int64_t ih, std::int64_t k0, DType dt, double& row_max,
                       double& lse, double* out_row) {
    const std::int64_t d_h = v.extent(3);
    if (scores.empty()) {
        row_max = kNegInf;
        lse = kNegInf;
        for (std::int64_t j = 0; j < d_h; ++j) out_row[j] = 0.0;
        return;
    }
    double m = scores[0];
    for (double s : scores) m = std::max(m, s);
    const DType sdt = stats_dtype(dt);
    double denom = 0.0;
    for (std::int64_t j = 0; j < d_h; ++j) out_row[j] = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double w = round_to_dtype(std::exp(scores[i] - m), sdt);
        denom += w;
        const std::int64_t vo = v.offset4(ib, ih, k0 + static_cast<std::int64_t>(i), 0);
        for (std::int64_t j = 0; j < d_h; ++j) out_row[j] += w * v[vo + j];
    }
    for (std::int64_t j = 0; j < d_h; ++j)
        out_row[j] = round_to_dtype(out_row[j] / denom, dt);
    row_max = m;
    lse = round_to_dtype(m + std::log(denom), sdt);
}

std::int64_t causal_end(const AttentionInput& in, std::int64_t iq) {
    if (!in.causal) return in.k.extent(2);
    const std::int64_t offset = in.k.extent(2) - in.q.extent(2);
    return iq + offset + 1;
}

} // namespace

Tensor attention_naive(const AttentionInput& in) {
    require_qkv(in.q, in.k, in.v, "attention_naive");
    if (in.causal && in.q.extent(2) > in.k.extent(2))
        throw std::invalid_argument("attention_naive: causal masking needs N_q <= N");
    const std::int64_t b = in.q.extent(0), n_h = in.q.extent(1);
    const std::int64_t n_q = in.q.extent(2), d_h = in.q.extent(3);
    Tensor out = Tensor::zeros({b, n_h, n_q, d_h}, in.q.dtype());
    std::vector<double> scores;
    for (std::int64_t ib = 0; ib < b; ++ib)
        for (std::int64_t ih = 0; ih < n_h; ++ih)
            for (std::int64_t iq = 0; iq < n_q; ++iq) {
                row_scores(in.q, in.k, ib, ih, iq, 0, causal_end(in, iq), in.scale, scores);
                if (scores.empty())
                    throw std::invalid_argument("attention_naive: empty key range");
                double m = 0.0, lse = 0.0;
                row_softmax_stats(scores, in.v, ib, ih, 0, in.q.dtype(), m, lse,
                                  out.data().data() + out.offset4(ib, ih, iq, 0));
            }
    return out;
}

Tensor attention_online(const AttentionInput& in) {
    require_qkv(in.q, in.k, in.v, "attention_online");
    if (in.causal && in.q.extent(2) > in.k.extent(2))
        throw std::invalid_argument("attention_online: causal masking needs N_q <= N");
    const std::int64_t b = in.q.extent(0), n_h = in.q.extent(1);
    const std::int64_t n_q = in.q.extent(2), d_h = in.q.extent(3);
    const DType dt = in.q.dtype();
    Tensor out = Tensor::zeros({b, n_h, n_q, d_h}, dt);
    std::vector<double> num(static_cast<std::size_t>(d_h));
    for (std::int64_t ib = 0; ib < b; ++ib)
        for (std::int64_t ih = 0; ih < n_h; ++ih)
            for (std::int64_t iq = 0; iq < n_q; ++iq) {
                const std::int64_t end = causal_end(in, iq);
                if (end <= 0) throw std::invalid_argument("attention_online: empty key range");
                double run_max = kNegInf, denom = 0.0;
                std::fill(num.begin(), num.end(), 0.0);
                for (std::int64_t i = 0; i < end; ++i) {
                    double dot = 0.0;
                    const std::int64_t qo = in.q.offset4(ib, ih, iq, 0);
                    const std::int64_t ko = in.k.offset4(ib, ih, i, 0);
                    for (std::int64_t j = 0; j < d_h; ++j) dot += in.q[qo + j] * in.k[ko + j];
                    const double s = round_to_dtype(dot * in.scale, dt);
                    const double new_max = std::max(run_max, s);
                    const double corr = round_to_dtype(std::exp(run_max - new_max), dt);
                    const double w = round_to_dtype(std::exp(s - new_max), dt);
                    denom = round_to_dtype(denom * corr + w, dt);
                    const std::int64_t vo = in.v.offset4(ib, ih, i, 0);
                    for (std::int64_t j = 0; j < d_h; ++j)
                        num[static_cast<std::size_t>(j)] = round_to_dtype(
                            num[static_cast<std::size_t>(j)] * corr + w * in.v[vo + j], dt);
                    run_max = new_max;
                }
                for (std::int64_t j = 0; j < d_h; ++j)
                    out.store(out.offset4(ib, ih, iq, j), num[static_cast<std::size_t>(j)] / denom);
            }
    return out;
}

SoftmaxPartial attention_chunk_partial(const Tensor& q, const Tensor& k_chunk,
                                       const Tensor& v_chunk, double scale) {
    require_qkv(q, k_chunk, v_chunk, "attention_chunk_partial");
    const std::int64_t b = q.extent(0), n_h = q.extent(1);
    const std::int64_t n_q = q.extent(2), d_h = q.extent(3);
    const std::int64_t t = k_chunk.extent(2);
    const DType dt = q.dtype();
    const DType sdt = stats_dtype(dt);
    SoftmaxPartial part{Tensor::zeros({b, n_h, n_q}, sdt), Tensor::zeros({b, n_h, n_q}, sdt),
                        Tensor::zeros({b, n_h, n_q, d_h}, dt)};
    std::vector<double> scores;
    for (std::int64_t ib = 0; ib < b; ++ib)
        for (std::int64_t ih = 0; ih < n_h; ++ih)
            for (std::int64_t iq = 0; iq < n_q; ++iq) {
                row_scores(q, k_chunk, ib, ih, iq, 0, t, scale, scores);
                double m = 0.0, lse = 0.0;
                row_softmax_stats(scores, v_chunk, ib, ih, 0, dt, m, lse,
                                  part.out.data().data() + part.out.offset4(ib, ih, iq, 0));
                part.row_max.data()[static_cast<std::size_t>(part.row_max.offset3(ib, ih, iq))] = m;
                part.lse.data()[static_cast<std::size_t>(part.lse.offset3(ib, ih, iq))] = lse;
            }
    return part;
}

SoftmaxPartial empty_partial(std::int64_t b, std::int64_t n_h, std::int64_t n_q,
                             std::int64_t d_h, DType dtype) {
    const DType sdt = stats_dtype(dtype);
    return SoftmaxPartial{Tensor::full({b, n_h, n_q}, kNegInf, sdt),
                          Tensor::full({b, n_h, n_q}, kNegInf, sdt),
                          Tensor::zeros({b, n_h, n_q, d_h}, dtype)};
}

SoftmaxPartial combine_pair(const SoftmaxPartial& left, const SoftmaxPartial& right) {
    if (!left.out.same_shape(right.out) || !left.lse.same_shape(right.lse))
        throw std::invalid_argument("combine_pair: shape mismatch");
    const Tensor& lo = left.out;
    const std::int64_t b = lo.extent(0), n_h = lo.extent(1), n_q = lo.extent(2),
                       d_h = lo.extent(3);
    const DType dt = lo.dtype();
    const DType sdt = stats_dtype(dt);
    SoftmaxPartial res{Tensor::zeros({b, n_h, n_q}, sdt), Tensor::zeros({b, n_h, n_q}, sdt),
                       Tensor::zeros({b, n_h, n_q, d_h}, dt)};
    for (std::int64_t ib = 0; ib < b; ++ib)
        for (std::int64_t ih = 0; ih < n_h; ++ih)
            for (std::int64_t iq = 0; iq < n_q; ++iq) {
                const std::int64_t o3 = res.lse.offset3(ib, ih, iq);
                const double la = left.lse[o3], lb = right.lse[o3];
                const double l = round_to_dtype(lse_combine(la, lb), sdt);
                res.lse.data()[static_cast<std::size_t>(o3)] = l;
                res.row_max.data()[static_cast<std::size_t>(o3)] =
                    std::max(left.row_max[o3], right.row_max[o3]);
                const double wa = la == kNegInf ? 0.0 : round_to_dtype(std::exp(la - l), sdt);
                const double wb = lb == kNegInf ? 0.0 : round_to_dtype(std::exp(lb - l), sdt);
                for (std::int64_t j = 0; j < d_h; ++j) {
                    const std::int64_t o4 = res.out.offset4(ib, ih, iq, j);
                    res.out.store(o4, left.out[o4] * wa + right.out[o4] * wb);
                }
            }
    return res;
}

Tensor combine_partials(std::span<const SoftmaxPartial> parts) {
    if (parts.empty()) throw std::invalid_argument("combine_partials: no parts");
    const Tensor& first = parts.front().out;
    const std::int64_t b = first.extent(0), n_h = first.extent(1), n_q = first.extent(2),
                       d_h = first.extent(3);
    const DType dt = first.dtype();
    for (const SoftmaxPartial& p : parts)
        if (!p.out.same_shape(first))
            throw std::invalid_argument("combine_partials: shape mismatch");
    const DType sdt = stats_dtype(dt);
    Tensor out = Tensor::zeros({b, n_h, n_q, d_h}, dt);
    for (std::int64_t ib = 0; ib < b; ++ib)
        for (std::int64_t ih = 0; ih < n_h; ++ih)
            for (std::int64_t iq = 0; iq < n_q; ++iq) {
                const std::int64_t o3 = parts.front().lse.offset3(ib, ih, iq);
                double shift = kNegInf;
                for (const SoftmaxPartial& p : parts) shift = std::max(shift, p.lse[o3]);
                if (shift == kNegInf)
                    throw std::invalid_argument("combine_partials: no keys attended");
                double denom = 0.0;
                std::vector<double> num(static_cast<std::size_t>(d_h), 0.0);
                for (const SoftmaxPartial& p : parts) {
                    const double l = p.lse[o3];
                    if (l == kNegInf) continue;
                    const double w = round_to_dtype(std::exp(l - shift), sdt);
                    denom += w;
                    const std::int64_t o4 = p.out.offset4(ib, ih, iq, 0);
                    for (std::int64_t j = 0; j < d_h; ++j)
                        num[static_cast<std::size_t>(j)] += p.out[o4 + j] * w;
                }
                for (std::int64_t j = 0; j < d_h; ++j)
                    out.store(out.offset4(ib, ih, iq, j), num[static_cast<std::size_t>(j)] / denom);
            }
    return out;
}

NumeratorState partial_to_numerator(const SoftmaxPartial& part, const Tensor& shift) {
    if (!shift.same_shape(part.lse))
        throw std::invalid_argument("partial_to_numerator: shift shape mismatch");
    const Tensor& o = part.out;
    const std::int64_t b = o.extent(0), n_h = o.extent(1), n_q = o.extent(2), d_h = o.extent(3);
    const DType dt = o.dtype();
    const DType sdt = stats_dtype(dt);
    NumeratorState st{Tensor::zeros({b, n_h, n_q, d_h}, dt), Tensor::zeros({b, n_h, n_q}, sdt),
                      shift};
    for (std::int64_t ib = 0; ib < b; ++ib)
        for (std::int64_t ih = 0; ih < n_h; ++ih)
            for (std::int64_t iq = 0; iq < n_q; ++iq) {
                const std::int64_t o3 = part.lse.offset3(ib, ih, iq);
                const double l = part.lse[o3];
                const double w =
                    l == kNegInf ? 0.0 : round_to_dtype(std::exp(l - shift[o3]), sdt);
                st.denominator.data()[static_cast<std::size_t>(o3)] = w;
                for (std::int64_t j = 0; j < d_h; ++j) {
                    const std::int64_t o4 = o.offset4(ib, ih, iq, j);
                    st.numerator.store(o4, o[o4] * w);
                }
            }
    return st;
}

std::vector<std::int64_t> chunk_extents(std::int64_t n, int p) {
    if (p < 1) throw std::invalid_argument("chunk_extents: p must be >= 1");
    if (n < 0) throw std::invalid_argument("chunk_extents: negative length");
    const std::int64_t base = n / p, rem = n % p;
    std::vector<std::int64_t> extents(static_cast<std::size_t>(p), base);
    for (std::int64_t i = 0; i < rem; ++i) extents[static_cast<std::size_t>(i)] += 1;
    return extents;
}

} // namespace treedec
