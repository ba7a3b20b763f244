#include "treedec/verify.hpp"

#include "treedec/attention.hpp"
#include "treedec/bench.hpp"
#include "treedec/cluster.hpp"
#include "treedec/decode.hpp"
#include "treedec/energy.hpp"
#include "treedec/numerics.hpp"
#include "treedec/reduce.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <sstream>

namespace treedec::verify {
namespace {

std::string fmt(const char* pattern, auto... args) {
    char buf[256];
    if constexpr (sizeof...(args) == 0)
        std::snprintf(buf, sizeof(buf), "%s", pattern);
    else
        std::snprintf(buf, sizeof(buf), pattern, args...);
    return buf;
}

// Deterministic stream of test values derived from mix64.
struct Rng {
    std::uint64_t seed;
    std::uint64_t ctr = 0;
    std::uint64_t next_u64() { return mix64(seed, ctr++); }
    double next01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * next01(); }
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
    }
};

class Suite {
public:
    explicit Suite(std::string name) { res_.name = std::move(name); res_.passed = true; }
    void require(bool cond, const std::string& onfail) {
        ++res_.cases;
        if (res_.passed && !cond) {
            res_.passed = false;
            res_.detail = onfail;
        }
    }
    void require_close(double a, double b, double tol, const std::string& what) {
        require(std::fabs(a - b) <= tol,
                what + fmt(": |%.17g - %.17g| = %.3g > %.3g", a, b, std::fabs(a - b), tol));
    }
    SuiteResult take() { return std::move(res_); }

private:
    SuiteResult res_;
};

struct Qkv {
    Tensor q, k, v;
};

Qkv random_qkv(Rng& rng, std::int64_t b, std::int64_t n_h, std::int64_t n_q, std::int64_t n,
               std::int64_t d_h, DType dt = DType::Float64, double scale = 1.0) {
    return {seeded_random_tensor({b, n_h, n_q, d_h}, rng.next_u64(), scale, dt),
            seeded_random_tensor({b, n_h, n, d_h}, rng.next_u64(), scale, dt),
            seeded_random_tensor({b, n_h, n, d_h}, rng.next_u64(), scale, dt)};
}

Tensor zero_like_query(const Tensor& q) { return Tensor::zeros(q.shape(), q.dtype()); }

// ---------------------------------------------------------------- suites

SuiteResult suite_logsumexp(const Options& opts) {
    Suite s("logsumexp-bounds");
    Rng rng{mix64(opts.seed, 1)};
    const double ln2 = std::log(2.0);
    {
        const double both_zero[] = {0.0, 0.0};
        s.require_close(logsumexp(both_zero), ln2, 1e-15, "logsumexp([0,0])");
        const double single[] = {-3.5};
        s.require(logsumexp(single) == -3.5, "logsumexp single element must be exact");
        const double big[] = {1000.0, 1000.0};
        s.require_close(logsumexp(big), 1000.0 + ln2, 1e-12, "logsumexp([1000,1000])");
        s.require(std::isfinite(logsumexp(big)), "logsumexp must not overflow");
        s.require(logsumexp({}) == kNegInf, "empty logsumexp is -inf");
        const double neg[] = {kNegInf, kNegInf};
        s.require(logsumexp(neg) == kNegInf, "all -inf logsumexp is -inf");
        s.require(lse_combine(0.0, 0.0) == ln2, "lse_combine(0,0)");
        s.require(lse_combine(2.25, kNegInf) == 2.25, "-inf must be an exact identity");
        s.require(lse_combine(kNegInf, 2.25) == 2.25, "-inf must be an exact identity (left)");
        bool threw = false;
        try {
            (void)lse_combine(std::nan(""), 0.0);
        } catch (const std::domain_error&) {
            threw = true;
        }
        s.require(threw, "NaN operand must raise domain_error");
        threw = false;
        try {
            const double bad[] = {1.0, std::nan("")};
            (void)logsumexp(bad);
        } catch (const std::domain_error&) {
            threw = true;
        }
        s.require(threw, "NaN input must raise domain_error");
    }
    for (int c = 0; c < 50 * opts.grid; ++c) {
        const int n = rng.uniform_int(1, 12);
        std::vector<double> xs(static_cast<std::size_t>(n));
        double m = kNegInf;
        for (double& x : xs) {
            x = rng.uniform(-30.0, 30.0);
            m = std::max(m, x);
        }
        const double l = logsumexp(xs);
        s.require(l >= m && l <= m + std::log(static_cast<double>(n)) + 1e-12,
                  fmt("bounds violated: case %d", c));
    }
    return s.take();
}

SuiteResult suite_lse_associativity(const Options& opts) {
    Suite s("lse-associativity");
    Rng rng{mix64(opts.seed, 2)};
    // the negative-control fault swaps operands and perturbs one of them
    const auto comb = [&](double a, double b) {
        return opts.inject_fault ? lse_combine(b + 1e-6, a) : lse_combine(a, b);
    };
    for (int c = 0; c < 100 * opts.grid; ++c) {
        const double x = rng.uniform(-25.0, 25.0);
        const double y = rng.uniform(-25.0, 25.0);
        const double z = rng.uniform(-25.0, 25.0);
        const double left = comb(comb(x, y), z);
        const double right = comb(x, comb(y, z));
        s.require(std::fabs(left - right) <= 1e-12,
                  fmt("associativity: case %d x=%.6g y=%.6g z=%.6g diff=%.3g", c, x, y, z,
                      std::fabs(left - right)));
        s.require(std::fabs(comb(x, y) - comb(y, x)) <= 1e-12,
                  fmt("commutativity: case %d", c));
        const double mx = std::max(std::max(x, y), z);
        s.require(std::max(x, std::max(y, z)) == mx, fmt("max associativity: case %d", c));
    }
    return s.take();
}

SuiteResult suite_dtype_rounding(const Options& opts) {
    Suite s("dtype-rounding");
    Rng rng{mix64(opts.seed, 3)};
    s.require(round_to_dtype(1.0, DType::Bf16) == 1.0, "1.0 is exactly representable");
    s.require(round_to_dtype(1.0 + 0x1p-9, DType::Bf16) == 1.0, "1+2^-9 rounds down to 1.0");
    s.require(round_to_dtype(1.0 + 0x1p-8, DType::Bf16) == 1.0, "1+2^-8 ties to even (1.0)");
    s.require(round_to_dtype(1.0 + 3 * 0x1p-8, DType::Bf16) == 1.0 + 0x1p-6,
              "1+3*2^-8 ties to even (upward)");
    s.require(std::isinf(round_to_dtype(1e39, DType::Bf16)), "beyond-range value overflows to inf");
    for (int c = 0; c < 200 * opts.grid; ++c) {
        const double mag = std::ldexp(1.0 + rng.next01(), rng.uniform_int(-40, 40));
        const double x = rng.next_u64() & 1 ? mag : -mag;
        s.require(round_to_dtype(x, DType::Float64) == x, "f64 rounding is the identity");
        for (DType dt : {DType::Float32, DType::Bf16}) {
            const double r = round_to_dtype(x, dt);
            s.require(round_to_dtype(r, dt) == r, fmt("idempotence: case %d", c));
        }
        const double y = x + std::fabs(rng.uniform(0.0, 0.25) * x);
        for (DType dt : {DType::Float64, DType::Float32, DType::Bf16})
            s.require(round_to_dtype(x, dt) <= round_to_dtype(y, dt),
                      fmt("monotonicity: case %d x=%.17g y=%.17g", c, x, y));
    }
    // nearest-even oracle: enumerate the two 8-bit-significand neighbours
    for (int c = 0; c < 200 * opts.grid; ++c) {
        const int e = rng.uniform_int(-16, 16);
        const double x = std::ldexp(1.0 + rng.next01(), e);
        const double quantum = std::ldexp(1.0, e - 7);
        const double lo = std::floor(x / quantum) * quantum;
        const double hi = lo + quantum;
        double expected;
        if (x - lo < hi - x) expected = lo;
        else if (x - lo > hi - x) expected = hi;
        else expected = std::fmod(lo / quantum, 2.0) == 0.0 ? lo : hi;
        s.require(round_to_dtype(x, DType::Bf16) == expected,
                  fmt("bf16 nearest-even: case %d x=%.17g got=%.17g want=%.17g", c, x,
                      round_to_dtype(x, DType::Bf16), expected));
    }
    return s.take();
}

SuiteResult suite_rng(const Options& opts) {
    Suite s("rng-determinism");
    Rng rng{mix64(opts.seed, 4)};
    const std::uint64_t seed_a = rng.next_u64(), seed_b = rng.next_u64();
    const Tensor a1 = seeded_random_tensor({2, 3, 4, 5}, seed_a, 1.0);
    const Tensor a2 = seeded_random_tensor({2, 3, 4, 5}, seed_a, 1.0);
    const Tensor b1 = seeded_random_tensor({2, 3, 4, 5}, seed_b, 1.0);
    s.require(bitwise_equal(a1, a2), "same seed must give bitwise-identical tensors");
    s.require(!bitwise_equal(a1, b1), "different seeds must differ");
    const Tensor empty = seeded_random_tensor({2, 0, 4}, seed_a, 1.0);
    s.require(empty.numel() == 0, "zero-extent shape gives an empty tensor");
    for (double scale : {1.0, 2.5}) {
        const std::int64_t n = 1000000;
        const Tensor t = seeded_random_tensor({n}, seed_a, scale);
        double sum = 0.0, sumsq = 0.0;
        for (double x : t.data()) {
            sum += x;
            sumsq += x * x;
        }
        const double mean = sum / static_cast<double>(n);
        const double sd = std::sqrt(sumsq / static_cast<double>(n) - mean * mean);
        s.require(std::fabs(mean) <= 5.0 * scale * 1e-3,
                  fmt("mean out of bounds: %.6g (scale %.2g)", mean, scale));
        s.require(std::fabs(sd - scale) <= 0.01 * scale,
                  fmt("sample sd %.6g far from scale %.2g", sd, scale));
    }
    bool threw = false;
    try {
        (void)seeded_random_tensor({2}, 1, 0.0);
    } catch (const std::invalid_argument&) {
        threw = true;
    }
    s.require(threw, "non-positive scale must be rejected");
    return s.take();
}

SuiteResult suite_attention_equivalence(const Options& opts) {
    Suite s("attention-equivalence");
    Rng rng{mix64(opts.seed, 5)};
    for (int c = 0; c < 40 * opts.grid; ++c) {
        const std::int64_t b = rng.uniform_int(1, 2), n_h = rng.uniform_int(1, 3);
        const std::int64_t n = rng.uniform_int(1, 24), d_h = rng.uniform_int(1, 6);
        const std::int64_t n_q = rng.uniform_int(1, 3);
        const double scale = rng.next_u64() & 1 ? 1.0 : 1.0 / std::sqrt(static_cast<double>(d_h));
        Qkv data = random_qkv(rng, b, n_h, n_q, n, d_h);
        const AttentionInput in{data.q, data.k, data.v, false, scale};
        const Tensor ref = attention_naive(in);
        s.require(max_abs_diff(attention_online(in), ref) <= 1e-10,
                  fmt("online vs naive: case %d", c));
        for (const int p : {1, 2, rng.uniform_int(1, static_cast<int>(n)), static_cast<int>(n)}) {
            const auto extents = chunk_extents(n, p);
            std::vector<SoftmaxPartial> parts;
            std::int64_t begin = 0;
            for (std::int64_t ext : extents) {
                parts.push_back(attention_chunk_partial(data.q, slice_seq(data.k, begin, begin + ext),
                                                        slice_seq(data.v, begin, begin + ext), scale));
                begin += ext;
            }
            s.require(max_abs_diff(combine_partials(parts), ref) <= 1e-10,
                      fmt("partition p=%d vs naive: case %d", p, c));
            SoftmaxPartial fold = empty_partial(b, n_h, n_q, d_h, DType::Float64);
            for (const SoftmaxPartial& part : parts) fold = combine_pair(fold, part);
            s.require(max_abs_diff(fold.out, ref) <= 1e-10,
                      fmt("pairwise fold p=%d vs naive: case %d", p, c));
        }
    }
    {
        Qkv data = random_qkv(rng, 1, 2, 1, 1, 4);
        const Tensor out = attention_naive({data.q, data.k, data.v, false, 1.0});
        s.require(max_abs_diff(out, data.v) == 0.0, "N=1 returns the single value row exactly");
    }
    {
        Qkv data = random_qkv(rng, 1, 1, 1, 4, 3);
        const Tensor q0 = zero_like_query(data.q);
        const Tensor out = attention_naive({q0, data.k, data.v, false, 1.0});
        for (std::int64_t j = 0; j < 3; ++j) {
            double mean = 0.0;
            for (std::int64_t i = 0; i < 4; ++i) mean += data.v.at4(0, 0, i, j) / 4.0;
            s.require_close(out.at4(0, 0, 0, j), mean, 1e-15, "zero query averages the values");
        }
    }
    {
        // one score of +300: must stay finite and match the safe reference
        Qkv data = random_qkv(rng, 1, 1, 1, 6, 2);
        Tensor k = data.k;
        k.data()[0] = 300.0;
        k.data()[1] = 0.0;
        Tensor q = data.q;
        q.data()[0] = 1.0;
        q.data()[1] = 0.0;
        const AttentionInput in{q, k, data.v, false, 1.0};
        const Tensor ref = attention_naive(in);
        const Tensor online = attention_online(in);
        s.require(std::isfinite(max_abs(ref)) && max_abs_diff(online, ref) <= 1e-10,
                  "+300 score must stay finite and consistent");
    }
    {
        // float32 grid, relative tolerance
        Qkv data = random_qkv(rng, 1, 2, 2, 16, 4, DType::Float32);
        const AttentionInput in{data.q, data.k, data.v, false, 1.0};
        const Tensor ref = attention_naive(in);
        const double tol = 1e-4 * max_abs(ref);
        s.require(max_abs_diff(attention_online(in), ref) <= tol, "f32 online vs naive");
        auto cache = shard_kv(data.k, data.v, 4);
        std::vector<SoftmaxPartial> parts;
        for (int w = 0; w < 4; ++w)
            parts.push_back(attention_chunk_partial(data.q, cache.k_chunks[w], cache.v_chunks[w], 1.0));
        s.require(max_abs_diff(combine_partials(parts), ref) <= tol, "f32 partition vs naive");
    }
    {
        const SoftmaxPartial empty = empty_partial(1, 1, 1, 2, DType::Float64);
        s.require(empty.lse[0] == kNegInf && empty.row_max[0] == kNegInf &&
                      max_abs(empty.out) == 0.0,
                  "empty chunk partial is the identity");
        bool threw = false;
        try {
            std::vector<SoftmaxPartial> only_empty{empty};
            (void)combine_partials(only_empty);
        } catch (const std::invalid_argument&) {
            threw = true;
        }
        s.require(threw, "all-empty combine must fail");
    }
    return s.take();
}

SuiteResult suite_attention_properties(const Options& opts) {
    Suite s("attention-properties");
    Rng rng{mix64(opts.seed, 6)};
    for (int c = 0; c < 30 * opts.grid; ++c) {
        const std::int64_t b = 1, n_h = rng.uniform_int(1, 2);
        const std::int64_t n = rng.uniform_int(2, 16), d_h = rng.uniform_int(1, 5);
        Qkv data = random_qkv(rng, b, n_h, n, n, d_h);
        // convexity: every output coordinate lies inside the attended values' range
        const Tensor out = attention_naive({data.q, data.k, data.v, true, 1.0});
        for (std::int64_t ih = 0; ih < n_h; ++ih)
            for (std::int64_t iq = 0; iq < n; ++iq)
                for (std::int64_t j = 0; j < d_h; ++j) {
                    double lo = 1e300, hi = -1e300;
                    for (std::int64_t i = 0; i <= iq; ++i) {
                        lo = std::min(lo, data.v.at4(0, ih, i, j));
                        hi = std::max(hi, data.v.at4(0, ih, i, j));
                    }
                    const double x = out.at4(0, ih, iq, j);
                    s.require(x >= lo - 1e-12 && x <= hi + 1e-12,
                              fmt("convexity: case %d row %lld", c, static_cast<long long>(iq)));
                }
        // causal masking: rewriting future keys/values must not change row j
        Tensor k2 = data.k, v2 = data.v;
        const std::int64_t j_row = rng.uniform_int(0, static_cast<int>(n - 1));
        for (std::int64_t ih = 0; ih < n_h; ++ih)
            for (std::int64_t i = j_row + 1; i < n; ++i)
                for (std::int64_t j = 0; j < d_h; ++j) {
                    k2.data()[k2.offset4(0, ih, i, j)] = rng.uniform(-50, 50);
                    v2.data()[v2.offset4(0, ih, i, j)] = rng.uniform(-50, 50);
                }
        const Tensor out2 = attention_naive({data.q, k2, v2, true, 1.0});
        double diff = 0.0;
        for (std::int64_t ih = 0; ih < n_h; ++ih)
            for (std::int64_t j = 0; j < d_h; ++j)
                diff = std::max(diff, std::fabs(out.at4(0, ih, j_row, j) -
                                                out2.at4(0, ih, j_row, j)));
        s.require(diff == 0.0, fmt("causal invariance: case %d", c));
    }
    // shift invariance: adding a constant to all scores of a row via an
    // appended coordinate (q has c, k has 1, v has 0 there)
    for (int c = 0; c < 20 * opts.grid; ++c) {
        const std::int64_t n = rng.uniform_int(1, 12), d_h = rng.uniform_int(1, 4);
        Qkv data = random_qkv(rng, 1, 1, 1, n, d_h);
        const double shift = rng.uniform(-8.0, 8.0);
        std::vector<double> qa, ka, va;
        for (std::int64_t j = 0; j < d_h; ++j) qa.push_back(data.q.at4(0, 0, 0, j));
        qa.push_back(shift);
        for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t j = 0; j < d_h; ++j) ka.push_back(data.k.at4(0, 0, i, j));
            ka.push_back(1.0);
            for (std::int64_t j = 0; j < d_h; ++j) va.push_back(data.v.at4(0, 0, i, j));
            va.push_back(0.0);
        }
        const Tensor q2({1, 1, 1, d_h + 1}, qa), k2({1, 1, n, d_h + 1}, ka),
            v2({1, 1, n, d_h + 1}, va);
        const Tensor base = attention_naive({data.q, data.k, data.v, false, 1.0});
        const Tensor shifted = attention_naive({q2, k2, v2, false, 1.0});
        double diff = 0.0;
        for (std::int64_t j = 0; j < d_h; ++j)
            diff = std::max(diff, std::fabs(base.at4(0, 0, 0, j) - shifted.at4(0, 0, 0, j)));
        s.require(diff <= 1e-12, fmt("shift invariance: case %d shift=%.3g diff=%.3g", c, shift, diff));
    }
    return s.take();
}

// central-difference oracle for dF/dsource at one coordinate
double fd_energy_coord(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& source,
                       std::int64_t flat_coord, double h) {
    Tensor plus = source.empty() ? Tensor::zeros(q.shape(), q.dtype()) : source;
    Tensor minus = plus;
    plus.data()[static_cast<std::size_t>(flat_coord)] += h;
    minus.data()[static_cast<std::size_t>(flat_coord)] -= h;
    double fp = 0.0, fm = 0.0;
    const EnergyEval ep = energy(q, k, v, plus), em = energy(q, k, v, minus);
    for (std::int64_t i = 0; i < ep.value.numel(); ++i) {
        fp += ep.value[i];
        fm += em.value[i];
    }
    return (fp - fm) / (2.0 * h);
}

SuiteResult suite_gradient_identity(const Options& opts) {
    Suite s("energy-gradient-identity");
    Rng rng{mix64(opts.seed, 7)};
    for (int c = 0; c < 40 * opts.grid; ++c) {
        const std::int64_t b = rng.uniform_int(1, 2), n_h = rng.uniform_int(1, 2);
        const std::int64_t n = rng.uniform_int(1, 24), d_h = rng.uniform_int(1, 6);
        Qkv data = random_qkv(rng, b, n_h, 1, n, d_h);
        const Tensor grad = grad_energy_wrt_source(data.q, data.k, data.v, Tensor{});
        const Tensor attn = attention_naive({data.q, data.k, data.v, false, 1.0});
        s.require(max_abs_diff(grad, attn) <= 1e-12,
                  fmt("gradient identity: case %d diff=%.3g", c, max_abs_diff(grad, attn)));
        // finite differences at zero source and at a random source
        for (const bool zero_source : {true, false}) {
            const Tensor source =
                zero_source ? Tensor{}
                            : seeded_random_tensor(data.q.shape(), rng.next_u64(), 0.5);
            const Tensor an = grad_energy_wrt_source(data.q, data.k, data.v, source);
            double max_diff = 0.0;
            for (std::int64_t i = 0; i < an.numel(); ++i)
                max_diff = std::max(
                    max_diff,
                    std::fabs(fd_energy_coord(data.q, data.k, data.v, source, i, 1e-5) - an[i]));
            const double rel = max_diff / max_abs(an);
            s.require(rel <= 1e-6, fmt("finite differences: case %d rel=%.3g", c, rel));
        }
    }
    {
        // zero query: gradient equals the value mean
        Qkv data = random_qkv(rng, 1, 1, 1, 5, 3);
        const Tensor grad =
            grad_energy_wrt_source(zero_like_query(data.q), data.k, data.v, Tensor{});
        for (std::int64_t j = 0; j < 3; ++j) {
            double mean = 0.0;
            for (std::int64_t i = 0; i < 5; ++i) mean += data.v.at4(0, 0, i, j) / 5.0;
            s.require_close(grad.at4(0, 0, 0, j), mean, 1e-13, "zero-query gradient");
        }
    }
    // causal gradient matches causal attention
    for (int c = 0; c < 10 * opts.grid; ++c) {
        const std::int64_t n = rng.uniform_int(1, 12), d_h = rng.uniform_int(1, 4);
        Qkv data = random_qkv(rng, 1, 2, n, n, d_h);
        const Tensor grad = grad_energy_wrt_source(data.q, data.k, data.v, Tensor{}, true);
        const Tensor attn = attention_naive({data.q, data.k, data.v, true, 1.0});
        s.require(max_abs_diff(grad, attn) <= 1e-12, fmt("causal gradient identity: case %d", c));
    }
    return s.take();
}

SuiteResult suite_gamma(const Options& opts) {
    Suite s("gamma-stationarity");
    Rng rng{mix64(opts.seed, 8)};
    for (int c = 0; c < 15 * opts.grid; ++c) {
        const std::int64_t b = 1, n_h = rng.uniform_int(1, 2);
        const std::int64_t n = rng.uniform_int(1, 10), d_h = rng.uniform_int(1, 4);
        Qkv data = random_qkv(rng, b, n_h, n, n, d_h);
        const Tensor attn = attention_naive({data.q, data.k, data.v, true, 1.0});
        const Tensor zero = zero_like_query(data.q);
        // Gamma at zero source reduces to the negative causal energy
        s.require(gamma_log_likelihood(zero, attn, data.q, data.k, data.v) ==
                      -energy_total_causal(data.q, data.k, data.v, zero),
                  fmt("gamma at zero source: case %d", c));
        // stationarity w.r.t. the source at the attention output
        const double h = 1e-5;
        double worst_source = 0.0;
        for (std::int64_t i = 0; i < zero.numel(); ++i) {
            Tensor plus = zero, minus = zero;
            plus.data()[static_cast<std::size_t>(i)] += h;
            minus.data()[static_cast<std::size_t>(i)] -= h;
            const double fd = (gamma_log_likelihood(plus, attn, data.q, data.k, data.v) -
                               gamma_log_likelihood(minus, attn, data.q, data.k, data.v)) /
                              (2.0 * h);
            worst_source = std::max(worst_source, std::fabs(fd));
        }
        s.require(worst_source <= 1e-8,
                  fmt("dGamma/dsource not stationary: case %d max=%.3g", c, worst_source));
        // stationarity w.r.t. the activation at zero source (exactly linear)
        double worst_act = 0.0;
        for (std::int64_t i = 0; i < attn.numel(); ++i) {
            Tensor plus = attn, minus = attn;
            plus.data()[static_cast<std::size_t>(i)] += h;
            minus.data()[static_cast<std::size_t>(i)] -= h;
            const double fd = (gamma_log_likelihood(zero, plus, data.q, data.k, data.v) -
                               gamma_log_likelihood(zero, minus, data.q, data.k, data.v)) /
                              (2.0 * h);
            worst_act = std::max(worst_act, std::fabs(fd));
        }
        s.require(worst_act <= 1e-12,
                  fmt("dGamma/dactivation not zero: case %d max=%.3g", c, worst_act));
    }
    return s.take();
}

SuiteResult suite_energy_parallel(const Options& opts) {
    Suite s("energy-parallel-consistency");
    Rng rng{mix64(opts.seed, 9)};
    for (int c = 0; c < 25 * opts.grid; ++c) {
        const std::int64_t b = rng.uniform_int(1, 2), n_h = rng.uniform_int(1, 2);
        const std::int64_t n = rng.uniform_int(2, 20), d_h = rng.uniform_int(1, 5);
        Qkv data = random_qkv(rng, b, n_h, 1, n, d_h);
        const Tensor source = seeded_random_tensor(data.q.shape(), rng.next_u64(), 0.5);
        const EnergyEval seq = energy(data.q, data.k, data.v, source);
        // recombination identity
        for (std::int64_t i = 0; i < seq.value.numel(); ++i)
            s.require(seq.value[i] == seq.shifted_lse[i] + seq.row_max[i],
                      fmt("recombination: case %d", c));
        for (const int p : {1, 2, 3, 7, static_cast<int>(n)}) {
            if (p > n) continue;
            const EnergyEval par = energy_forward_parallel(data.q, data.k, data.v, source, p);
            s.require(max_abs_diff(par.value, seq.value) <= 1e-12,
                      fmt("forward p=%d: case %d", p, c));
            s.require(bitwise_equal(par.row_max, seq.row_max),
                      fmt("forward max p=%d: case %d", p, c));
        }
        // p=1 reproduces the sequential evaluation bitwise
        const EnergyEval p1 = energy_forward_parallel(data.q, data.k, data.v, source, 1);
        s.require(bitwise_equal(p1.value, seq.value), fmt("forward p=1 bitwise: case %d", c));

        const EnergyEval saved = energy_forward_parallel(data.q, data.k, data.v, Tensor{}, 1);
        const Tensor attn = attention_naive({data.q, data.k, data.v, false, 1.0});
        Tensor first;
        for (const int p : {1, 2, 4}) {
            if (p > n) continue;
            const Tensor grad = energy_grad_parallel(data.q, data.k, data.v, saved, p);
            s.require(max_abs_diff(grad, attn) <= 1e-12,
                      fmt("grad parallel p=%d: case %d", p, c));
            if (first.empty()) first = grad;
            else
                s.require(max_abs_diff(grad, first) <= 1e-12,
                          fmt("grad chunk independence p=%d: case %d", p, c));
        }
        // partition function agrees with the energy in log space
        const Tensor z = partition_with_source(data.q, data.k, data.v, source);
        for (std::int64_t i = 0; i < z.numel(); ++i)
            s.require(std::fabs(std::log(z[i]) - seq.value[i]) <= 1e-12,
                      fmt("log Z vs energy: case %d", c));
    }
    {
        // q = 0, source = 0, N = 8 -> F = ln 8; total causal at N = 4 -> ln 4!
        Qkv data = random_qkv(rng, 1, 1, 1, 8, 3);
        const EnergyEval e = energy(zero_like_query(data.q), data.k, data.v,
                                    zero_like_query(data.q));
        s.require_close(e.value[0], std::log(8.0), 1e-14, "uniform energy ln N");
        Qkv data4 = random_qkv(rng, 1, 1, 4, 4, 2);
        const double tot = energy_total_causal(zero_like_query(data4.q), data4.k, data4.v,
                                               zero_like_query(data4.q));
        s.require_close(tot, std::log(24.0), 1e-13, "causal total ln N!");
        // energy shifts exactly with a constant added to all scores
        const EnergyEval base = energy(data.q, data.k, data.v, Tensor{});
        // append a coordinate carrying the shift (k has 1, v has 0 there)
        const double cshift = 3.0;
        std::vector<double> qa, ka, va;
        for (std::int64_t j = 0; j < 3; ++j) qa.push_back(data.q.at4(0, 0, 0, j));
        qa.push_back(cshift);
        for (std::int64_t i = 0; i < 8; ++i) {
            for (std::int64_t j = 0; j < 3; ++j) ka.push_back(data.k.at4(0, 0, i, j));
            ka.push_back(1.0);
            for (std::int64_t j = 0; j < 3; ++j) va.push_back(data.v.at4(0, 0, i, j));
            va.push_back(0.0);
        }
        const EnergyEval shifted = energy(Tensor({1, 1, 1, 4}, qa), Tensor({1, 1, 8, 4}, ka),
                                          Tensor({1, 1, 8, 4}, va), Tensor{});
        s.require_close(shifted.value[0], base.value[0] + cshift, 1e-12,
                        "energy shift identity");
    }
    {
        // multi-head total equals the sum of single-head evaluations
        Qkv data = random_qkv(rng, 1, 2, 6, 6, 3);
        const Tensor zero = zero_like_query(data.q);
        double per_head = 0.0;
        for (std::int64_t h = 0; h < 2; ++h) {
            std::vector<double> qa, ka, va, za;
            for (std::int64_t i = 0; i < 6; ++i)
                for (std::int64_t j = 0; j < 3; ++j) {
                    qa.push_back(data.q.at4(0, h, i, j));
                    ka.push_back(data.k.at4(0, h, i, j));
                    va.push_back(data.v.at4(0, h, i, j));
                    za.push_back(0.0);
                }
            per_head += energy_total_causal(Tensor({1, 1, 6, 3}, qa), Tensor({1, 1, 6, 3}, ka),
                                            Tensor({1, 1, 6, 3}, va), Tensor({1, 1, 6, 3}, za));
        }
        s.require_close(energy_total_causal(data.q, data.k, data.v, zero), per_head, 1e-12,
                        "multi-head decomposition");
    }
    return s.take();
}

SuiteResult suite_moments(const Options& opts) {
    Suite s("moment-extraction");
    Rng rng{mix64(opts.seed, 10)};
    for (int c = 0; c < 20 * opts.grid; ++c) {
        const std::int64_t n = rng.uniform_int(1, 12), d_h = rng.uniform_int(1, 5);
        Qkv data = random_qkv(rng, 1, 1, 1, n, d_h);
        const Tensor attn = attention_naive({data.q, data.k, data.v, false, 1.0});
        const auto a1 = static_cast<std::int64_t>(rng.uniform_int(0, static_cast<int>(d_h - 1)));
        const auto a2 = static_cast<std::int64_t>(rng.uniform_int(0, static_cast<int>(d_h - 1)));
        s.require_close(moment_via_source(data.q, data.k, data.v, 1, a1), attn.at4(0, 0, 0, a1),
                        1e-12, fmt("first moment: case %d", c));
        // second moment vs the finite-difference Taylor coefficient of Z
        const double h = 1e-4;
        const auto z_at = [&](double ha, double hb) {
            Tensor source = Tensor::zeros(data.q.shape(), DType::Float64);
            source.data()[static_cast<std::size_t>(a1)] += ha;
            source.data()[static_cast<std::size_t>(a2)] += hb;
            return partition_with_source(data.q, data.k, data.v, source)[0];
        };
        const double z0 = z_at(0.0, 0.0);
        double fd;
        if (a1 == a2) fd = (z_at(h, 0.0) - 2.0 * z0 + z_at(-h, 0.0)) / (h * h) / z0;
        else
            fd = (z_at(h, h) - z_at(h, -h) - z_at(-h, h) + z_at(-h, -h)) / (4.0 * h * h) / z0;
        const double m2 = moment_via_source(data.q, data.k, data.v, 2, a1, a2);
        s.require(std::fabs(fd - m2) / std::max(1e-6, std::fabs(m2)) <= 1e-5,
                  fmt("second moment fd: case %d fd=%.9g m2=%.9g", c, fd, m2));
    }
    {
        // constant values: second moment degenerates to a product
        const std::int64_t n = 5, d_h = 3;
        Rng local{mix64(opts.seed, 1000)};
        Qkv data = random_qkv(local, 1, 1, 1, n, d_h);
        Tensor v = data.v;
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < d_h; ++j)
                v.data()[v.offset4(0, 0, i, j)] = v.at4(0, 0, 0, j);
        const double m2 = moment_via_source(data.q, data.k, v, 2, 0, 2);
        s.require_close(m2, v.at4(0, 0, 0, 0) * v.at4(0, 0, 0, 2), 1e-12,
                        "degenerate second moment");
        bool threw = false;
        try {
            (void)moment_via_source(data.q, data.k, v, 3, 0);
        } catch (const std::invalid_argument&) {
            threw = true;
        }
        s.require(threw, "order outside {1,2} must be rejected");
        // probability normalization: moment of an all-ones coordinate is 1
        Tensor ones = v;
        for (std::int64_t i = 0; i < ones.numel(); ++i) ones.data()[static_cast<std::size_t>(i)] = 1.0;
        s.require_close(moment_via_source(data.q, data.k, ones, 1, 0), 1.0, 1e-12,
                        "probabilities sum to one");
    }
    return s.take();
}

SuiteResult suite_reduction_schedules(const Options& opts) {
    Suite s("reduction-schedules");
    Rng rng{mix64(opts.seed, 11)};
    for (int p = 1; p <= 33; ++p) {
        std::vector<long long> ints(static_cast<std::size_t>(p));
        long long flat = 0;
        for (auto& x : ints) {
            x = rng.uniform_int(-1000, 1000);
            flat += x;
        }
        const auto plus = [](long long a, long long b) { return a + b; };
        const auto [tv, tr] = tree_reduce<long long>(ints, plus, 0LL);
        s.require(tv == flat && tr == ceil_log2(p), fmt("tree reduce p=%d", p));
        const auto [rv, rr] = ring_allreduce<long long>(ints, plus, 0LL);
        s.require(rv == flat && rr == 2 * (p - 1), fmt("ring allreduce p=%d", p));
        for (int g = 1; g <= p; ++g) {
            if (p % g != 0) continue;
            const int nodes = p / g;
            const auto h = hierarchical_allreduce<long long>(ints, plus, 0LL, nodes, g);
            s.require(h.value == flat && h.rounds_intra == g - 1 &&
                          h.rounds_inter == ceil_log2(nodes),
                      fmt("hierarchical %dx%d", nodes, g));
            const auto sched = hierarchical_allreduce_schedule(nodes, g);
            s.require(static_cast<int>(sched.rounds.size()) ==
                          2 * (g - 1) + 2 * ceil_log2(nodes),
                      fmt("hierarchical total rounds %dx%d", nodes, g));
        }
        // floating logsumexp agreement across schedules
        std::vector<double> xs(static_cast<std::size_t>(p));
        for (auto& x : xs) x = rng.uniform(-20.0, 20.0);
        const double flat_lse = logsumexp(xs);
        const auto lse = [](double a, double b) { return lse_combine(a, b); };
        s.require(std::fabs(tree_reduce<double>(xs, lse, kNegInf).first - flat_lse) <= 1e-12,
                  fmt("tree lse p=%d", p));
        s.require(std::fabs(ring_allreduce<double>(xs, lse, kNegInf).first - flat_lse) <= 1e-12,
                  fmt("ring lse p=%d", p));
    }
    {
        const auto plus = [](long long a, long long b) { return a + b; };
        const std::vector<long long> xs{1, 2, 3, 4};
        const auto [v, r] = tree_reduce<long long>(xs, plus, 0LL);
        s.require(v == 10 && r == 2, "tree sum of [1,2,3,4]");
        const std::vector<long long> ones{1, 1, 1, 1};
        const auto [rv, rr] = ring_allreduce<long long>(ones, plus, 0LL);
        s.require(rv == 4 && rr == 6, "ring sum of four ones");
        const auto [ev, er] = tree_reduce<long long>(std::span<const long long>{}, plus, 7LL);
        s.require(ev == 7 && er == 0, "empty reduce returns the identity");
        const std::vector<long long> single{42};
        s.require(ring_allreduce<long long>(single, plus, 0LL) == std::make_pair(42LL, 0),
                  "p=1 ring is free");
        const auto c1 = complexity_model(1024, 1);
        const auto c2 = complexity_model(1024, 1024);
        const auto c3 = complexity_model(1000, 8);
        s.require(c1.local_work == 1024 && c1.comm_rounds == 0, "complexity (1024,1)");
        s.require(c2.local_work == 1 && c2.comm_rounds == 10, "complexity (1024,1024)");
        s.require(c3.local_work == 125 && c3.comm_rounds == 3, "complexity (1000,8)");
    }
    {
        // softmax partials through every schedule reproduce the reference
        Qkv data = random_qkv(rng, 1, 2, 1, 12, 4);
        const Tensor ref = attention_naive({data.q, data.k, data.v, false, 1.0});
        const auto cache = shard_kv(data.k, data.v, 6);
        std::vector<SoftmaxPartial> parts;
        for (int w = 0; w < 6; ++w)
            parts.push_back(
                attention_chunk_partial(data.q, cache.k_chunks[w], cache.v_chunks[w], 1.0));
        const SoftmaxPartial identity = empty_partial(1, 2, 1, 4, DType::Float64);
        const auto comb = [](const SoftmaxPartial& a, const SoftmaxPartial& b) {
            return combine_pair(a, b);
        };
        s.require(max_abs_diff(tree_reduce<SoftmaxPartial>(parts, comb, identity).first.out,
                               ref) <= 1e-10,
                  "partials through tree");
        s.require(max_abs_diff(ring_allreduce<SoftmaxPartial>(parts, comb, identity).first.out,
                               ref) <= 1e-10,
                  "partials through ring");
        s.require(
            max_abs_diff(
                hierarchical_allreduce<SoftmaxPartial>(parts, comb, identity, 2, 3).value.out,
                ref) <= 1e-10,
            "partials through hierarchical");
        // threaded round execution must be bitwise identical
        std::vector<SoftmaxPartial> seq_vals = parts, par_vals = parts;
        const auto sched = hierarchical_allreduce_schedule(2, 3);
        execute_schedule(sched, seq_vals, comb, false);
        execute_schedule(sched, par_vals, comb, true);
        s.require(bitwise_equal(seq_vals[0].out, par_vals[0].out) &&
                      bitwise_equal(seq_vals[0].lse, par_vals[0].lse),
                  "threaded execution must match sequential bitwise");
    }
    return s.take();
}

SuiteResult suite_decode_exactness(const Options& opts) {
    Suite s("decode-exactness");
    Rng rng{mix64(opts.seed, 12)};
    for (int rep = 0; rep < opts.grid; ++rep)
        for (const std::int64_t n : {17LL, 32LL}) {
            for (const std::int64_t n_h : {1LL, 2LL}) {
                Qkv data = random_qkv(rng, 1, n_h, 1, n, 4);
                const Tensor ref = attention_naive({data.q, data.k, data.v, false, 1.0});
                for (const int p : {1, 2, 3, 4, 8}) {
                    const auto cache = shard_kv(data.k, data.v, p);
                    const Topology topo = topology_for_workers(p);
                    for (const ReduceStrategy st :
                         {ReduceStrategy::TreeBinary, ReduceStrategy::Ring,
                          ReduceStrategy::Hierarchical}) {
                        const DecodeResult dr = tree_decode(data.q, cache, topo, st);
                        s.require(max_abs_diff(dr.output, ref) <= 1e-10,
                                  fmt("tree decode N=%lld p=%d %s", static_cast<long long>(n), p,
                                      strategy_name(st)));
                    }
                    const DecodeResult rr = ring_decode(data.q, cache, topo);
                    s.require(max_abs_diff(rr.output, ref) <= 1e-10,
                              fmt("ring decode N=%lld p=%d", static_cast<long long>(n), p));
                    if (p == 1) {
                        const DecodeResult tr = tree_decode(data.q, cache, topo);
                        s.require(bitwise_equal(tr.output, ref) && tr.cost.sim_time_s == 0.0,
                                  "p=1 tree decode is exactly the local kernel");
                        s.require(bitwise_equal(rr.output, ref) && rr.cost.sim_time_s == 0.0,
                                  "p=1 ring decode is exactly the local kernel");
                    }
                }
            }
        }
    {
        // reduced-precision grids, relative tolerance
        for (const DType dt : {DType::Float32, DType::Bf16}) {
            Qkv data = random_qkv(rng, 1, 2, 1, 64, 8, dt);
            const Tensor ref = attention_naive({data.q, data.k, data.v, false, 1.0});
            const double tol = decode_tolerance_abs(dt, max_abs(ref));
            const auto cache = shard_kv(data.k, data.v, 8);
            const Topology topo = topology_for_workers(8);
            const double tree_err = max_abs_diff(tree_decode(data.q, cache, topo).output, ref);
            const double ring_err = max_abs_diff(ring_decode(data.q, cache, topo).output, ref);
            s.require(tree_err <= tol, fmt("%s tree decode N=64 p=8: err=%.3g tol=%.3g",
                                           dtype_name(dt), tree_err, tol));
            s.require(ring_err <= tol, fmt("%s ring decode N=64 p=8: err=%.3g tol=%.3g",
                                           dtype_name(dt), ring_err, tol));
        }
    }
    {
        // determinism: bitwise-identical outputs and identical accounts
        Qkv data = random_qkv(rng, 1, 2, 1, 40, 4);
        const auto cache = shard_kv(data.k, data.v, 5);
        const Topology topo = topology_for_workers(5);
        const DecodeResult a = tree_decode(data.q, cache, topo);
        const DecodeResult b = tree_decode(data.q, cache, topo);
        s.require(bitwise_equal(a.output, b.output), "tree decode determinism");
        s.require(a.cost.sim_time_s == b.cost.sim_time_s &&
                      a.cost.elems_sent_total() == b.cost.elems_sent_total() &&
                      a.cost.rounds == b.cost.rounds &&
                      a.cost.peak_elems_per_worker == b.cost.peak_elems_per_worker,
                  "tree decode account determinism");
        const DecodeResult c = ring_decode(data.q, cache, topo);
        const DecodeResult d = ring_decode(data.q, cache, topo);
        s.require(bitwise_equal(c.output, d.output), "ring decode determinism");
        // threaded local kernels must not change anything
        const DecodeResult e = tree_decode(data.q, cache, topo, ReduceStrategy::Hierarchical,
                                           1.0, true);
        s.require(bitwise_equal(a.output, e.output), "threaded workers bitwise identical");
        // shard/reassemble round trip
        s.require(bitwise_equal(concat_seq(cache.k_chunks), data.k) &&
                      bitwise_equal(concat_seq(cache.v_chunks), data.v),
                  "shard reassembly is exact");
        const auto sizes = chunk_extents(10, 4);
        s.require(sizes == std::vector<std::int64_t>({3, 3, 2, 2}), "remainder chunk rule");
        bool threw = false;
        try {
            (void)shard_kv(data.k, data.v, 41);
        } catch (const std::invalid_argument&) {
            threw = true;
        }
        s.require(threw, "p > N must be rejected");
    }
    return s.take();
}

SuiteResult suite_counter_formulas(const Options& opts) {
    Suite s("counter-formulas");
    Rng rng{mix64(opts.seed, 13)};
    // closed forms at pinned values
    s.require(peak_memory_formula(DecodeAlgo::Ring, 1, 2, 4, 1) == 40, "ring peak formula");
    s.require(peak_memory_formula(DecodeAlgo::Tree, 1, 2, 4, 1) == 26, "tree peak formula");
    s.require(comm_volume_formula(DecodeAlgo::Ring, 1, 1000, 2048, 16, 8) == 32768000.0,
              "ring volume formula");
    s.require(comm_volume_formula(DecodeAlgo::Tree, 1, 1000, 2048, 16, 8) ==
                  2.0 * 7.0 / 8.0 * (2048 + 32),
              "tree volume formula");
    s.require(comm_volume_formula(DecodeAlgo::Tree, 1, 5, 2048, 16, 1) == 0.0,
              "tree volume vanishes at p=1");
    {
        const LinkParams link{1e-5, 1e9};
        s.require(p2p_cost(500000, link, 2) == 1e-5 + 1e-3, "p2p cost formula");
        s.require(p2p_cost(0, link, 2) == 1e-5, "zero payload costs the latency");
        const LinkParams nolat{0.0, 1e9};
        s.require(p2p_cost(2000, nolat, 2) == 2.0 * p2p_cost(1000, nolat, 2),
                  "linearity in payload");
    }
    {
        // round duration takes the slowest transfer; counters split by link class
        Topology topo;
        topo.nodes = 2;
        topo.gpus_per_node = 2;
        ReductionSchedule sched{ReduceStrategy::TreeBinary, 4, {}, 1, 0, 0};
        sched.rounds.push_back({{1, 0, true}, {3, 2, true}});
        const CostAccount acc = simulate_schedule(sched, 100, topo);
        s.require(acc.sim_time_s == p2p_cost(100, topo.intra, topo.element_bytes) &&
                      acc.wire_elems_intra == 200 && acc.wire_elems_inter == 0,
                  "parallel intra round");
        ReductionSchedule mixed{ReduceStrategy::TreeBinary, 4, {}, 1, 0, 0};
        mixed.rounds.push_back({{1, 0, true}, {2, 0, false}});
        const CostAccount acc2 = simulate_schedule(mixed, 50, topo);
        s.require(acc2.sim_time_s == p2p_cost(50, topo.inter, topo.element_bytes),
                  "round duration is the max transfer cost");
        s.require(acc2.elems_sent_intra == 50.0 && acc2.elems_sent_inter == 50.0,
                  "executed counters by link class");
        // single intra transfer example
        ReductionSchedule one{ReduceStrategy::TreeBinary, 2, {}, 1, 0, 0};
        one.rounds.push_back({{1, 0, true}});
        const CostAccount acc3 = simulate_schedule(one, 100, topo);
        s.require(acc3.sim_time_s == p2p_cost(100, topo.intra, topo.element_bytes) &&
                      acc3.elems_sent_intra == 100.0,
                  "single transfer accounting");
        // tree reduce over one 8-gpu node: three uniform rounds
        const Topology topo8 = topology_for_workers(8);
        const CostAccount acc4 = simulate_schedule(tree_reduce_schedule(8), 64, topo8);
        s.require(acc4.sim_time_s == 3.0 * p2p_cost(64, topo8.intra, topo8.element_bytes),
                  "tree reduce time = 3 rounds");
    }
    // decode counters vs closed forms
    for (int rep = 0; rep < opts.grid; ++rep)
        for (const std::int64_t n : {64LL, 128LL}) {
            for (const std::int64_t n_h : {1LL, 2LL}) {
                const std::int64_t d_h = 4, b = 1, d = n_h * d_h;
                Qkv data = random_qkv(rng, b, n_h, 1, n, d_h);
                for (const int p : {1, 2, 4, 8}) {
                    const auto cache = shard_kv(data.k, data.v, p);
                    const Topology topo = topology_for_workers(p);
                    const std::int64_t t = n / p;
                    for (const ReduceStrategy st :
                         {ReduceStrategy::TreeBinary, ReduceStrategy::Ring,
                          ReduceStrategy::Hierarchical}) {
                        const DecodeResult dr = tree_decode(data.q, cache, topo, st);
                        s.require(dr.cost.elems_sent_total() ==
                                      comm_volume_formula_seq(DecodeAlgo::Tree, b, n, d, n_h, p),
                                  fmt("tree conv volume p=%d %s", p, strategy_name(st)));
                        s.require(dr.cost.wire_elems_total() ==
                                      static_cast<std::uint64_t>(2 * (p - 1) * (b * d + 2 * b * n_h)),
                                  fmt("tree wire volume p=%d %s", p, strategy_name(st)));
                        s.require(dr.cost.peak_elems_per_worker ==
                                      peak_memory_formula(DecodeAlgo::Tree, b, t, d, n_h),
                                  fmt("tree peak p=%d %s", p, strategy_name(st)));
                    }
                    const DecodeResult rr = ring_decode(data.q, cache, topo);
                    const double ring_conv =
                        p > 1 ? comm_volume_formula_seq(DecodeAlgo::Ring, b, n, d, n_h, p) : 0.0;
                    s.require(rr.cost.elems_sent_total() == ring_conv,
                              fmt("ring conv volume p=%d", p));
                    s.require(rr.cost.wire_elems_total() ==
                                  static_cast<std::uint64_t>((p - 1) * 2 * b * d * n),
                              fmt("ring wire volume p=%d", p));
                    const std::uint64_t ring_peak =
                        p > 1 ? peak_memory_formula(DecodeAlgo::Ring, b, t, d, n_h)
                              : static_cast<std::uint64_t>(2 * b * t * d + 2 * b * d);
                    s.require(rr.cost.peak_elems_per_worker == ring_peak,
                              fmt("ring peak p=%d", p));
                    // round counts per the closed forms
                    s.require(rr.cost.rounds == static_cast<std::uint64_t>(p - 1),
                              fmt("ring rounds p=%d", p));
                    const DecodeResult tb =
                        tree_decode(data.q, cache, topo, ReduceStrategy::TreeBinary);
                    for (const CollectiveRounds& cr : tb.collectives)
                        s.require(cr.reduce_rounds == ceil_log2(p),
                                  fmt("tree reduce rounds p=%d", p));
                }
            }
        }
    {
        // the tree payload does not depend on the sequence length
        Qkv a = random_qkv(rng, 1, 2, 1, 64, 4);
        Qkv bqkv = random_qkv(rng, 1, 2, 1, 1024, 4);
        const Topology topo = topology_for_workers(4);
        const DecodeResult da = tree_decode(a.q, shard_kv(a.k, a.v, 4), topo);
        const DecodeResult db = tree_decode(bqkv.q, shard_kv(bqkv.k, bqkv.v, 4), topo);
        s.require(da.cost.elems_sent_total() == db.cost.elems_sent_total() &&
                      da.cost.wire_elems_total() == db.cost.wire_elems_total(),
                  "tree volume independent of N");
        // memory-gap doubling between hidden sizes 2048 and 4096
        const std::int64_t t = 1000, n_h = 16;
        const auto gap = [&](std::int64_t d) {
            return static_cast<double>(peak_memory_formula(DecodeAlgo::Ring, 1, t, d, n_h) -
                                       peak_memory_formula(DecodeAlgo::Tree, 1, t, d, n_h));
        };
        const double ratio = gap(4096) / gap(2048);
        s.require(ratio >= 1.99 && ratio <= 2.01, fmt("memory gap doubling ratio=%.6f", ratio));
    }
    {
        // simulated time is monotone in payload, latency and inverse bandwidth
        Topology topo = topology_for_workers(4);
        const auto sched = tree_allreduce_schedule(4);
        const double base = simulate_schedule(sched, 1000, topo).sim_time_s;
        s.require(simulate_schedule(sched, 2000, topo).sim_time_s >= base,
                  "monotone in payload");
        Topology slow_lat = topo;
        slow_lat.intra.latency_s *= 10;
        s.require(simulate_schedule(sched, 1000, slow_lat).sim_time_s >= base,
                  "monotone in latency");
        Topology slow_bw = topo;
        slow_bw.intra.bandwidth_Bps /= 10;
        s.require(simulate_schedule(sched, 1000, slow_bw).sim_time_s >= base,
                  "monotone in inverse bandwidth");
    }
    return s.take();
}

SuiteResult suite_safe_softmax(const Options& opts) {
    Suite s("safe-softmax-grad-invariance");
    Rng rng{mix64(opts.seed, 14)};
    for (int c = 0; c < 30 * opts.grid; ++c) {
        const std::int64_t b = 1, n_h = rng.uniform_int(1, 2);
        const std::int64_t n = rng.uniform_int(2, 20), d_h = rng.uniform_int(1, 5);
        Qkv data = random_qkv(rng, b, n_h, 1, n, d_h);
        const EnergyEval saved = energy_forward_parallel(data.q, data.k, data.v, Tensor{}, 2);
        const Tensor shifted_grad = energy_grad_parallel(data.q, data.k, data.v, saved, 2);
        // re-split the same energy without any shift (max moved into the lse)
        EnergyEval unshifted{saved.value, Tensor::zeros(saved.row_max.shape(), DType::Float64),
                             saved.value};
        const Tensor unshifted_grad =
            energy_grad_parallel(data.q, data.k, data.v, unshifted, 2);
        s.require(max_abs_diff(shifted_grad, unshifted_grad) <= 1e-12,
                  fmt("shifted vs unshifted gradient: case %d", c));
        // and an arbitrary re-split
        const double cshift = rng.uniform(-5.0, 5.0);
        EnergyEval resplit = saved;
        for (std::int64_t i = 0; i < resplit.row_max.numel(); ++i) {
            resplit.row_max.data()[static_cast<std::size_t>(i)] = cshift;
            resplit.shifted_lse.data()[static_cast<std::size_t>(i)] = saved.value[i] - cshift;
        }
        const Tensor resplit_grad = energy_grad_parallel(data.q, data.k, data.v, resplit, 2);
        s.require(max_abs_diff(shifted_grad, resplit_grad) <= 1e-12,
                  fmt("arbitrary re-split gradient: case %d", c));
        const Tensor analytic = grad_energy_wrt_source(data.q, data.k, data.v, Tensor{});
        s.require(max_abs_diff(shifted_grad, analytic) <= 1e-12,
                  fmt("gradient route agreement: case %d", c));
    }
    return s.take();
}

SuiteResult suite_overlap(const Options& opts) {
    Suite s("overlap-feasibility");
    (void)opts;
    const Topology topo = topology_for_workers(8);
    // decoding a 640k context on 8 GPUs with hidden size 2048, 2-byte elements
    const OverlapFeasibility worked = overlap_feasibility(topo, 1, 640000 / 8, 2048, {});
    s.require(!worked.feasible && worked.ratio <= 0.1 && worked.ratio > 0.0,
              fmt("worked example ratio=%.6g", worked.ratio));
    const OverlapFeasibility zero = overlap_feasibility(topo, 1, 0, 2048, {});
    s.require(zero.feasible && std::isinf(zero.ratio), "zero transfer is trivially feasible");
    Topology fast = topo;
    fast.intra.bandwidth_Bps *= 1000.0;
    const OverlapFeasibility scaled = overlap_feasibility(fast, 1, 640000 / 8, 2048, {});
    s.require(scaled.feasible, "1000x bandwidth flips the example to feasible");
    // compute-time calibration: the worked example takes 1e-5 s
    const ComputeModel model;
    const double compute = 2.0 * 80000.0 * 2048.0 * 2.0 / model.throughput_Bps;
    s.require_close(compute, 1e-5, 1e-12, "compute model calibration");
    return s.take();
}

SuiteResult suite_bench_roundtrip(const Options& opts) {
    Suite s("bench-roundtrip");
    SweepSpec spec;
    spec.seq_lens = {64, 128};
    spec.clusters = {{1, 2}, {1, 4}};
    spec.heads = 2;
    spec.head_dim = 4;
    spec.dtype = DType::Float64;
    spec.seed = opts.seed;
    const SweepOutcome out = run_sweep(spec);
    s.require(out.records.size() == 8, "2 seq_lens x 2 clusters x 2 algos records");
    s.require(out.all_within_tolerance, "sweep cells within tolerance");
    std::ostringstream csv1;
    write_csv(out, csv1);
    std::istringstream csv_in(csv1.str());
    const SweepOutcome parsed = parse_bench_stream(csv_in, false);
    s.require(parsed.records == out.records, "CSV parse returns the same records");
    std::ostringstream csv2;
    write_csv(parsed, csv2);
    s.require(csv1.str() == csv2.str(), "CSV parse-emit-parse fixpoint");
    std::ostringstream json1;
    write_json(out, json1);
    std::istringstream json_in(json1.str());
    const SweepOutcome jparsed = parse_bench_stream(json_in, true);
    s.require(jparsed.records == out.records, "JSON parse returns the same records");
    s.require(jparsed.meta == out.meta, "JSON meta round trip");
    std::ostringstream report;
    const int flagged = write_report(out, report);
    s.require(report.str().find("speedup") != std::string::npos, "report prints a table");
    s.require(flagged >= 0, "report returns a flag count");
    // determinism of the whole pipeline
    const SweepOutcome again = run_sweep(spec);
    std::ostringstream csv3;
    write_csv(again, csv3);
    s.require(csv3.str() == csv1.str(), "sweep output is byte-identical across runs");
    return s.take();
}

} // namespace

std::vector<SuiteResult> run_all_suites(const Options& opts) {
    std::vector<SuiteResult> results;
    results.push_back(suite_logsumexp(opts));
    results.push_back(suite_lse_associativity(opts));
    results.push_back(suite_dtype_rounding(opts));
    results.push_back(suite_rng(opts));
    results.push_back(suite_attention_equivalence(opts));
    results.push_back(suite_attention_properties(opts));
    results.push_back(suite_gradient_identity(opts));
    results.push_back(suite_gamma(opts));
    results.push_back(suite_energy_parallel(opts));
    results.push_back(suite_moments(opts));
    results.push_back(suite_reduction_schedules(opts));
    results.push_back(suite_decode_exactness(opts));
    results.push_back(suite_counter_formulas(opts));
    results.push_back(suite_safe_softmax(opts));
    results.push_back(suite_overlap(opts));
    results.push_back(suite_bench_roundtrip(opts));
    return results;
}

int run_and_print(const Options& opts, std::ostream& os) {
    os << "verify: seed=" << opts.seed << " grid=" << opts.grid
       << (opts.inject_fault ? " (fault injection active)" : "") << "\n";
    const std::vector<SuiteResult> results = run_all_suites(opts);
    int passed = 0;
    for (const SuiteResult& r : results) {
        os << (r.passed ? "[PASS] " : "[FAIL] ") << r.name << " (" << r.cases << " cases)";
        if (!r.passed) os << ": " << r.detail;
        os << "\n";
        passed += r.passed ? 1 : 0;
    }
    os << "verify: " << passed << "/" << results.size() << " suites passed\n";
    return passed == static_cast<int>(results.size()) ? 0 : 1;
}

} // namespace treedec::verify
