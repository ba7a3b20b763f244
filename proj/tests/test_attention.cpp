#include <doctest.h>

#include <stdexcept>

#include "treedec/attention.hpp"
#include "treedec/numerics.hpp"

#include <cmath>
#include <vector>

using namespace treedec;

namespace {

// Independent reference: double-precision softmax per row, coded apart from
// the library kernels.
Tensor reference_attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal,
                           double scale) {
    const std::int64_t b = q.extent(0), n_h = q.extent(1), n_q = q.extent(2), d_h = q.extent(3);
    const std::int64_t n = k.extent(2);
    Tensor out = Tensor::zeros({b, n_h, n_q, d_h});
    for (std::int64_t ib = 0; ib < b; ++ib)
        for (std::int64_t ih = 0; ih < n_h; ++ih)
            for (std::int64_t iq = 0; iq < n_q; ++iq) {
                const std::int64_t end = causal ? iq + (n - n_q) + 1 : n;
                std::vector<double> w(static_cast<std::size_t>(end));
                double m = -1e300;
                for (std::int64_t i = 0; i < end; ++i) {
                    double dot = 0.0;
                    for (std::int64_t j = 0; j < d_h; ++j)
                        dot += q.at4(ib, ih, iq, j) * k.at4(ib, ih, i, j);
                    w[static_cast<std::size_t>(i)] = dot * scale;
                    m = std::max(m, dot * scale);
                }
                double denom = 0.0;
                for (auto& x : w) {
                    x = std::exp(x - m);
                    denom += x;
                }
                for (std::int64_t j = 0; j < d_h; ++j) {
                    double acc = 0.0;
                    for (std::int64_t i = 0; i < end; ++i)
                        acc += w[static_cast<std::size_t>(i)] * v.at4(ib, ih, i, j);
                    out.data()[out.offset4(ib, ih, iq, j)] = acc / denom;
                }
            }
    return out;
}

struct Qkv {
    Tensor q, k, v;
};

Qkv make_qkv(std::uint64_t seed, std::int64_t b, std::int64_t n_h, std::int64_t n_q,
             std::int64_t n, std::int64_t d_h, DType dt = DType::Float64) {
    return {seeded_random_tensor({b, n_h, n_q, d_h}, mix64(seed, 1), 1.0, dt),
            seeded_random_tensor({b, n_h, n, d_h}, mix64(seed, 2), 1.0, dt),
            seeded_random_tensor({b, n_h, n, d_h}, mix64(seed, 3), 1.0, dt)};
}

} // namespace

TEST_CASE("single-key attention returns the value row") {
    const Qkv d = make_qkv(1, 1, 2, 1, 1, 4);
    const Tensor out = attention_naive({d.q, d.k, d.v, false, 1.0});
    CHECK(max_abs_diff(out, d.v) == 0.0);
}

TEST_CASE("zero query averages the values") {
    const Qkv d = make_qkv(2, 1, 1, 1, 4, 3);
    const Tensor out = attention_naive({Tensor::zeros(d.q.shape()), d.k, d.v, false, 1.0});
    for (std::int64_t j = 0; j < 3; ++j) {
        double mean = 0.0;
        for (std::int64_t i = 0; i < 4; ++i) mean += d.v.at4(0, 0, i, j);
        CHECK(out.at4(0, 0, 0, j) == doctest::Approx(mean / 4.0).epsilon(1e-15));
    }
}

TEST_CASE("naive attention matches the independent row-wise reference") {
    const Qkv d = make_qkv(7, 1, 2, 16, 16, 4);
    for (const bool causal : {false, true})
        for (const double scale : {1.0, 0.5}) {
            const Tensor got = attention_naive({d.q, d.k, d.v, causal, scale});
            const Tensor want = reference_attention(d.q, d.k, d.v, causal, scale);
            CHECK(max_abs_diff(got, want) <= 1e-12);
        }
}

TEST_CASE("online recurrence equals the naive kernel") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Qkv d = make_qkv(100 + seed, 1, 2, 3, 1 + static_cast<std::int64_t>(seed), 4);
        const AttentionInput in{d.q, d.k, d.v, false, 1.0};
        CHECK(max_abs_diff(attention_online(in), attention_naive(in)) <= 1e-10);
    }
    // a +300 score must not overflow the accumulation
    Qkv d = make_qkv(55, 1, 1, 1, 6, 2);
    d.q.data()[0] = 1.0;
    d.q.data()[1] = 0.0;
    d.k.data()[0] = 300.0;
    d.k.data()[1] = 0.0;
    const AttentionInput in{d.q, d.k, d.v, false, 1.0};
    const Tensor naive = attention_naive(in);
    CHECK(std::isfinite(max_abs(naive)));
    CHECK(max_abs_diff(attention_online(in), naive) <= 1e-10);
}

TEST_CASE("chunk partial over the whole sequence reproduces the kernel") {
    const Qkv d = make_qkv(8, 1, 2, 1, 12, 4);
    const SoftmaxPartial part = attention_chunk_partial(d.q, d.k, d.v, 1.0);
    CHECK(max_abs_diff(part.out, attention_naive({d.q, d.k, d.v, false, 1.0})) == 0.0);
    // lse equals the direct logsumexp of the scores
    for (std::int64_t ih = 0; ih < 2; ++ih) {
        std::vector<double> scores;
        for (std::int64_t i = 0; i < 12; ++i) {
            double dot = 0.0;
            for (std::int64_t j = 0; j < 4; ++j) dot += d.q.at4(0, ih, 0, j) * d.k.at4(0, ih, i, j);
            scores.push_back(dot);
        }
        CHECK(std::fabs(part.lse.at3(0, ih, 0) - logsumexp(scores)) <= 1e-12);
        CHECK(part.lse.at3(0, ih, 0) >= part.row_max.at3(0, ih, 0));
        CHECK(part.lse.at3(0, ih, 0) <= part.row_max.at3(0, ih, 0) + std::log(12.0) + 1e-12);
    }
}

TEST_CASE("empty and single-key chunks") {
    const Qkv d = make_qkv(9, 1, 1, 1, 5, 3);
    const SoftmaxPartial empty =
        attention_chunk_partial(d.q, slice_seq(d.k, 0, 0), slice_seq(d.v, 0, 0), 1.0);
    CHECK(empty.lse[0] == kNegInf);
    CHECK(empty.row_max[0] == kNegInf);
    CHECK(max_abs(empty.out) == 0.0);

    const SoftmaxPartial one =
        attention_chunk_partial(d.q, slice_seq(d.k, 2, 3), slice_seq(d.v, 2, 3), 1.0);
    double dot = 0.0;
    for (std::int64_t j = 0; j < 3; ++j) dot += d.q.at4(0, 0, 0, j) * d.k.at4(0, 0, 2, j);
    CHECK(one.lse[0] == doctest::Approx(dot).epsilon(1e-15));
    CHECK(one.row_max[0] == doctest::Approx(dot).epsilon(1e-15));
    for (std::int64_t j = 0; j < 3; ++j)
        CHECK(one.out.at4(0, 0, 0, j) == doctest::Approx(d.v.at4(0, 0, 2, j)).epsilon(1e-15));
}

TEST_CASE("combining partials is exact and partition invariant") {
    const Qkv d = make_qkv(10, 1, 2, 1, 8, 4);
    const Tensor ref = attention_naive({d.q, d.k, d.v, false, 1.0});

    // single part passes through bitwise
    const SoftmaxPartial whole = attention_chunk_partial(d.q, d.k, d.v, 1.0);
    std::vector<SoftmaxPartial> one{whole};
    CHECK(bitwise_equal(combine_partials(one), whole.out));

    const auto partition = [&](const std::vector<std::int64_t>& sizes) {
        std::vector<SoftmaxPartial> parts;
        std::int64_t begin = 0;
        for (std::int64_t ext : sizes) {
            parts.push_back(attention_chunk_partial(d.q, slice_seq(d.k, begin, begin + ext),
                                                    slice_seq(d.v, begin, begin + ext), 1.0));
            begin += ext;
        }
        return combine_partials(parts);
    };
    CHECK(max_abs_diff(partition({4, 4}), ref) <= 1e-12);
    CHECK(max_abs_diff(partition({1, 7}), ref) <= 1e-12);
    CHECK(max_abs_diff(partition({2, 2, 2, 2}), ref) <= 1e-12);
    CHECK(max_abs_diff(partition({1, 7}), partition({2, 2, 2, 2})) <= 1e-12);

    // pairwise fold against the identity element
    SoftmaxPartial fold = empty_partial(1, 2, 1, 4, DType::Float64);
    std::vector<SoftmaxPartial> parts;
    std::int64_t begin = 0;
    for (std::int64_t ext : {3LL, 2LL, 3LL}) {
        parts.push_back(attention_chunk_partial(d.q, slice_seq(d.k, begin, begin + ext),
                                                slice_seq(d.v, begin, begin + ext), 1.0));
        begin += ext;
    }
    for (const auto& part : parts) fold = combine_pair(fold, part);
    CHECK(max_abs_diff(fold.out, ref) <= 1e-12);
    // identity absorbs exactly on the right as well
    const SoftmaxPartial right =
        combine_pair(whole, empty_partial(1, 2, 1, 4, DType::Float64));
    CHECK(bitwise_equal(right.out, whole.out));
    CHECK(bitwise_equal(right.lse, whole.lse));

    std::vector<SoftmaxPartial> only_empty{empty_partial(1, 2, 1, 4, DType::Float64)};
    CHECK_THROWS_AS((void)combine_partials(only_empty), std::invalid_argument);
}

TEST_CASE("three-way equivalence over random cases") {
    int cases = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const std::int64_t n = 1 + static_cast<std::int64_t>(mix64(seed, 0) % 24);
        const std::int64_t d_h = 1 + static_cast<std::int64_t>(mix64(seed, 1) % 6);
        const std::int64_t n_h = 1 + static_cast<std::int64_t>(mix64(seed, 2) % 3);
        const Qkv d = make_qkv(1000 + seed, 1, n_h, 1, n, d_h);
        const AttentionInput in{d.q, d.k, d.v, false, 1.0};
        const Tensor ref = attention_naive(in);
        CHECK(max_abs_diff(attention_online(in), ref) <= 1e-10);
        const int p = 1 + static_cast<int>(mix64(seed, 3) % static_cast<std::uint64_t>(n));
        std::vector<SoftmaxPartial> parts;
        std::int64_t begin = 0;
        for (std::int64_t ext : chunk_extents(n, p)) {
            parts.push_back(attention_chunk_partial(d.q, slice_seq(d.k, begin, begin + ext),
                                                    slice_seq(d.v, begin, begin + ext), 1.0));
            begin += ext;
        }
        CHECK(max_abs_diff(combine_partials(parts), ref) <= 1e-10);
        ++cases;
    }
    CHECK(cases == 200);
}

TEST_CASE("float32 three-way equivalence at relative tolerance") {
    const Qkv d = make_qkv(77, 1, 2, 1, 32, 8, DType::Float32);
    const AttentionInput in{d.q, d.k, d.v, false, 1.0};
    const Tensor ref = attention_naive(in);
    const double tol = 1e-4 * max_abs(ref);
    CHECK(max_abs_diff(attention_online(in), ref) <= tol);
    std::vector<SoftmaxPartial> parts;
    std::int64_t begin = 0;
    for (std::int64_t ext : chunk_extents(32, 5)) {
        parts.push_back(attention_chunk_partial(d.q, slice_seq(d.k, begin, begin + ext),
                                                slice_seq(d.v, begin, begin + ext), 1.0));
        begin += ext;
    }
    CHECK(max_abs_diff(combine_partials(parts), ref) <= tol);
}

TEST_CASE("outputs stay inside the attended value range") {
    const Qkv d = make_qkv(11, 1, 2, 6, 6, 3);
    const Tensor out = attention_naive({d.q, d.k, d.v, true, 1.0});
    for (std::int64_t ih = 0; ih < 2; ++ih)
        for (std::int64_t iq = 0; iq < 6; ++iq)
            for (std::int64_t j = 0; j < 3; ++j) {
                double lo = 1e300, hi = -1e300;
                for (std::int64_t i = 0; i <= iq; ++i) {
                    lo = std::min(lo, d.v.at4(0, ih, i, j));
                    hi = std::max(hi, d.v.at4(0, ih, i, j));
                }
                CHECK(out.at4(0, ih, iq, j) >= lo - 1e-12);
                CHECK(out.at4(0, ih, iq, j) <= hi + 1e-12);
            }
}

TEST_CASE("causal rows ignore future keys and values") {
    const Qkv d = make_qkv(12, 1, 1, 5, 5, 3);
    const Tensor base = attention_naive({d.q, d.k, d.v, true, 1.0});
    Tensor k2 = d.k, v2 = d.v;
    for (std::int64_t i = 3; i < 5; ++i)
        for (std::int64_t j = 0; j < 3; ++j) {
            k2.data()[k2.offset4(0, 0, i, j)] = 1e6;
            v2.data()[v2.offset4(0, 0, i, j)] = -1e6;
        }
    const Tensor poked = attention_naive({d.q, k2, v2, true, 1.0});
    for (std::int64_t iq = 0; iq <= 2; ++iq)
        for (std::int64_t j = 0; j < 3; ++j)
            CHECK(base.at4(0, 0, iq, j) == poked.at4(0, 0, iq, j));
}

TEST_CASE("shape and dtype mismatches are rejected") {
    const Qkv d = make_qkv(13, 1, 2, 1, 6, 4);
    const Tensor bad_k = seeded_random_tensor({1, 2, 6, 5}, 1, 1.0);
    CHECK_THROWS_AS((void)attention_naive({d.q, bad_k, d.v, false, 1.0}), std::invalid_argument);
    const Tensor f32_v = seeded_random_tensor({1, 2, 6, 4}, 1, 1.0, DType::Float32);
    CHECK_THROWS_AS((void)attention_naive({d.q, d.k, f32_v, false, 1.0}), std::invalid_argument);
    CHECK_THROWS_AS((void)attention_chunk_partial(d.q, bad_k, d.v, 1.0), std::invalid_argument);
}

TEST_CASE("chunk extents follow the remainder rule") {
    CHECK(chunk_extents(8, 4) == std::vector<std::int64_t>({2, 2, 2, 2}));
    CHECK(chunk_extents(10, 4) == std::vector<std::int64_t>({3, 3, 2, 2}));
    CHECK(chunk_extents(3, 5) == std::vector<std::int64_t>({1, 1, 1, 0, 0}));
    CHECK_THROWS_AS((void)chunk_extents(4, 0), std::invalid_argument);
}
