#include "treedec/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace treedec {

double logsumexp(std::span<const double> xs) {
    if (xs.empty()) return kNegInf;
    double m = kNegInf;
    for (double x : xs) {
        if (std::isnan(x)) throw std::domain_error("logsumexp: NaN input");
        m = std::max(m, x);
    }
    if (m == kNegInf) return kNegInf;
    double sum = 0.0;
    for (double x : xs) sum += std::exp(x - m);
    return m + std::log(sum);
}

double lse_combine(double a, double b) {
    if (std::isnan(a) || std::isnan(b)) throw std::domain_error("lse_combine: NaN input");
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

std::uint64_t mix64(std::uint64_t seed, std::uint64_t counter) noexcept {
    std::uint64_t z = seed + (counter + 1) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double uniform01(std::uint64_t seed, std::uint64_t counter) noexcept {
    return static_cast<double>(mix64(seed, counter) >> 11) * 0x1.0p-53;
}

Tensor seeded_random_tensor(std::vector<std::int64_t> shape, std::uint64_t seed,
                            double scale, DType dtype) {
    if (!(scale > 0.0)) throw std::invalid_argument("seeded_random_tensor: scale must be positive");
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    const double half_width = std::sqrt(3.0) * scale;
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i)
        data[i] = (2.0 * uniform01(seed, i) - 1.0) * half_width;
    return Tensor(std::move(shape), std::move(data), dtype);
}

} // namespace treedec
