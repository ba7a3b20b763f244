#pragma once

#include "treedec/tensor.hpp"

#include <cstdint>
#include <limits>
#include <span>

namespace treedec {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log(sum(exp(xs))) computed with a max shift: never overflows for finite
// inputs. Empty input yields -inf (the reduction identity). -inf elements
// are allowed and contribute nothing; NaN raises std::domain_error.
double logsumexp(std::span<const double> xs);

// Combine the logsumexps of two disjoint index sets into the logsumexp of
// their union. -inf is the identity element and is returned/absorbed
// exactly. NaN raises std::domain_error. Associative and commutative up to
// rounding.
double lse_combine(double a, double b);

// SplitMix64 applied to a (seed, counter) pair; both the generator and the
// mapping below are fixed so test vectors can be reproduced from the seed
// alone in any language.
std::uint64_t mix64(std::uint64_t seed, std::uint64_t counter) noexcept;

// Uniform double in [0, 1) with 53 random bits: (mix64(seed, i) >> 11) * 2^-53.
double uniform01(std::uint64_t seed, std::uint64_t counter) noexcept;

// Deterministic i.i.d. tensor. Element i is
//     (2 * uniform01(seed, i) - 1) * sqrt(3) * scale,
// uniform on [-sqrt(3)*scale, sqrt(3)*scale): zero mean, standard deviation
// `scale`. Same (shape, seed, scale) gives bitwise-identical data on any
// IEEE-754 platform. scale must be positive; zero-extent shapes give an
// empty tensor.
Tensor seeded_random_tensor(std::vector<std::int64_t> shape, std::uint64_t seed,
                            double scale, DType dtype = DType::Float64);

} // namespace treedec
