#pragma once

#include <string_view>

namespace treedec {

// Storage formats for tensor data. Values are always held in double; a
// dtype acts as a rounding grid applied whenever an operation materializes
// values (see Tensor). Float64 rounding is the identity. Bf16 keeps an
// 8-bit significand with the binary32 exponent range, rounding to nearest
// with ties to even, so low-precision behaviour is reproduced
// deterministically on any IEEE-754 host.
enum class DType { Float64, Float32, Bf16 };

// Nearest representable value of `dtype`. Idempotent, monotone, preserves
// signed zero and infinities. NaN passes through unchanged.
double round_to_dtype(double x, DType dtype) noexcept;

// Wire size of one element: 8, 4 or 2 bytes.
int dtype_bytes(DType dtype) noexcept;

// Rounding grid for per-row softmax statistics (max, lse, denominators):
// Bf16 tensors keep fp32 statistics, matching fused-kernel practice; other
// dtypes keep their own grid.
DType stats_dtype(DType data_dtype) noexcept;

const char* dtype_name(DType dtype) noexcept;

// Accepts "f64", "f32", "bf16". Returns false for anything else.
bool parse_dtype(std::string_view name, DType& out) noexcept;

} // namespace treedec
