#include "treedec/dtype.hpp"

#include <cmath>
#include <limits>

namespace treedec {
namespace {

// Nearest value with an 8-bit significand and the binary32 exponent range.
// Quantizing at a power-of-two LSB keeps the scaled value small enough for
// nearbyint to be exact, so ties resolve to even under the default rounding
// mode.
double round_bf16(double x) noexcept {
    if (x == 0.0 || !std::isfinite(x)) return x;
    int exp = 0;
    std::frexp(x, &exp); // |x| in [2^(exp-1), 2^exp)
    const int lsb = std::max(exp - 8, -133); // 2^-133: subnormal quantum
    const double y = std::ldexp(std::nearbyint(std::ldexp(x, -lsb)), lsb);
    if (std::fabs(y) >= 0x1p128)
        return std::copysign(std::numeric_limits<double>::infinity(), x);
    return y;
}

double round_f32(double x) noexcept {
    if (!std::isfinite(x)) return x;
    // round-to-nearest overflow threshold of binary32: (2 - 2^-24) * 2^127
    constexpr double kOverflow = 0x1.ffffffp127;
    if (std::fabs(x) >= kOverflow)
        return std::copysign(std::numeric_limits<double>::infinity(), x);
    return static_cast<double>(static_cast<float>(x));
}

} // namespace

double round_to_dtype(double x, DType dtype) noexcept {
    switch (dtype) {
    case DType::Float64: return x;
    case DType::Float32: return round_f32(x);
    case DType::Bf16: return round_bf16(x);
    }
    return x;
}

int dtype_bytes(DType dtype) noexcept {
    switch (dtype) {
    case DType::Float64: return 8;
    case DType::Float32: return 4;
    case DType::Bf16: return 2;
    }
    return 8;
}

DType stats_dtype(DType data_dtype) noexcept {
    return data_dtype == DType::Bf16 ? DType::Float32 : data_dtype;
}

const char* dtype_name(DType dtype) noexcept {
    switch (dtype) {
    case DType::Float64: return "f64";
    case DType::Float32: return "f32";
    case DType::Bf16: return "bf16";
    }
    return "f64";
}

bool parse_dtype(std::string_view name, DType& out) noexcept {
    if (name == "f64") { out = DType::Float64; return true; }
    if (name == "f32") { out = DType::Float32; return true; }
    if (name == "bf16") { out = DType::Bf16; return true; }
    return false;
}

} // namespace treedec
