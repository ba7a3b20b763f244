#include "treedec/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace treedec {

std::int64_t shape_numel(std::span<const std::int64_t> shape) {
    std::int64_t n = 1;
    for (std::int64_t e : shape) {
        if (e < 0) throw std::invalid_argument("Tensor: negative extent");
        n *= e;
    }
    return n;
}

Tensor::Tensor(std::vector<std::int64_t> shape, std::vector<double> data, DType dtype)
    : shape_(std::move(shape)), data_(std::move(data)), dtype_(dtype) {
    if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size()))
        throw std::invalid_argument("Tensor: shape does not match data length");
    if (dtype_ != DType::Float64)
        for (double& x : data_) x = round_to_dtype(x, dtype_);
}

Tensor Tensor::zeros(std::vector<std::int64_t> shape, DType dtype) {
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), dtype);
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double value, DType dtype) {
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    return Tensor(std::move(shape), std::vector<double>(n, value), dtype);
}

void Tensor::store(std::int64_t flat, double value) {
    data_[static_cast<std::size_t>(flat)] = round_to_dtype(value, dtype_);
}

double max_abs(const Tensor& t) {
    double m = 0.0;
    for (double x : t.data()) m = std::max(m, std::fabs(x));
    return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    return std::memcmp(a.data().data(), b.data().data(),
                       a.data().size_bytes()) == 0;
}

Tensor slice_seq(const Tensor& t, std::int64_t begin, std::int64_t end) {
    if (t.rank() != 4) throw std::invalid_argument("slice_seq: rank-4 tensor required");
    const std::int64_t n = t.extent(2);
    if (begin < 0 || end < begin || end > n)
        throw std::invalid_argument("slice_seq: range out of bounds");
    const std::int64_t b = t.extent(0), h = t.extent(1), d = t.extent(3);
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(b * h * (end - begin) * d));
    for (std::int64_t ib = 0; ib < b; ++ib)
        for (std::int64_t ih = 0; ih < h; ++ih)
            for (std::int64_t i = begin; i < end; ++i)
                for (std::int64_t j = 0; j < d; ++j)
                    out.push_back(t.at4(ib, ih, i, j));
    return Tensor({b, h, end - begin, d}, std::move(out), t.dtype());
}

Tensor concat_seq(std::span<const Tensor> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_seq: no parts");
    const Tensor& first = parts.front();
    if (first.rank() != 4) throw std::invalid_argument("concat_seq: rank-4 tensors required");
    const std::int64_t b = first.extent(0), h = first.extent(1), d = first.extent(3);
    std::int64_t total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != 4 || p.extent(0) != b || p.extent(1) != h || p.extent(3) != d)
            throw std::invalid_argument("concat_seq: incompatible part shape");
        total += p.extent(2);
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(b * h * total * d));
    for (std::int64_t ib = 0; ib < b; ++ib)
        for (std::int64_t ih = 0; ih < h; ++ih)
            for (const Tensor& p : parts)
                for (std::int64_t i = 0; i < p.extent(2); ++i)
                    for (std::int64_t j = 0; j < d; ++j)
                        out.push_back(p.at4(ib, ih, i, j));
    return Tensor({b, h, total, d}, std::move(out), first.dtype());
}

} // namespace treedec
