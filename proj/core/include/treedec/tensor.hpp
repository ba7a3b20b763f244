#pragma once

#include "treedec/dtype.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace treedec {

// Dense row-major numeric array. Data is stored at full (double) precision;
// the dtype is applied as a rounding grid on construction and by every
// operation that materializes values into a tensor, which emulates
// low-precision arithmetic without hardware support.
//
// Shape conventions used throughout the library:
//   queries        [batch, heads, query_rows, head_dim]
//   keys/values    [batch, heads, seq_len,    head_dim]
//   per-row stats  [batch, heads, query_rows]
class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<std::int64_t> shape, std::vector<double> data,
           DType dtype = DType::Float64);

    static Tensor zeros(std::vector<std::int64_t> shape, DType dtype = DType::Float64);
    static Tensor full(std::vector<std::int64_t> shape, double value,
                       DType dtype = DType::Float64);

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    DType dtype() const { return dtype_; }
    bool empty() const { return data_.empty(); }

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }

    double operator[](std::int64_t flat) const { return data_[static_cast<std::size_t>(flat)]; }

    // Stores through the dtype grid.
    void store(std::int64_t flat, double value);

    // Flat offsets for the rank-4 / rank-3 layouts above. No bounds checks.
    std::int64_t offset4(std::int64_t b, std::int64_t h, std::int64_t i, std::int64_t j) const {
        return ((b * shape_[1] + h) * shape_[2] + i) * shape_[3] + j;
    }
    std::int64_t offset3(std::int64_t b, std::int64_t h, std::int64_t i) const {
        return (b * shape_[1] + h) * shape_[2] + i;
    }
    double at4(std::int64_t b, std::int64_t h, std::int64_t i, std::int64_t j) const {
        return data_[static_cast<std::size_t>(offset4(b, h, i, j))];
    }
    double at3(std::int64_t b, std::int64_t h, std::int64_t i) const {
        return data_[static_cast<std::size_t>(offset3(b, h, i))];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
    std::vector<std::int64_t> shape_;
    std::vector<double> data_;
    DType dtype_ = DType::Float64;
};

std::int64_t shape_numel(std::span<const std::int64_t> shape);

// Largest absolute element; 0 for empty tensors.
double max_abs(const Tensor& t);
// Largest absolute elementwise difference. Shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);
// Bitwise data equality (shape and every element, by bit pattern).
bool bitwise_equal(const Tensor& a, const Tensor& b);

// Slice rows [begin, end) of the sequence axis (axis 2) of a rank-4 tensor.
Tensor slice_seq(const Tensor& t, std::int64_t begin, std::int64_t end);
// Concatenate rank-4 tensors along the sequence axis.
Tensor concat_seq(std::span<const Tensor> parts);

} // namespace treedec
