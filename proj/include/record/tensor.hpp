#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "record/error.hpp"

namespace record {

/// Dense row-major matrix of doubles. Value type.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) throw ShapeMismatch("matrix data size does not match shape");
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::span<double> flat() noexcept { return data_; }
    std::span<const double> flat() const noexcept { return data_; }

    std::vector<double> column(std::size_t c) const {
        std::vector<double> out(rows_);
        for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
        return out;
    }
    void set_column(std::size_t c, std::span<const double> values) {
        if (values.size() != rows_) throw ShapeMismatch("column length does not match rows");
        for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = values[r];
    }

    bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// C = scale * A * B^T   (A: m x d, B: n x d, C: m x n)
Matrix matmul_transposed(const Matrix& a, const Matrix& b, double scale = 1.0);

/// C = A * B   (A: m x k, B: k x n)
Matrix matmul(const Matrix& a, const Matrix& b);

/// Numerically stable softmax over each row, in place.
void softmax_rows(Matrix& m);

bool all_finite(std::span<const double> values) noexcept;

}  // namespace record
