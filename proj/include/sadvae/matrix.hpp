#pragma once

#include "sadvae/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace sadvae {

/// Dense row-major matrix. One row per sample throughout the library.
template <typename T>
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T fill = T{}) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<T> data) : rows_(rows), cols_(cols), data_(std::move(data))
    {
        if (data_.size() != rows_ * cols_) {
            throw ShapeError("matrix data length " + std::to_string(data_.size()) + " != " + std::to_string(rows_) +
                             " x " + std::to_string(cols_));
        }
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    bool all_finite() const
    {
        for (const T v : data_) {
            if (!std::isfinite(v)) {
                return false;
            }
        }
        return true;
    }

    /// Rows picked by index, in the given order.
    Matrix gather(std::span<const std::size_t> indices) const
    {
        Matrix out(indices.size(), cols_);
        for (std::size_t i = 0; i < indices.size(); ++i) {
            const auto src = row(indices[i]);
            std::copy(src.begin(), src.end(), out.row(i).begin());
        }
        return out;
    }

    /// Columns [begin, begin + count) as a new matrix.
    Matrix columns(std::size_t begin, std::size_t count) const
    {
        Matrix out(rows_, count);
        for (std::size_t r = 0; r < rows_; ++r) {
            for (std::size_t c = 0; c < count; ++c) {
                out(r, c) = (*this)(r, begin + c);
            }
        }
        return out;
    }

    template <typename U>
    Matrix<U> cast() const
    {
        Matrix<U> out(rows_, cols_);
        for (std::size_t i = 0; i < data_.size(); ++i) {
            out.storage()[i] = static_cast<U>(data_[i]);
        }
        return out;
    }

    friend bool operator==(const Matrix& a, const Matrix& b)
    {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

/// Horizontal concatenation [a | b].
template <typename T>
Matrix<T> hconcat(const Matrix<T>& a, const Matrix<T>& b)
{
    if (a.rows() != b.rows()) {
        throw ShapeError("hconcat: row counts differ");
    }
    Matrix<T> out(a.rows(), a.cols() + b.cols());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        auto dst = out.row(r);
        const auto ra = a.row(r);
        const auto rb = b.row(r);
        std::copy(ra.begin(), ra.end(), dst.begin());
        std::copy(rb.begin(), rb.end(), dst.begin() + static_cast<std::ptrdiff_t>(a.cols()));
    }
    return out;
}

} // namespace sadvae
