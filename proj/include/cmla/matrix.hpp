#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace cmla {

/// Dense row-major matrix of doubles. Rows are exposed as spans so the SIMD
/// kernels can work on them without copies.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
        : rows_(rows), cols_(cols), data_(std::move(values)) {
        assert(data_.size() == rows_ * cols_);
    }
    Matrix(std::initializer_list<std::initializer_list<double>> init);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    void fill(double v) { data_.assign(data_.size(), v); }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline Matrix::Matrix(std::initializer_list<std::initializer_list<double>> init)
    : rows_(init.size()), cols_(init.size() ? init.begin()->size() : 0) {
    data_.reserve(rows_ * cols_);
    for (const auto& r : init) {
        assert(r.size() == cols_);
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

/// Rows of `m` selected by `idx`, in order.
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx);

/// One-hot encoding of hard labels into an N x num_classes matrix.
Matrix one_hot(std::span<const std::size_t> labels, std::size_t num_classes);

/// Per-row argmax with ties going to the lowest column.
std::vector<std::size_t> row_argmax(const Matrix& m);

/// Row-wise softmax of logits.
Matrix softmax_rows(const Matrix& logits);

}  // namespace cmla
