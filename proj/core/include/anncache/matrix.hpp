#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace anncache {

/// Row-major 2-D array of 32-bit floats. Carries Q/K/V blocks everywhere.
///
/// Storage is f32; every reduction over it (dot products, softmax sums)
/// accumulates in f64.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f);
    Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return rows_ == 0 || cols_ == 0; }

    float& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    float at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<const float> values() const { return data_; }
    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    /// Appends the rows of `other` (same column count) to this matrix.
    void append_rows(const Matrix& other);

    /// True iff every entry is finite (no NaN/Inf).
    bool all_finite() const;

    /// Throws NumericError if any entry is non-finite. `context` names the
    /// offending tensor in the message.
    void require_finite(const char* context) const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

/// out[i][j] = sum_c a[i][c] * b[j][c], accumulated in f64, stored as f32.
/// This is the Q·K^T product when rows are vectors; no other GEMM variant
/// exists here.
///
/// Throws ShapeError unless a.cols == b.cols.
Matrix matmul_transposed(const Matrix& a, const Matrix& b);

/// Numerically stable softmax of one row of logits: shifts by the maximum
/// before exponentiating, accumulates in f64. Output sums to 1 within 1e-6
/// and preserves the input ordering.
///
/// Throws ShapeError on empty input, NumericError on non-finite input.
std::vector<float> stable_softmax_row(std::span<const float> logits);

/// Dot product of two equal-length spans, accumulated in f64.
double dot_f64(std::span<const float> a, std::span<const float> b);

/// Euclidean norm, accumulated in f64.
double norm_f64(std::span<const float> v);

/// Cosine similarity in f64. Returns 0 when either vector has zero norm
/// (callers that care must check norms themselves).
double cosine_f64(std::span<const float> a, std::span<const float> b);

}  // namespace anncache
