#include "anncache/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "anncache/errors.hpp"

namespace anncache {

Matrix::Matrix(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                         " does not equal rows*cols = " + std::to_string(rows_ * cols_));
    }
}

void Matrix::append_rows(const Matrix& other) {
    if (other.empty()) {
        return;
    }
    if (rows_ == 0 && cols_ == 0) {
        cols_ = other.cols_;
    }
    if (other.cols_ != cols_) {
        throw ShapeError("cannot append rows with " + std::to_string(other.cols_) +
                         " columns to matrix with " + std::to_string(cols_));
    }
    data_.insert(data_.end(), other.data_.begin(), other.data_.end());
    rows_ += other.rows_;
}

bool Matrix::all_finite() const {
    for (float v : data_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

void Matrix::require_finite(const char* context) const {
    if (!all_finite()) {
        throw NumericError(std::string(context) + ": matrix contains non-finite values");
    }
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_transposed: inner dimensions differ (" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.cols()) + ")");
    }
    const std::size_t m = a.rows();
    const std::size_t n = b.rows();
    const std::size_t d = a.cols();
    Matrix out(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        const float* arow = a.data() + i * d;
        for (std::size_t j = 0; j < n; ++j) {
            const float* brow = b.data() + j * d;
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                acc += static_cast<double>(arow[c]) * static_cast<double>(brow[c]);
            }
            out.at(i, j) = static_cast<float>(acc);
        }
    }
    return out;
}

std::vector<float> stable_softmax_row(std::span<const float> logits) {
    if (logits.empty()) {
        throw ShapeError("stable_softmax_row: empty input");
    }
    double max_logit = -std::numeric_limits<double>::infinity();
    for (float v : logits) {
        if (!std::isfinite(v)) {
            throw NumericError("stable_softmax_row: non-finite logit");
        }
        max_logit = std::max(max_logit, static_cast<double>(v));
    }
    std::vector<double> shifted(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        shifted[i] = std::exp(static_cast<double>(logits[i]) - max_logit);
        sum += shifted[i];
    }
    std::vector<float> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = static_cast<float>(shifted[i] / sum);
    }
    return out;
}

double dot_f64(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
    return acc;
}

double norm_f64(std::span<const float> v) {
    return std::sqrt(dot_f64(v, v));
}

double cosine_f64(std::span<const float> a, std::span<const float> b) {
    const double na = norm_f64(a);
    const double nb = norm_f64(b);
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    return dot_f64(a, b) / (na * nb);
}

}  // namespace anncache
