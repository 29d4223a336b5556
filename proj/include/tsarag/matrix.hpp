#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "tsarag/error.hpp"

namespace tsarag {

/// Dense row-major matrix of doubles. Rows are contiguous, so a row can be
/// handed out as a span and a whole matrix flattened without copying.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        detail::require(data_.size() == rows_ * cols_, ErrorKind::ShapeMismatch,
                        "matrix data size does not match rows*cols");
    }

    static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
        if (rows.empty()) {
            return {};
        }
        Matrix out(rows.size(), rows.front().size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            detail::require(rows[r].size() == out.cols_, ErrorKind::ShapeMismatch,
                            "ragged rows in matrix literal (row " + std::to_string(r) + ")");
            std::copy(rows[r].begin(), rows[r].end(), out.row(r).begin());
        }
        return out;
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        std::vector<std::vector<double>> tmp;
        tmp.reserve(rows.size());
        for (const auto& r : rows) {
            tmp.emplace_back(r);
        }
        return from_rows(tmp);
    }

    static Matrix row_vector(std::span<const double> values) {
        return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> flat() noexcept { return data_; }
    std::span<const double> flat() const noexcept { return data_; }

    void fill(double value) { std::fill(data_.begin(), data_.end(), value); }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_{0};
    std::size_t cols_{0};
    std::vector<double> data_;
};

inline Matrix transpose(const Matrix& m) {
    Matrix out(m.cols(), m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            out(c, r) = m(r, c);
        }
    }
    return out;
}

/// Columns [begin, end) of m.
inline Matrix slice_columns(const Matrix& m, std::size_t begin, std::size_t end) {
    detail::require(begin <= end && end <= m.cols(), ErrorKind::InvalidArgument, "column slice out of range");
    Matrix out(m.rows(), end - begin);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = begin; c < end; ++c) {
            out(r, c - begin) = m(r, c);
        }
    }
    return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    // four partial sums let the compiler vectorize without reassociating
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= a.size(); i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < a.size(); ++i) {
        s0 += a[i] * b[i];
    }
    return (s0 + s1) + (s2 + s3);
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// A·x
inline std::vector<double> matvec(const Matrix& a, std::span<const double> x) {
    if (a.cols() != x.size()) {
        detail::fail(ErrorKind::ShapeMismatch, "matvec: expected input of length " + std::to_string(a.cols()) +
                                                   ", got " + std::to_string(x.size()));
    }
    std::vector<double> y(a.rows(), 0.0);
    for (std::size_t r = 0; r < a.rows(); ++r) {
        y[r] = dot(a.row(r), x);
    }
    return y;
}

/// Aᵀ·x
inline std::vector<double> matvec_transposed(const Matrix& a, std::span<const double> x) {
    detail::require(a.rows() == x.size(), ErrorKind::ShapeMismatch, "matvec_transposed: length mismatch");
    std::vector<double> y(a.cols(), 0.0);
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const double xr = x[r];
        if (xr == 0.0) {
            continue;
        }
        const auto row = a.row(r);
        for (std::size_t c = 0; c < a.cols(); ++c) {
            y[c] += row[c] * xr;
        }
    }
    return y;
}

/// A += scale · u vᵀ
inline void add_outer(Matrix& a, std::span<const double> u, std::span<const double> v, double scale = 1.0) {
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const double ur = scale * u[r];
        if (ur == 0.0) {
            continue;
        }
        auto row = a.row(r);
        for (std::size_t c = 0; c < a.cols(); ++c) {
            row[c] += ur * v[c];
        }
    }
}

inline bool all_finite(std::span<const double> values) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

}  // namespace tsarag
