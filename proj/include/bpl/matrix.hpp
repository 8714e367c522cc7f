#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bpl/errors.hpp"

namespace bpl {

// Dense real matrix, 64-bit floats, row-major. Finiteness is enforced at the
// ingestion boundaries (from_data, file loaders) rather than on every
// intermediate: all public operations preserve finiteness of finite inputs.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;

    Matrix(int r, int c) : rows(r), cols(c) {
        if (r <= 0 || c <= 0) throw DimensionError("matrix dimensions must be positive");
        data.assign(static_cast<std::size_t>(r) * c, 0.0);
    }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }

    /// Validating constructor: length and finiteness are checked.
    static Matrix from_data(int r, int c, std::vector<double> values) {
        Matrix m(r, c);
        if (values.size() != m.data.size())
            throw DimensionError("matrix data length does not match rows*cols");
        m.data = std::move(values);
        m.require_finite("matrix");
        return m;
    }

    bool empty() const { return rows == 0; }

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    const double& at(int r, int c) const {
        return data[static_cast<std::size_t>(r) * cols + c];
    }

    void require_finite(const std::string& what) const {
        for (double v : data)
            if (!std::isfinite(v)) throw ValidationError(what + " contains a non-finite entry");
    }
};

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols, a.rows);
    for (int r = 0; r < a.rows; ++r)
        for (int c = 0; c < a.cols; ++c) t.at(c, r) = a.at(r, c);
    return t;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw DimensionError("matmul: inner dimensions differ");
    Matrix out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        double* orow = &out.at(i, 0);
        for (int k = 0; k < a.cols; ++k) {
            double aik = a.at(i, k);
            if (aik == 0.0) continue;
            const double* brow = &b.at(k, 0);
            for (int j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

/// a*X Y^T for column-sample matrices X (d x N), Y (k x N).
inline Matrix cross_product(const Matrix& x, const Matrix& y, double scale = 1.0) {
    if (x.cols != y.cols) throw DimensionError("cross_product: sample counts differ");
    Matrix out(x.rows, y.rows);
    for (int n = 0; n < x.cols; ++n)
        for (int i = 0; i < x.rows; ++i) {
            double xv = scale * x.at(i, n);
            for (int j = 0; j < y.rows; ++j) out.at(i, j) += xv * y.at(j, n);
        }
    return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows || a.cols != b.cols) throw DimensionError("add: shapes differ");
    Matrix out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows || a.cols != b.cols) throw DimensionError("sub: shapes differ");
    Matrix out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
    return out;
}

inline Matrix scale(const Matrix& a, double s) {
    Matrix out = a;
    for (double& v : out.data) v *= s;
    return out;
}

/// a += s*b, in place.
inline void axpy(Matrix& a, double s, const Matrix& b) {
    if (a.rows != b.rows || a.cols != b.cols) throw DimensionError("axpy: shapes differ");
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += s * b.data[i];
}

inline void add_diagonal(Matrix& a, double s) {
    if (a.rows != a.cols) throw DimensionError("add_diagonal: matrix not square");
    for (int i = 0; i < a.rows; ++i) a.at(i, i) += s;
}

inline double frobenius_norm(const Matrix& a) {
    double s = 0.0;
    for (double v : a.data) s += v * v;
    return std::sqrt(s);
}

inline double max_abs(const Matrix& a) {
    double m = 0.0;
    for (double v : a.data) m = std::max(m, std::fabs(v));
    return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows || a.cols != b.cols) throw DimensionError("max_abs_diff: shapes differ");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

/// Sum_i w_i x_i x_i^T over the columns of X (d x N); w_i = 1 when absent.
/// Each (i, j) entry with i <= j is accumulated once in ascending sample
/// order and mirrored, so the result is symmetric to the last bit.
inline Matrix accumulate_gram(const Matrix& x, const std::vector<double>* weights = nullptr) {
    if (weights != nullptr) {
        if (static_cast<int>(weights->size()) != x.cols)
            throw DimensionError("accumulate_gram: weight count differs from sample count");
        for (double w : *weights)
            if (!std::isfinite(w)) throw ValidationError("accumulate_gram: non-finite weight");
    }
    Matrix g(x.rows, x.rows);
    for (int i = 0; i < x.rows; ++i)
        for (int j = i; j < x.rows; ++j) {
            double s = 0.0;
            for (int n = 0; n < x.cols; ++n) {
                double term = x.at(i, n) * x.at(j, n);
                s += (weights != nullptr) ? (*weights)[n] * term : term;
            }
            g.at(i, j) = s;
            g.at(j, i) = s;
        }
    return g;
}

/// Gaussian elimination with partial pivoting on [a | rhs]; returns the
/// solution columns, or nullopt when a pivot collapses (singular system).
inline std::optional<Matrix> gauss_solve(Matrix a, Matrix rhs) {
    if (a.rows != a.cols) throw DimensionError("gauss_solve: matrix not square");
    if (rhs.rows != a.rows) throw DimensionError("gauss_solve: rhs rows differ");
    const int n = a.rows;
    const double tiny = 1e-13 * std::max(1e-300, max_abs(a));
    for (int col = 0; col < n; ++col) {
        int piv = col;
        for (int r = col + 1; r < n; ++r)
            if (std::fabs(a.at(r, col)) > std::fabs(a.at(piv, col))) piv = r;
        if (std::fabs(a.at(piv, col)) <= tiny) return std::nullopt;
        if (piv != col) {
            for (int c = 0; c < n; ++c) std::swap(a.at(piv, c), a.at(col, c));
            for (int c = 0; c < rhs.cols; ++c) std::swap(rhs.at(piv, c), rhs.at(col, c));
        }
        double inv = 1.0 / a.at(col, col);
        for (int r = col + 1; r < n; ++r) {
            double f = a.at(r, col) * inv;
            if (f == 0.0) continue;
            a.at(r, col) = 0.0;
            for (int c = col + 1; c < n; ++c) a.at(r, c) -= f * a.at(col, c);
            for (int c = 0; c < rhs.cols; ++c) rhs.at(r, c) -= f * rhs.at(col, c);
        }
    }
    for (int col = n - 1; col >= 0; --col) {
        double inv = 1.0 / a.at(col, col);
        for (int c = 0; c < rhs.cols; ++c) {
            double s = rhs.at(col, c);
            for (int k = col + 1; k < n; ++k) s -= a.at(col, k) * rhs.at(k, c);
            rhs.at(col, c) = s * inv;
        }
    }
    return rhs;
}

}  // namespace bpl
