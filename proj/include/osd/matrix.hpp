#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "osd/error.hpp"

namespace osd {

using Vector = std::vector<double>;

/// Dense row-major real matrix.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::initializer_list<std::initializer_list<double>> init) {
        rows_ = init.size();
        cols_ = rows_ ? init.begin()->size() : 0;
        data_.reserve(rows_ * cols_);
        for (const auto& row : init) {
            if (row.size() != cols_) throw Error(ErrorKind::InvalidInput, "ragged matrix literal");
            data_.insert(data_.end(), row.begin(), row.end());
        }
    }

    static Matrix identity(std::size_t p) {
        Matrix m(p, p);
        for (std::size_t i = 0; i < p; ++i) m(i, i) = 1.0;
        return m;
    }
    static Matrix diagonal(std::span<const double> d) {
        Matrix m(d.size(), d.size());
        for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
        return m;
    }
    static Matrix column(std::span<const double> v) {
        Matrix m(v.size(), 1);
        for (std::size_t i = 0; i < v.size(); ++i) m(i, 0) = v[i];
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) {
        assert(i < rows_ && j < cols_);
        return data_[i * cols_ + j];
    }
    double operator()(std::size_t i, std::size_t j) const {
        assert(i < rows_ && j < cols_);
        return data_[i * cols_ + j];
    }

    std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
    Vector col(std::size_t j) const {
        Vector v(rows_);
        for (std::size_t i = 0; i < rows_; ++i) v[i] = (*this)(i, j);
        return v;
    }

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }

    Matrix transpose() const {
        Matrix t(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    Matrix& operator+=(const Matrix& o) {
        check_same(o);
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
        return *this;
    }
    Matrix& operator-=(const Matrix& o) {
        check_same(o);
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
        return *this;
    }
    Matrix& operator*=(double s) {
        for (double& x : data_) x *= s;
        return *this;
    }

    double frobenius() const {
        double s = 0.0;
        for (double x : data_) s += x * x;
        return std::sqrt(s);
    }
    double max_abs() const {
        double m = 0.0;
        for (double x : data_) m = std::max(m, std::abs(x));
        return m;
    }
    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    void check_same(const Matrix& o) const {
        if (o.rows_ != rows_ || o.cols_ != cols_) throw Error(ErrorKind::InvalidInput, "matrix shape mismatch");
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
inline Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
inline Matrix operator*(Matrix a, double s) { return a *= s; }
inline Matrix operator*(double s, Matrix a) { return a *= s; }

inline Matrix operator*(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw Error(ErrorKind::InvalidInput, "matrix product shape mismatch");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

inline Vector operator*(const Matrix& a, std::span<const double> v) {
    if (a.cols() != v.size()) throw Error(ErrorKind::InvalidInput, "matrix-vector shape mismatch");
    Vector out(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * v[j];
        out[i] = s;
    }
    return out;
}

inline Vector operator*(const Matrix& a, const Vector& v) { return a * std::span<const double>(v); }

inline double dot(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double norm_inf(std::span<const double> a) {
    double m = 0.0;
    for (double x : a) m = std::max(m, std::abs(x));
    return m;
}

/// Symmetric p x p matrix. Construction from a general matrix averages the two
/// triangles, so entries(i,j) == entries(j,i) holds bitwise afterwards.
class SymMatrix {
public:
    SymMatrix() = default;
    explicit SymMatrix(std::size_t p, double fill = 0.0) : m_(p, p, fill) {
        if (p == 0) throw Error(ErrorKind::InvalidInput, "SymMatrix dimension must be >= 1");
    }
    explicit SymMatrix(const Matrix& m) : m_(m) {
        if (m.rows() != m.cols()) throw Error(ErrorKind::InvalidInput, "SymMatrix requires a square matrix");
        if (m.rows() == 0) throw Error(ErrorKind::InvalidInput, "SymMatrix dimension must be >= 1");
        symmetrize();
    }
    SymMatrix(std::initializer_list<std::initializer_list<double>> init) : SymMatrix(Matrix(init)) {}

    static SymMatrix identity(std::size_t p) { return SymMatrix(Matrix::identity(p)); }
    static SymMatrix diagonal(std::span<const double> d) { return SymMatrix(Matrix::diagonal(d)); }
    /// v v^T
    static SymMatrix outer(std::span<const double> v) {
        SymMatrix s(v.size());
        s.add_outer(v, 1.0);
        return s;
    }

    std::size_t dim() const noexcept { return m_.rows(); }
    double operator()(std::size_t i, std::size_t j) const { return m_(i, j); }

    /// Sets (i,j) and (j,i) together.
    void set(std::size_t i, std::size_t j, double v) {
        m_(i, j) = v;
        m_(j, i) = v;
    }

    /// this += scale * v v^T
    void add_outer(std::span<const double> v, double scale) {
        const std::size_t p = dim();
        assert(v.size() == p);
        for (std::size_t i = 0; i < p; ++i) {
            const double vi = scale * v[i];
            if (vi == 0.0) continue;
            for (std::size_t j = i; j < p; ++j) m_(i, j) += vi * v[j];
        }
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = i + 1; j < p; ++j) m_(j, i) = m_(i, j);
    }

    SymMatrix& operator+=(const SymMatrix& o) {
        m_ += o.m_;
        return *this;
    }
    SymMatrix& operator-=(const SymMatrix& o) {
        m_ -= o.m_;
        return *this;
    }
    SymMatrix& operator*=(double s) {
        m_ *= s;
        return *this;
    }

    double trace() const {
        double t = 0.0;
        for (std::size_t i = 0; i < dim(); ++i) t += m_(i, i);
        return t;
    }
    double frobenius() const { return m_.frobenius(); }
    double max_abs() const { return m_.max_abs(); }
    bool all_finite() const { return m_.all_finite(); }

    const Matrix& matrix() const noexcept { return m_; }

    friend bool operator==(const SymMatrix&, const SymMatrix&) = default;

private:
    void symmetrize() {
        const std::size_t p = m_.rows();
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = i + 1; j < p; ++j) {
                const double avg = 0.5 * (m_(i, j) + m_(j, i));
                m_(i, j) = avg;
                m_(j, i) = avg;
            }
    }

    Matrix m_;
};

inline SymMatrix operator+(SymMatrix a, const SymMatrix& b) { return a += b; }
inline SymMatrix operator-(SymMatrix a, const SymMatrix& b) { return a -= b; }
inline SymMatrix operator*(SymMatrix a, double s) { return a *= s; }
inline SymMatrix operator*(double s, SymMatrix a) { return a *= s; }

inline Matrix operator*(const SymMatrix& a, const SymMatrix& b) { return a.matrix() * b.matrix(); }
inline Matrix operator*(const Matrix& a, const SymMatrix& b) { return a * b.matrix(); }
inline Matrix operator*(const SymMatrix& a, const Matrix& b) { return a.matrix() * b; }
inline Vector operator*(const SymMatrix& a, std::span<const double> v) { return a.matrix() * v; }
inline Vector operator*(const SymMatrix& a, const Vector& v) { return a.matrix() * std::span<const double>(v); }

/// B A B^T for symmetric A, returned symmetric.
inline SymMatrix congruence(const Matrix& b, const SymMatrix& a) {
    return SymMatrix(b * a.matrix() * b.transpose());
}

/// v^T A v
inline double quad_form(const SymMatrix& a, std::span<const double> v) {
    const std::size_t p = a.dim();
    assert(v.size() == p);
    double s = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < p; ++j) row += a(i, j) * v[j];
        s += v[i] * row;
    }
    return s;
}

}  // namespace osd
