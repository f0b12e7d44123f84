#include "radood/clx.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "radood/error.hpp"

namespace radood::clx {

ComplexVector::ComplexVector(std::size_t n, cplx fill) : data_(n, fill) {
    if (n == 0) throw ConfigError("ComplexVector: length must be >= 1");
}

ComplexVector::ComplexVector(std::vector<cplx> data) : data_(std::move(data)) {
    if (data_.empty()) throw ConfigError("ComplexVector: length must be >= 1");
}

ComplexVector::ComplexVector(std::initializer_list<cplx> values) : ComplexVector(std::vector<cplx>(values)) {}

ComplexMatrix::ComplexMatrix(std::size_t rows, std::size_t cols, cplx fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

ComplexMatrix::ComplexMatrix(std::size_t rows, std::size_t cols, std::vector<cplx> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw ConfigError("ComplexMatrix: data length does not match rows*cols");
}

ComplexMatrix::ComplexMatrix(std::initializer_list<std::initializer_list<cplx>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw ConfigError("ComplexMatrix: ragged initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

ComplexMatrix ComplexMatrix::identity(std::size_t n) {
    ComplexMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

ComplexMatrix ComplexMatrix::diagonal(std::span<const cplx> diag) {
    ComplexMatrix m(diag.size(), diag.size());
    for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
    return m;
}

ComplexMatrix ComplexMatrix::adjoint() const {
    ComplexMatrix out(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j) out(j, i) = std::conj((*this)(i, j));
    return out;
}

ComplexMatrix ComplexMatrix::transpose() const {
    ComplexMatrix out(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j) out(j, i) = (*this)(i, j);
    return out;
}

ComplexMatrix ComplexMatrix::conj() const {
    ComplexMatrix out = *this;
    for (auto& v : out.data_) v = std::conj(v);
    return out;
}

cplx ComplexMatrix::trace() const {
    cplx t = 0.0;
    for (std::size_t i = 0; i < std::min(rows_, cols_); ++i) t += (*this)(i, i);
    return t;
}

double ComplexMatrix::frobenius_norm() const {
    double s = 0.0;
    for (const auto& v : data_) s += std::norm(v);
    return std::sqrt(s);
}

bool ComplexMatrix::is_diagonal() const {
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j)
            if (i != j && (*this)(i, j) != cplx{}) return false;
    return true;
}

HermitianMatrix::HermitianMatrix(ComplexMatrix m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols() || m_.rows() == 0) throw ConfigError("HermitianMatrix: must be square and non-empty");
    const std::size_t n = m_.rows();
    const double scale = std::max(m_.frobenius_norm(), 1e-300);
    double asym = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) asym = std::max(asym, std::abs(m_(i, j) - std::conj(m_(j, i))));
    if (!(asym <= 1e-12 * scale)) throw ConfigError("HermitianMatrix: A != A^H beyond 1e-12 relative");
    for (std::size_t i = 0; i < n; ++i) {
        m_(i, i) = m_(i, i).real();
        for (std::size_t j = i + 1; j < n; ++j) m_(j, i) = std::conj(m_(i, j));
    }
}

HermitianMatrix HermitianMatrix::identity(std::size_t n) { return HermitianMatrix(ComplexMatrix::identity(n)); }

HermitianMatrix toeplitz(double rho, std::size_t m) {
    if (!(std::abs(rho) < 1.0)) throw ConfigError("toeplitz: |rho| must be < 1");
    if (m == 0) throw ConfigError("toeplitz: m must be >= 1");
    ComplexMatrix t(m, m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            const auto lag = static_cast<int>(i > j ? i - j : j - i);
            t(i, j) = std::pow(rho, lag);
        }
    return HermitianMatrix(std::move(t));
}

ComplexMatrix cholesky(const HermitianMatrix& a) {
    const std::size_t n = a.size();
    const double floor = 1e-13 * a.trace() / static_cast<double>(n);
    ComplexMatrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = a(j, j).real();
        for (std::size_t k = 0; k < j; ++k) d -= std::norm(l(j, k));
        if (!(d > floor) || !(d > 0.0))
            throw NotPositiveDefinite("cholesky: pivot " + std::to_string(j) + " = " + std::to_string(d) +
                                      " is not numerically positive");
        const double ljj = std::sqrt(d);
        l(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            cplx s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * std::conj(l(j, k));
            l(i, j) = s / ljj;
        }
    }
    return l;
}

Cholesky::Cholesky(const HermitianMatrix& a) : l_(cholesky(a)) {}

ComplexVector Cholesky::forward(std::span<const cplx> b) const {
    const std::size_t n = size();
    if (b.size() != n) throw ConfigError("Cholesky: right-hand side has wrong length");
    ComplexVector y(n);
    for (std::size_t i = 0; i < n; ++i) {
        cplx s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l_(i, k) * y[k];
        y[i] = s / l_(i, i).real();
    }
    return y;
}

ComplexVector Cholesky::solve(std::span<const cplx> b) const {
    ComplexVector x = forward(b);
    const std::size_t n = size();
    for (std::size_t ii = n; ii-- > 0;) {
        cplx s = x[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= std::conj(l_(k, ii)) * x[k];
        x[ii] = s / l_(ii, ii).real();
    }
    return x;
}

double Cholesky::quad_form(std::span<const cplx> x) const { return norm2(forward(x).span()); }

cplx Cholesky::bilinear(std::span<const cplx> y, std::span<const cplx> x) const {
    return dot(forward(y).span(), forward(x).span());
}

double Cholesky::logdet() const {
    double s = 0.0;
    for (std::size_t i = 0; i < size(); ++i) s += std::log(l_(i, i).real());
    return 2.0 * s;
}

ComplexVector hermitian_solve(const HermitianMatrix& a, const ComplexVector& b) { return Cholesky(a).solve(b.span()); }

double logdet(const HermitianMatrix& a) { return Cholesky(a).logdet(); }

HermitianMatrix augmented_cov(const HermitianMatrix& sigma, const ComplexMatrix& delta) {
    const std::size_t q = sigma.size();
    if (delta.rows() != q || delta.cols() != q) throw ConfigError("augmented_cov: delta must be q x q");
    for (std::size_t i = 0; i < q; ++i)
        for (std::size_t j = i + 1; j < q; ++j)
            if (std::abs(delta(i, j) - delta(j, i)) > 1e-12 * (1.0 + std::abs(delta(i, j))))
                throw ConfigError("augmented_cov: pseudo-covariance must be symmetric");
    if (sigma.matrix().is_diagonal() && delta.is_diagonal()) {
        for (std::size_t l = 0; l < q; ++l)
            if (!(std::abs(delta(l, l)) < sigma(l, l).real()))
                throw ConfigError("augmented_cov: |delta_l| >= sigma_ll is not a valid complex Gaussian");
    }
    ComplexMatrix k(2 * q, 2 * q);
    for (std::size_t i = 0; i < q; ++i)
        for (std::size_t j = 0; j < q; ++j) {
            k(i, j) = sigma(i, j);
            k(i, j + q) = delta(i, j);
            k(i + q, j) = std::conj(delta(i, j));
            k(i + q, j + q) = std::conj(sigma(i, j));
        }
    return HermitianMatrix(std::move(k));
}

ComplexMatrix matmul(const ComplexMatrix& a, const ComplexMatrix& b) {
    if (a.cols() != b.rows()) throw ConfigError("matmul: inner dimensions differ");
    ComplexMatrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const cplx aik = a(i, k);
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

ComplexVector matvec(const ComplexMatrix& a, std::span<const cplx> x) {
    if (a.cols() != x.size()) throw ConfigError("matvec: dimension mismatch");
    ComplexVector y(a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        cplx s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

cplx dot(std::span<const cplx> x, std::span<const cplx> y) {
    cplx s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += std::conj(x[i]) * y[i];
    return s;
}

double norm2(std::span<const cplx> x) {
    double s = 0.0;
    for (const auto& v : x) s += std::norm(v);
    return s;
}

}  // namespace radood::clx
