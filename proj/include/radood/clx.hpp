#pragma once

#include <complex>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace radood {

using cplx = std::complex<double>;

namespace clx {

/// Dense complex vector. Always non-empty.
class ComplexVector {
  public:
    ComplexVector() = default;
    explicit ComplexVector(std::size_t n, cplx fill = {});
    explicit ComplexVector(std::vector<cplx> data);
    ComplexVector(std::initializer_list<cplx> values);

    std::size_t size() const noexcept { return data_.size(); }
    cplx& operator[](std::size_t i) { return data_[i]; }
    const cplx& operator[](std::size_t i) const { return data_[i]; }

    std::span<cplx> span() noexcept { return data_; }
    std::span<const cplx> span() const noexcept { return data_; }
    const std::vector<cplx>& values() const noexcept { return data_; }

    auto begin() noexcept { return data_.begin(); }
    auto end() noexcept { return data_.end(); }
    auto begin() const noexcept { return data_.begin(); }
    auto end() const noexcept { return data_.end(); }

    bool operator==(const ComplexVector&) const = default;

  private:
    std::vector<cplx> data_;
};

/// Row-major dense complex matrix.
class ComplexMatrix {
  public:
    ComplexMatrix() = default;
    ComplexMatrix(std::size_t rows, std::size_t cols, cplx fill = {});
    ComplexMatrix(std::size_t rows, std::size_t cols, std::vector<cplx> data);
    ComplexMatrix(std::initializer_list<std::initializer_list<cplx>> rows);

    static ComplexMatrix identity(std::size_t n);
    static ComplexMatrix diagonal(std::span<const cplx> diag);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    cplx& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    const cplx& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
    std::span<const cplx> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
    const std::vector<cplx>& values() const noexcept { return data_; }

    ComplexMatrix adjoint() const;
    ComplexMatrix transpose() const;
    ComplexMatrix conj() const;
    cplx trace() const;
    double frobenius_norm() const;
    bool is_diagonal() const;

    bool operator==(const ComplexMatrix&) const = default;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<cplx> data_;
};

/// Square matrix with A == A^H to 1e-12 relative. The constructor checks the
/// symmetry and then forces it exactly (diagonal made real, lower mirrored).
class HermitianMatrix {
  public:
    HermitianMatrix() = default;
    explicit HermitianMatrix(ComplexMatrix m);

    static HermitianMatrix identity(std::size_t n);

    std::size_t size() const noexcept { return m_.rows(); }
    const cplx& operator()(std::size_t i, std::size_t j) const { return m_(i, j); }
    const ComplexMatrix& matrix() const noexcept { return m_; }
    double trace() const { return m_.trace().real(); }

    bool operator==(const HermitianMatrix&) const = default;

  private:
    ComplexMatrix m_;
};

/// Lower-triangular Cholesky factor of a Hermitian positive definite matrix,
/// with the solves and quadratic forms built on it.
class Cholesky {
  public:
    explicit Cholesky(const HermitianMatrix& a);

    const ComplexMatrix& lower() const noexcept { return l_; }
    std::size_t size() const noexcept { return l_.rows(); }

    /// x with a·x = b.
    ComplexVector solve(std::span<const cplx> b) const;
    /// L^{-1} b (forward substitution only).
    ComplexVector forward(std::span<const cplx> b) const;
    /// x^H a^{-1} x, real and non-negative.
    double quad_form(std::span<const cplx> x) const;
    /// y^H a^{-1} x.
    cplx bilinear(std::span<const cplx> y, std::span<const cplx> x) const;
    double logdet() const;

  private:
    ComplexMatrix l_;
};

/// {T(rho)}_{ij} = rho^{|i-j|}.
HermitianMatrix toeplitz(double rho, std::size_t m);

/// Lower L with L L^H = a. Throws NotPositiveDefinite when a pivot falls
/// below 1e-13·trace(a)/m.
ComplexMatrix cholesky(const HermitianMatrix& a);

ComplexVector hermitian_solve(const HermitianMatrix& a, const ComplexVector& b);

double logdet(const HermitianMatrix& a);

/// Widely-linear covariance [[Σ, Δ], [Δ*, Σ*]] of size 2q.
/// `delta` must be symmetric; when both inputs are diagonal each
/// |δ_ℓ| < σ_ℓℓ is required.
HermitianMatrix augmented_cov(const HermitianMatrix& sigma, const ComplexMatrix& delta);

ComplexMatrix matmul(const ComplexMatrix& a, const ComplexMatrix& b);
ComplexVector matvec(const ComplexMatrix& a, std::span<const cplx> x);
/// x^H y
cplx dot(std::span<const cplx> x, std::span<const cplx> y);
double norm2(std::span<const cplx> x);

}  // namespace clx
}  // namespace radood
