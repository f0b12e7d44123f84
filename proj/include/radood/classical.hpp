#pragma once

#include <span>
#include <string>
#include <vector>

#include "radood/clx.hpp"
#include "radood/error.hpp"
#include "radood/sigmodel.hpp"

namespace radood::classical {

enum class Estimator { scm, tyler };
std::string to_string(Estimator e);
Estimator estimator_from_string(const std::string& s);

struct CovEstimate {
    clx::HermitianMatrix sigma_hat;
    Estimator kind = Estimator::scm;
    std::size_t iterations = 0;
    double final_change = 0.0;
};

/// (1/K) Σ x_k x_k^H. Throws NotPositiveDefinite when K < m or the result is
/// numerically singular.
CovEstimate scm(std::span<const clx::ComplexVector> samples);

struct TylerOptions {
    double tol = 1e-8;
    std::size_t max_iter = 100;
};

class TylerNotConverged : public NumericError {
  public:
    TylerNotConverged(clx::HermitianMatrix last, double residual, std::size_t iterations);
    const clx::HermitianMatrix& last_iterate() const noexcept { return last_; }
    double residual() const noexcept { return residual_; }
    std::size_t iterations() const noexcept { return iterations_; }

  private:
    clx::HermitianMatrix last_;
    double residual_;
    std::size_t iterations_;
};

/// Fixed point of Σ ← (m/K) Σ_k x_k x_k^H / (x_k^H Σ^{-1} x_k), started at I and
/// trace-normalized to m after every step. Stops once the relative Frobenius
/// change is <= tol.
CovEstimate tyler(std::span<const clx::ComplexVector> samples, const TylerOptions& opts = {});

CovEstimate estimate(Estimator kind, std::span<const clx::ComplexVector> samples, const TylerOptions& opts = {});

/// Λ = |p^H Σ^{-1} x|² / ((p^H Σ^{-1} p)(x^H Σ^{-1} x)), in [0, 1].
double anmf(const clx::ComplexVector& x, const clx::ComplexVector& p, const clx::HermitianMatrix& sigma_hat);
double anmf(const clx::ComplexVector& x, const clx::ComplexVector& p, const clx::Cholesky& sigma_hat);

/// ANMF with a covariance estimated per trial from K fresh target-free
/// secondary cells of the scenario's clutter law.
class AnmfDetector {
  public:
    AnmfDetector(const sig::Scenario& scenario, std::size_t secondary_count, Estimator kind,
                 TylerOptions opts = {});

    /// Draws the secondary data from `rng`, then scores `cell` at `doppler_bin`.
    double score(const clx::ComplexVector& cell, std::size_t doppler_bin, Stream& rng) const;

    std::size_t secondary_count() const noexcept { return k_; }
    Estimator estimator() const noexcept { return kind_; }
    const sig::Scenario& scenario() const noexcept { return sampler_.scenario(); }

  private:
    sig::ClutterSampler sampler_;
    std::size_t k_;
    Estimator kind_;
    TylerOptions opts_;
    std::vector<clx::ComplexVector> steering_;
};

}  // namespace radood::classical
