#include "radood/classical.hpp"

#include <algorithm>
#include <cmath>

namespace radood::classical {

std::string to_string(Estimator e) { return e == Estimator::scm ? "scm" : "tyler"; }

Estimator estimator_from_string(const std::string& s) {
    if (s == "scm" || s == "SCM") return Estimator::scm;
    if (s == "tyler" || s == "Tyler" || s == "fp") return Estimator::tyler;
    throw ConfigError("unknown covariance estimator '" + s + "' (expected scm or tyler)");
}

namespace {

std::size_t common_length(std::span<const clx::ComplexVector> samples) {
    if (samples.empty()) throw ConfigError("covariance estimation: no secondary samples");
    const std::size_t m = samples.front().size();
    for (const auto& x : samples)
        if (x.size() != m) throw ConfigError("covariance estimation: samples differ in length");
    return m;
}

// Adds w·x x^H to the upper triangle of acc.
void rank1_upper(clx::ComplexMatrix& acc, const clx::ComplexVector& x, double w) {
    const std::size_t m = x.size();
    for (std::size_t i = 0; i < m; ++i) {
        const cplx xi = w * x[i];
        for (std::size_t j = i; j < m; ++j) acc(i, j) += xi * std::conj(x[j]);
    }
}

void mirror_upper(clx::ComplexMatrix& a) {
    for (std::size_t i = 0; i < a.rows(); ++i) {
        a(i, i) = a(i, i).real();
        for (std::size_t j = i + 1; j < a.cols(); ++j) a(j, i) = std::conj(a(i, j));
    }
}

}  // namespace

CovEstimate scm(std::span<const clx::ComplexVector> samples) {
    const std::size_t m = common_length(samples);
    if (samples.size() < m)
        throw NotPositiveDefinite("scm: K = " + std::to_string(samples.size()) + " < m = " + std::to_string(m) +
                                  " gives a singular estimate");
    clx::ComplexMatrix acc(m, m);
    const double w = 1.0 / static_cast<double>(samples.size());
    for (const auto& x : samples) rank1_upper(acc, x, w);
    mirror_upper(acc);
    CovEstimate est{clx::HermitianMatrix(std::move(acc)), Estimator::scm, 1, 0.0};
    clx::cholesky(est.sigma_hat);  // throws if singular
    return est;
}

TylerNotConverged::TylerNotConverged(clx::HermitianMatrix last, double residual, std::size_t iterations)
    : NumericError("tyler: no convergence after " + std::to_string(iterations) + " iterations (residual " +
                   std::to_string(residual) + ")"),
      last_(std::move(last)),
      residual_(residual),
      iterations_(iterations) {}

CovEstimate tyler(std::span<const clx::ComplexVector> samples, const TylerOptions& opts) {
    const std::size_t m = common_length(samples);
    const std::size_t k = samples.size();
    if (k < m + 1) throw ConfigError("tyler: need K >= m + 1 secondary samples");
    // Per-sample scale cancels in x x^H / (x^H Σ^{-1} x); unit-normalizing first keeps the sums well scaled.
    std::vector<clx::ComplexVector> u;
    u.reserve(k);
    for (const auto& x : samples) {
        const double nrm = std::sqrt(clx::norm2(x.span()));
        if (!(nrm > 0.0)) throw ConfigError("tyler: zero-norm secondary sample");
        clx::ComplexVector y = x;
        for (auto& v : y) v /= nrm;
        u.push_back(std::move(y));
    }
    const double md = static_cast<double>(m);
    clx::HermitianMatrix sigma = clx::HermitianMatrix::identity(m);
    double change = 0.0;
    for (std::size_t it = 1; it <= opts.max_iter; ++it) {
        const clx::Cholesky chol(sigma);
        clx::ComplexMatrix next(m, m);
        for (const auto& x : u) rank1_upper(next, x, 1.0 / chol.quad_form(x.span()));
        double tr = 0.0;
        for (std::size_t i = 0; i < m; ++i) tr += next(i, i).real();
        const double scale = md / tr;  // the (m/K) factor cancels under trace normalization
        double diff = 0.0, base = 0.0;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = i; j < m; ++j) {
                next(i, j) *= scale;
                const double w = i == j ? 1.0 : 2.0;
                diff += w * std::norm(next(i, j) - sigma(i, j));
                base += w * std::norm(sigma(i, j));
            }
        mirror_upper(next);
        sigma = clx::HermitianMatrix(std::move(next));
        change = std::sqrt(diff / base);
        if (change <= opts.tol) return {std::move(sigma), Estimator::tyler, it, change};
    }
    throw TylerNotConverged(std::move(sigma), change, opts.max_iter);
}

CovEstimate estimate(Estimator kind, std::span<const clx::ComplexVector> samples, const TylerOptions& opts) {
    return kind == Estimator::scm ? scm(samples) : tyler(samples, opts);
}

double anmf(const clx::ComplexVector& x, const clx::ComplexVector& p, const clx::Cholesky& sigma_hat) {
    if (x.size() != sigma_hat.size() || p.size() != sigma_hat.size()) throw ConfigError("anmf: dimension mismatch");
    const auto a = sigma_hat.forward(p.span());
    const auto b = sigma_hat.forward(x.span());
    const double pp = clx::norm2(a.span());
    const double xx = clx::norm2(b.span());
    if (!(pp > 0.0) || !(xx > 0.0)) throw ConfigError("anmf: x and p must be nonzero");
    const double lam = std::norm(clx::dot(a.span(), b.span())) / (pp * xx);
    return std::clamp(lam, 0.0, 1.0);
}

double anmf(const clx::ComplexVector& x, const clx::ComplexVector& p, const clx::HermitianMatrix& sigma_hat) {
    return anmf(x, p, clx::Cholesky(sigma_hat));
}

AnmfDetector::AnmfDetector(const sig::Scenario& scenario, std::size_t secondary_count, Estimator kind,
                           TylerOptions opts)
    : sampler_(scenario), k_(secondary_count), kind_(kind), opts_(opts) {
    if (k_ < scenario.m) throw ConfigError("AnmfDetector: K must be >= m");
    for (std::size_t d = 0; d < scenario.m; ++d) steering_.push_back(sig::steering_vector(scenario.m, d));
}

double AnmfDetector::score(const clx::ComplexVector& cell, std::size_t doppler_bin, Stream& rng) const {
    if (doppler_bin >= steering_.size()) throw ConfigError("AnmfDetector: doppler bin out of range");
    std::vector<clx::ComplexVector> secondary;
    secondary.reserve(k_);
    for (std::size_t i = 0; i < k_; ++i) {
        Stream s = rng.child(i);
        secondary.push_back(sampler_.draw(s));
    }
    const auto est = estimate(kind_, secondary, opts_);
    return anmf(cell, steering_[doppler_bin], clx::Cholesky(est.sigma_hat));
}

}  // namespace radood::classical
