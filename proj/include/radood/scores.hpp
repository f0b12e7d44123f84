#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "radood/clx.hpp"
#include "radood/cvae.hpp"
#include "radood/sigmodel.hpp"

#include <json.hpp>

namespace radood::scores {

enum class ScoreKind { mse, kl, maha, anmf };
std::string to_string(ScoreKind k);
ScoreKind score_kind_from_string(const std::string& s);

/// Which latent feeds the latent scores: one reparameterized draw, or μ.
enum class LatentMode { sample, mean };
std::string to_string(LatentMode m);
LatentMode latent_mode_from_string(const std::string& s);

/// Empirical clutter law in latent space, diagonal per component:
/// mean μ̂₀, circular variance Σ̂₀ and pseudo-variance Δ̂₀.
struct EmpiricalNullKL {
    clx::ComplexVector mu0;
    std::vector<double> sigma0;
    clx::ComplexVector delta0;
    double eps_clip = 1e-8;

    std::size_t q() const noexcept { return mu0.size(); }
};

/// Per-sample circular variance k = max(v - |δ|², eps).
double circular_variance(double v, cplx delta, double eps = 1e-8);

/// μ̂₀ = mean μ_i, Σ̂₀ = mean k_i, Δ̂₀ = mean δ_i. Needs at least 2 posteriors.
EmpiricalNullKL fit_null_kl(std::span<const vae::LatentPosterior> posteriors, double eps_clip = 1e-8);
EmpiricalNullKL fit_null_kl(const vae::CvaeModel& encoder, std::span<const clx::ComplexVector> clutter);

/// KL(CN(μ, Σ_enc, Δ_enc) || null) through the augmented 2x2 blocks of each
/// component. Both sides use k as the circular variance and have their
/// pseudo-variance shrunk to |δ| <= (1-1e-6)·k, so every block is PD.
double score_kl(const EmpiricalNullKL& null, const vae::LatentPosterior& post);
double score_kl(const vae::CvaeModel& encoder, const EmpiricalNullKL& null, const clx::ComplexVector& x);

struct EmpiricalNullMaha {
    clx::ComplexVector mu_ref;
    clx::HermitianMatrix sigma_ref;
    double lambda_reg = 0.0;
    std::size_t n_samples = 0;

    const clx::Cholesky& factor() const;
    /// Recomputes the cached factor after sigma_ref changes.
    void refactor();

  private:
    std::optional<clx::Cholesky> chol_;
};

/// Sample mean and (N-1)-normalized Hermitian covariance of `latents`, plus
/// λ_reg·I with λ_reg = 1e-6·trace/q (1e-6 if the trace is zero).
EmpiricalNullMaha fit_null_maha(std::span<const clx::ComplexVector> latents);
/// Latents from the encoder: a draw with rng.child(i) for sample i, or μ_i.
EmpiricalNullMaha fit_null_maha(const vae::CvaeModel& encoder, std::span<const clx::ComplexVector> clutter,
                                const Stream& rng, LatentMode mode = LatentMode::sample);

/// (z - μ_ref)^H Σ_ref^{-1} (z - μ_ref).
double score_maha(const EmpiricalNullMaha& null, const clx::ComplexVector& z);

/// ‖x - decode(μ(x))‖².
double score_mse(const vae::CvaeModel& model, const clx::ComplexVector& x);
std::vector<double> score_mse_batch(const vae::CvaeModel& model, std::span<const clx::ComplexVector> xs);
/// Average of ‖x - decode(z_j)‖² over n reparameterized draws.
double score_mse_sampled(const vae::CvaeModel& model, const clx::ComplexVector& x, std::size_t n, Stream& rng);

struct Threshold {
    double value = 0.0;
    double target_pfa = 0.01;
    std::size_t n_cal = 0;
    std::size_t order_index = 0;  // 1-based order statistic used
    ScoreKind kind = ScoreKind::mse;
    /// n_cal·α < 50: the tail estimate rests on few samples.
    bool thin_tail = false;
};

/// λ = k-th smallest score with k = ceil(N·(1-α)).
Threshold calibrate(std::span<const double> scores, double alpha, ScoreKind kind = ScoreKind::mse);

/// H1 iff score > λ.
sig::Label decide(double score, const Threshold& threshold);

nlohmann::json to_json(const Threshold& t);
Threshold threshold_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EmpiricalNullKL& n);
EmpiricalNullKL null_kl_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EmpiricalNullMaha& n);
EmpiricalNullMaha null_maha_from_json(const nlohmann::json& j);

nlohmann::json complex_vector_to_json(std::span<const cplx> v);
clx::ComplexVector complex_vector_from_json(const nlohmann::json& j);

}  // namespace radood::scores
