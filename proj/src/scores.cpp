#include "radood/scores.hpp"

#include <algorithm>
#include <cmath>

#include "radood/error.hpp"

namespace radood::scores {

std::string to_string(ScoreKind k) {
    switch (k) {
        case ScoreKind::mse: return "cvae_mse";
        case ScoreKind::kl: return "kld";
        case ScoreKind::maha: return "mahalanobis";
        case ScoreKind::anmf: return "anmf_fp";
    }
    return "?";
}

ScoreKind score_kind_from_string(const std::string& s) {
    for (auto k : {ScoreKind::mse, ScoreKind::kl, ScoreKind::maha, ScoreKind::anmf})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown score kind '" + s + "'");
}

std::string to_string(LatentMode m) { return m == LatentMode::sample ? "sample" : "mean"; }

LatentMode latent_mode_from_string(const std::string& s) {
    if (s == "sample") return LatentMode::sample;
    if (s == "mean") return LatentMode::mean;
    throw ConfigError("unknown latent mode '" + s + "' (expected sample or mean)");
}

double circular_variance(double v, cplx delta, double eps) { return std::max(v - std::norm(delta), eps); }

EmpiricalNullKL fit_null_kl(std::span<const vae::LatentPosterior> posteriors, double eps_clip) {
    if (posteriors.empty()) throw ConfigError("fit_null_kl: empty clutter set");
    const std::size_t q = posteriors.front().q();
    EmpiricalNullKL null{clx::ComplexVector(q), std::vector<double>(q, 0.0), clx::ComplexVector(q), eps_clip};
    for (const auto& p : posteriors) {
        if (p.q() != q) throw ConfigError("fit_null_kl: posteriors differ in q");
        for (std::size_t l = 0; l < q; ++l) {
            null.mu0[l] += p.mu[l];
            null.sigma0[l] += circular_variance(p.v[l], p.delta[l], eps_clip);
            null.delta0[l] += p.delta[l];
        }
    }
    const double inv = 1.0 / static_cast<double>(posteriors.size());
    for (std::size_t l = 0; l < q; ++l) {
        null.mu0[l] *= inv;
        null.sigma0[l] *= inv;
        null.delta0[l] *= inv;
    }
    return null;
}

EmpiricalNullKL fit_null_kl(const vae::CvaeModel& encoder, std::span<const clx::ComplexVector> clutter) {
    if (clutter.empty()) throw ConfigError("fit_null_kl: empty clutter set");
    return fit_null_kl(encoder.encode_batch(clutter));
}

namespace {

// Pseudo-variance limited to (1-1e-6)·k so [[k, δ], [δ*, k]] stays PD.
cplx shrink(cplx delta, double k) {
    const double lim = vae::kPseudoShrink * k;
    const double a = std::abs(delta);
    return a > lim ? delta * (lim / a) : delta;
}

}  // namespace

double score_kl(const EmpiricalNullKL& null, const vae::LatentPosterior& post) {
    if (post.q() != null.q()) throw ConfigError("score_kl: posterior q differs from the null");
    double total = 0.0;
    for (std::size_t l = 0; l < null.q(); ++l) {
        const double s0 = std::max(null.sigma0[l], null.eps_clip);
        const cplx d0 = shrink(null.delta0[l], s0);
        const double k = circular_variance(post.v[l], post.delta[l], null.eps_clip);
        const cplx d = shrink(post.delta[l], k);
        const double det0 = s0 * s0 - std::norm(d0);
        const double det = k * k - std::norm(d);
        // tr(K0^{-1} K) and the augmented mean term [e; e*]^H K0^{-1} [e; e*], e = μ0 - μ.
        const double tr = (2.0 * s0 * k - 2.0 * (d0 * std::conj(d)).real()) / det0;
        const cplx e = null.mu0[l] - post.mu[l];
        const double quad = (2.0 * s0 * std::norm(e) - 2.0 * (std::conj(d0) * e * e).real()) / det0;
        total += 0.5 * (std::log(det0) - std::log(det) + tr + quad - 2.0);
    }
    return std::max(total, 0.0);
}

double score_kl(const vae::CvaeModel& encoder, const EmpiricalNullKL& null, const clx::ComplexVector& x) {
    return score_kl(null, encoder.encode(x));
}

const clx::Cholesky& EmpiricalNullMaha::factor() const {
    if (!chol_) throw std::logic_error("EmpiricalNullMaha: factor requested before refactor()");
    return *chol_;
}

void EmpiricalNullMaha::refactor() { chol_.emplace(sigma_ref); }

EmpiricalNullMaha fit_null_maha(std::span<const clx::ComplexVector> latents) {
    if (latents.size() < 2) throw ConfigError("fit_null_maha: need at least 2 latent samples");
    const std::size_t q = latents.front().size();
    clx::ComplexVector mean(q);
    for (const auto& z : latents) {
        if (z.size() != q) throw ConfigError("fit_null_maha: latents differ in length");
        for (std::size_t l = 0; l < q; ++l) mean[l] += z[l];
    }
    const double n = static_cast<double>(latents.size());
    for (auto& v : mean) v /= n;
    clx::ComplexMatrix cov(q, q);
    for (const auto& z : latents)
        for (std::size_t i = 0; i < q; ++i) {
            const cplx di = z[i] - mean[i];
            for (std::size_t j = i; j < q; ++j) cov(i, j) += di * std::conj(z[j] - mean[j]);
        }
    double trace = 0.0;
    for (std::size_t i = 0; i < q; ++i) {
        for (std::size_t j = i; j < q; ++j) {
            cov(i, j) /= (n - 1.0);
            cov(j, i) = std::conj(cov(i, j));
        }
        cov(i, i) = cov(i, i).real();
        trace += cov(i, i).real();
    }
    const double lambda = trace > 0.0 ? 1e-6 * trace / static_cast<double>(q) : 1e-6;
    for (std::size_t i = 0; i < q; ++i) cov(i, i) += lambda;
    EmpiricalNullMaha null;
    null.mu_ref = std::move(mean);
    null.sigma_ref = clx::HermitianMatrix(std::move(cov));
    null.lambda_reg = lambda;
    null.n_samples = latents.size();
    null.refactor();
    return null;
}

EmpiricalNullMaha fit_null_maha(const vae::CvaeModel& encoder, std::span<const clx::ComplexVector> clutter,
                                const Stream& rng, LatentMode mode) {
    const auto posts = encoder.encode_batch(clutter);
    std::vector<clx::ComplexVector> zs;
    zs.reserve(posts.size());
    for (std::size_t i = 0; i < posts.size(); ++i) {
        if (mode == LatentMode::mean) {
            zs.push_back(posts[i].mu);
        } else {
            Stream s = rng.child(i);
            zs.push_back(vae::reparameterize(posts[i], s));
        }
    }
    return fit_null_maha(zs);
}

double score_maha(const EmpiricalNullMaha& null, const clx::ComplexVector& z) {
    if (z.size() != null.mu_ref.size()) throw ConfigError("score_maha: latent length differs from the null");
    std::vector<cplx> d(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) d[i] = z[i] - null.mu_ref[i];
    return null.factor().quad_form(d);
}

std::vector<double> score_mse_batch(const vae::CvaeModel& model, std::span<const clx::ComplexVector> xs) {
    const auto posts = model.encode_batch(xs);
    std::vector<clx::ComplexVector> mus;
    mus.reserve(posts.size());
    for (const auto& p : posts) mus.push_back(p.mu);
    const auto xh = model.decode_batch(mus);
    std::vector<double> out(xs.size());
    for (std::size_t n = 0; n < xs.size(); ++n) {
        double s = 0.0;
        for (std::size_t k = 0; k < xs[n].size(); ++k) s += std::norm(xs[n][k] - xh[n][k]);
        out[n] = s;
    }
    return out;
}

double score_mse(const vae::CvaeModel& model, const clx::ComplexVector& x) {
    return score_mse_batch(model, std::span<const clx::ComplexVector>(&x, 1)).front();
}

double score_mse_sampled(const vae::CvaeModel& model, const clx::ComplexVector& x, std::size_t n, Stream& rng) {
    if (n == 0) throw ConfigError("score_mse_sampled: n must be positive");
    const auto post = model.encode(x);
    std::vector<clx::ComplexVector> zs;
    for (std::size_t j = 0; j < n; ++j) zs.push_back(vae::reparameterize(post, rng));
    const auto xh = model.decode_batch(zs);
    double s = 0.0;
    for (const auto& r : xh)
        for (std::size_t k = 0; k < x.size(); ++k) s += std::norm(x[k] - r[k]);
    return s / static_cast<double>(n);
}

Threshold calibrate(std::span<const double> scores, double alpha, ScoreKind kind) {
    if (scores.empty()) throw ConfigError("calibrate: empty score set");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("calibrate: alpha must lie in (0,1)");
    const std::size_t n = scores.size();
    // ceil(N(1-α)) = N - floor(Nα); the tiny slack absorbs binary rounding of α.
    const auto exceed = static_cast<std::size_t>(std::floor(static_cast<double>(n) * alpha * (1.0 + 1e-12)));
    const std::size_t k = std::max<std::size_t>(1, n - std::min(exceed, n - 1));
    std::vector<double> sorted(scores.begin(), scores.end());
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1), sorted.end());
    Threshold t;
    t.value = sorted[k - 1];
    if (!std::isfinite(t.value)) throw NumericError("calibrate: threshold is not finite");
    t.target_pfa = alpha;
    t.n_cal = n;
    t.order_index = k;
    t.kind = kind;
    t.thin_tail = static_cast<double>(n) * alpha < 50.0;
    return t;
}

sig::Label decide(double score, const Threshold& threshold) {
    return score > threshold.value ? sig::Label::h1 : sig::Label::h0;
}

nlohmann::json complex_vector_to_json(std::span<const cplx> v) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : v) arr.push_back({c.real(), c.imag()});
    return arr;
}

clx::ComplexVector complex_vector_from_json(const nlohmann::json& j) {
    std::vector<cplx> out;
    for (const auto& e : j) out.emplace_back(e.at(0).get<double>(), e.at(1).get<double>());
    return clx::ComplexVector(std::move(out));
}

nlohmann::json to_json(const Threshold& t) {
    return {{"score_kind", to_string(t.kind)}, {"lambda", t.value},       {"alpha", t.target_pfa},
            {"n_cal", t.n_cal},                {"order_index", t.order_index}, {"thin_tail", t.thin_tail}};
}

Threshold threshold_from_json(const nlohmann::json& j) {
    Threshold t;
    t.kind = score_kind_from_string(j.at("score_kind").get<std::string>());
    t.value = j.at("lambda").get<double>();
    t.target_pfa = j.at("alpha").get<double>();
    t.n_cal = j.at("n_cal").get<std::size_t>();
    t.order_index = j.at("order_index").get<std::size_t>();
    t.thin_tail = j.value("thin_tail", false);
    return t;
}

nlohmann::json to_json(const EmpiricalNullKL& n) {
    return {{"mu0", complex_vector_to_json(n.mu0.span())},
            {"sigma0", n.sigma0},
            {"delta0", complex_vector_to_json(n.delta0.span())},
            {"eps_clip", n.eps_clip}};
}

EmpiricalNullKL null_kl_from_json(const nlohmann::json& j) {
    EmpiricalNullKL n{complex_vector_from_json(j.at("mu0")), j.at("sigma0").get<std::vector<double>>(),
                      complex_vector_from_json(j.at("delta0")), j.value("eps_clip", 1e-8)};
    if (n.sigma0.size() != n.q() || n.delta0.size() != n.q()) throw ConfigError("KL null: field lengths differ");
    return n;
}

nlohmann::json to_json(const EmpiricalNullMaha& n) {
    const auto q = n.mu_ref.size();
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < q; ++i) rows.push_back(complex_vector_to_json(n.sigma_ref.matrix().row(i)));
    return {{"mu_ref", complex_vector_to_json(n.mu_ref.span())},
            {"sigma_ref", rows},
            {"lambda_reg", n.lambda_reg},
            {"n_samples", n.n_samples}};
}

EmpiricalNullMaha null_maha_from_json(const nlohmann::json& j) {
    EmpiricalNullMaha n;
    n.mu_ref = complex_vector_from_json(j.at("mu_ref"));
    const auto q = n.mu_ref.size();
    std::vector<cplx> data;
    for (const auto& row : j.at("sigma_ref")) {
        const auto r = complex_vector_from_json(row);
        if (r.size() != q) throw ConfigError("Mahalanobis null: sigma_ref is not q x q");
        data.insert(data.end(), r.begin(), r.end());
    }
    n.sigma_ref = clx::HermitianMatrix(clx::ComplexMatrix(q, q, std::move(data)));
    n.lambda_reg = j.at("lambda_reg").get<double>();
    n.n_samples = j.value("n_samples", std::size_t{0});
    n.refactor();
    return n;
}

}  // namespace radood::scores
