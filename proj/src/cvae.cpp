#include "radood/cvae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace radood::vae {

using nn::ComplexTensor;
using nn::LayerSpec;

void LatentPosterior::validate() const {
    if (v.size() != mu.size() || delta.size() != mu.size()) throw ConfigError("posterior: field lengths differ");
    for (std::size_t l = 0; l < q(); ++l) {
        if (!(v[l] > 0.0) || !std::isfinite(v[l])) throw ConfigError("posterior: v must be positive and finite");
        if (!(std::abs(delta[l]) <= kPseudoShrink * v[l] * (1.0 + 1e-12)))
            throw ConfigError("posterior: |delta| exceeds (1-1e-6)·v");
    }
}

namespace {

struct Coeffs {
    cplx kr;
    double ki;
    double s;  // v + Re δ after clipping
    bool s_clipped;
    double p;  // v² - |δ|² after clipping
    bool p_clipped;
};

Coeffs coeffs(double v, cplx d) {
    Coeffs c{};
    const double s_raw = v + d.real();
    c.s_clipped = !(s_raw > kStabilityClip);
    c.s = c.s_clipped ? kStabilityClip : s_raw;
    const double p_raw = v * v - std::norm(d);
    c.p_clipped = !(p_raw > kStabilityClip);
    c.p = c.p_clipped ? kStabilityClip : p_raw;
    c.kr = (v + d) / std::sqrt(2.0 * c.s);
    c.ki = std::sqrt(c.p / (2.0 * c.s));
    return c;
}

double softplus(double a) { return a > 30.0 ? a : std::log1p(std::exp(a)); }
double sigmoid(double a) { return a >= 0 ? 1.0 / (1.0 + std::exp(-a)) : std::exp(a) / (1.0 + std::exp(a)); }

constexpr double kVarianceFloor = 1e-6;

// tanh(ρ)/ρ and (d/dρ[tanh(ρ)/ρ])/ρ, with series near 0.
void tanh_ratio(double rho, double& f, double& fprime_over_rho) {
    if (rho < 1e-3) {
        const double r2 = rho * rho;
        f = 1.0 - r2 / 3.0 + 2.0 * r2 * r2 / 15.0;
        fprime_over_rho = -2.0 / 3.0 + 8.0 * r2 / 15.0;
        return;
    }
    const double t = std::tanh(rho);
    const double sech2 = 1.0 - t * t;
    f = t / rho;
    fprime_over_rho = (rho * sech2 - t) / (rho * rho * rho);
}

}  // namespace

clx::ComplexVector reparameterize(const LatentPosterior& post, std::span<const double> eps_r,
                                  std::span<const double> eps_i) {
    const std::size_t q = post.q();
    if (eps_r.size() != q || eps_i.size() != q) throw ConfigError("reparameterize: noise length != q");
    clx::ComplexVector z(q);
    for (std::size_t l = 0; l < q; ++l) {
        const Coeffs c = coeffs(post.v[l], post.delta[l]);
        z[l] = post.mu[l] + c.kr * eps_r[l] + cplx{0.0, c.ki * eps_i[l]};
    }
    return z;
}

clx::ComplexVector reparameterize(const LatentPosterior& post, Stream& rng) {
    const std::size_t q = post.q();
    std::vector<double> er(q), ei(q);
    for (std::size_t l = 0; l < q; ++l) {
        er[l] = rng.normal();
        ei[l] = rng.normal();
    }
    return reparameterize(post, er, ei);
}

void reparameterize_backward(const LatentPosterior& post, std::span<const double> eps_r,
                             std::span<const double> eps_i, std::span<const cplx> grad_z, PosteriorGrad& g) {
    const std::size_t q = post.q();
    g.mu.resize(q);
    g.v.resize(q);
    g.delta.resize(q);
    for (std::size_t l = 0; l < q; ++l) {
        const double v = post.v[l];
        const cplx d = post.delta[l];
        const Coeffs c = coeffs(v, d);
        const cplx gz = grad_z[l];
        g.mu[l] += gz;

        const cplx g_kr = eps_r[l] * gz;
        const double g_ki = eps_i[l] * gz.imag();

        const double two_s = 2.0 * c.s;
        const double rs = 1.0 / std::sqrt(two_s);
        const double ds = c.s_clipped ? 0.0 : 1.0;  // ds/dv == ds/dRe δ
        const cplx dkr_dv = rs - (v + d) * (rs * rs * rs) * ds;
        const cplx dkr_ddr = dkr_dv;
        const cplx dkr_ddi{0.0, rs};
        auto re_dot = [](cplx a, cplx b) { return a.real() * b.real() + a.imag() * b.imag(); };

        double gv = re_dot(g_kr, dkr_dv);
        double gdr = re_dot(g_kr, dkr_ddr);
        double gdi = re_dot(g_kr, dkr_ddi);

        const double dp_dv = c.p_clipped ? 0.0 : 2.0 * v;
        const double dp_ddr = c.p_clipped ? 0.0 : -2.0 * d.real();
        const double dp_ddi = c.p_clipped ? 0.0 : -2.0 * d.imag();
        const double dD = 2.0 * ds;
        const double coef = g_ki / (2.0 * c.ki);
        gv += coef * (dp_dv / two_s - c.p * dD / (two_s * two_s));
        gdr += coef * (dp_ddr / two_s - c.p * dD / (two_s * two_s));
        gdi += coef * (dp_ddi / two_s);

        g.v[l] += gv;
        g.delta[l] += cplx{gdr, gdi};
    }
}

double kl_to_prior(const LatentPosterior& post) {
    double kl = 0.0;
    for (std::size_t l = 0; l < post.q(); ++l) {
        const double v = post.v[l];
        const double det = std::max(v * v - std::norm(post.delta[l]), kStabilityClip * kStabilityClip);
        kl += std::norm(post.mu[l]) + v - 0.5 * std::log(det) - 1.0;
    }
    return kl;
}

double kl_prior_literal(const LatentPosterior& post) {
    double kl = clx::norm2(post.mu.span());
    for (std::size_t l = 0; l < post.q(); ++l)
        kl += post.v[l] - 0.5 * std::log(post.v[l] * post.v[l] - std::norm(post.delta[l]));
    return kl;
}

void kl_to_prior_backward(const LatentPosterior& post, double scale, PosteriorGrad& g) {
    const std::size_t q = post.q();
    g.mu.resize(q);
    g.v.resize(q);
    g.delta.resize(q);
    for (std::size_t l = 0; l < q; ++l) {
        const double v = post.v[l];
        const double det_raw = v * v - std::norm(post.delta[l]);
        const bool clipped = !(det_raw > kStabilityClip * kStabilityClip);
        const double det = clipped ? kStabilityClip * kStabilityClip : det_raw;
        g.mu[l] += scale * 2.0 * post.mu[l];
        g.v[l] += scale * (1.0 - (clipped ? 0.0 : v / det));
        if (!clipped) g.delta[l] += scale * post.delta[l] / det;
    }
}

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2 (batch norm)");
    if (!(beta >= 0.0)) throw ConfigError("train: beta must be >= 0");
    if (q == 0) throw ConfigError("train: q must be positive");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train: train_fraction must lie in (0,1)");
}

namespace {

std::vector<LayerSpec> encoder_conv_specs() {
    return {LayerSpec::conv(1, 8, 3, 2), LayerSpec::batch_norm(8), LayerSpec::crelu(),
            LayerSpec::conv(8, 16, 3, 2), LayerSpec::batch_norm(16), LayerSpec::crelu()};
}

std::vector<LayerSpec> encoder_dense_specs(std::size_t m) { return {LayerSpec::dense(4 * m, 32), LayerSpec::crelu()}; }

std::vector<LayerSpec> decoder_conv_specs() {
    return {LayerSpec::batch_norm(16), LayerSpec::crelu(), LayerSpec::conv_transposed(16, 8, 3, 2),
            LayerSpec::batch_norm(8), LayerSpec::crelu(), LayerSpec::conv_transposed(8, 1, 3, 2)};
}

ComplexTensor pack(std::span<const clx::ComplexVector> xs, std::size_t len) {
    ComplexTensor t(xs.size(), 1, len);
    for (std::size_t n = 0; n < xs.size(); ++n) {
        if (xs[n].size() != len) throw ConfigError("input vector has length " + std::to_string(xs[n].size()) +
                                                   ", expected " + std::to_string(len));
        std::copy(xs[n].begin(), xs[n].end(), t.sample(n).begin());
    }
    return t;
}

ComplexTensor pack_latent(std::span<const clx::ComplexVector> zs, std::size_t q) {
    ComplexTensor t(zs.size(), q, 1);
    for (std::size_t n = 0; n < zs.size(); ++n) {
        if (zs[n].size() != q) throw ConfigError("latent has wrong length");
        std::copy(zs[n].begin(), zs[n].end(), t.sample(n).begin());
    }
    return t;
}

bool finite(std::span<const cplx> xs) {
    return std::all_of(xs.begin(), xs.end(), [](cplx v) { return std::isfinite(v.real()) && std::isfinite(v.imag()); });
}

}  // namespace

CvaeModel::CvaeModel(std::size_t m, std::size_t q, double beta, std::uint64_t seed) : m_(m), q_(q), beta_(beta) {
    if (m < 4 || m % 4 != 0) throw ConfigError("CvaeModel: m must be a positive multiple of 4");
    if (q == 0) throw ConfigError("CvaeModel: q must be positive");
    set_beta(beta);
    Stream root(seed);
    Stream s0 = root.child(0), s1 = root.child(1), s2 = root.child(2), s3 = root.child(3), s4 = root.child(4),
           s5 = root.child(5), s6 = root.child(6);
    enc_conv_ = nn::Sequential(encoder_conv_specs(), s0);
    enc_dense_ = nn::Sequential(encoder_dense_specs(m), s1);
    head_mu_ = nn::Sequential({LayerSpec::dense(32, q)}, s2);
    head_v_ = nn::Sequential({LayerSpec::dense(32, q)}, s3);
    head_delta_ = nn::Sequential({LayerSpec::dense(32, q)}, s4);
    dec_dense_ = nn::Sequential({LayerSpec::dense(q, 4 * m)}, s5);
    dec_conv_ = nn::Sequential(decoder_conv_specs(), s6);
}

void CvaeModel::set_beta(double beta) {
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("CvaeModel: beta must be finite and >= 0");
    beta_ = beta;
}

LatentPosterior CvaeModel::posterior_from_heads(const ComplexTensor& mu, const ComplexTensor& v_raw,
                                                const ComplexTensor& d_raw, std::size_t n) const {
    LatentPosterior p{clx::ComplexVector(q_), std::vector<double>(q_), clx::ComplexVector(q_)};
    for (std::size_t l = 0; l < q_; ++l) {
        p.mu[l] = mu(n, l, 0);
        const double v = softplus(v_raw(n, l, 0).real()) + kVarianceFloor;
        p.v[l] = v;
        const cplx r = d_raw(n, l, 0);
        double f, unused;
        tanh_ratio(std::abs(r), f, unused);
        p.delta[l] = kPseudoShrink * v * f * r;
    }
    return p;
}

std::vector<LatentPosterior> CvaeModel::encode_batch(std::span<const clx::ComplexVector> xs) const {
    if (xs.empty()) return {};
    const ComplexTensor x = pack(xs, m_);
    const ComplexTensor h = enc_dense_.infer(enc_conv_.infer(x).reshaped(4 * m_, 1));
    const ComplexTensor mu = head_mu_.infer(h), vr = head_v_.infer(h), dr = head_delta_.infer(h);
    if (!finite(mu.data()) || !finite(vr.data()) || !finite(dr.data()))
        throw NumericError("encode: non-finite activations (model diverged?)");
    std::vector<LatentPosterior> out;
    out.reserve(xs.size());
    for (std::size_t n = 0; n < xs.size(); ++n) out.push_back(posterior_from_heads(mu, vr, dr, n));
    return out;
}

LatentPosterior CvaeModel::encode(const clx::ComplexVector& x) const {
    return encode_batch(std::span<const clx::ComplexVector>(&x, 1)).front();
}

std::vector<clx::ComplexVector> CvaeModel::decode_batch(std::span<const clx::ComplexVector> zs) const {
    if (zs.empty()) return {};
    const ComplexTensor out = dec_conv_.infer(dec_dense_.infer(pack_latent(zs, q_)).reshaped(16, m_ / 4));
    if (!finite(out.data())) throw NumericError("decode: non-finite output (model diverged?)");
    std::vector<clx::ComplexVector> xs;
    xs.reserve(zs.size());
    for (std::size_t n = 0; n < zs.size(); ++n) {
        const auto s = out.sample(n);
        xs.emplace_back(std::vector<cplx>(s.begin(), s.end()));
    }
    return xs;
}

clx::ComplexVector CvaeModel::decode(const clx::ComplexVector& z) const {
    return decode_batch(std::span<const clx::ComplexVector>(&z, 1)).front();
}

BatchLoss CvaeModel::evaluate(std::span<const clx::ComplexVector> batch, const Stream& noise) const {
    if (batch.empty()) throw ConfigError("evaluate: empty batch");
    const auto posts = encode_batch(batch);
    std::vector<clx::ComplexVector> zs;
    zs.reserve(batch.size());
    for (std::size_t n = 0; n < batch.size(); ++n) {
        Stream s = noise.child(n);
        zs.push_back(reparameterize(posts[n], s));
    }
    const auto xh = decode_batch(zs);
    BatchLoss loss;
    for (std::size_t n = 0; n < batch.size(); ++n) {
        double rec = 0.0;
        for (std::size_t k = 0; k < m_; ++k) rec += std::norm(batch[n][k] - xh[n][k]);
        loss.rec += rec;
        loss.kl += kl_to_prior(posts[n]);
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    loss.rec *= inv;
    loss.kl *= inv;
    loss.total = loss.rec + beta_ * loss.kl;
    return loss;
}

BatchLoss CvaeModel::loss_and_grad(std::span<const clx::ComplexVector> batch, const Stream& noise) {
    const std::size_t n_batch = batch.size();
    if (n_batch < 2) throw ConfigError("loss_and_grad: batch must hold at least 2 samples");
    for (auto* p : params()) std::fill(p->grad.begin(), p->grad.end(), cplx{});

    // Forward.
    const ComplexTensor x = pack(batch, m_);
    const ComplexTensor h = enc_dense_.forward(enc_conv_.forward(x).reshaped(4 * m_, 1));
    const ComplexTensor mu = head_mu_.forward(h), vr = head_v_.forward(h), dr = head_delta_.forward(h);

    std::vector<LatentPosterior> posts;
    std::vector<std::vector<double>> eps_r(n_batch), eps_i(n_batch);
    ComplexTensor z(n_batch, q_, 1);
    for (std::size_t n = 0; n < n_batch; ++n) {
        posts.push_back(posterior_from_heads(mu, vr, dr, n));
        Stream s = noise.child(n);
        eps_r[n].resize(q_);
        eps_i[n].resize(q_);
        for (std::size_t l = 0; l < q_; ++l) {
            eps_r[n][l] = s.normal();
            eps_i[n][l] = s.normal();
        }
        const auto zn = reparameterize(posts[n], eps_r[n], eps_i[n]);
        std::copy(zn.begin(), zn.end(), z.sample(n).begin());
    }
    const ComplexTensor xh = dec_conv_.forward(dec_dense_.forward(z).reshaped(16, m_ / 4));

    BatchLoss loss;
    const double inv = 1.0 / static_cast<double>(n_batch);
    ComplexTensor g_xh(n_batch, 1, m_);
    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t k = 0; k < m_; ++k) {
            const cplx r = xh(n, 0, k) - x(n, 0, k);
            loss.rec += std::norm(r);
            g_xh(n, 0, k) = 2.0 * inv * r;
        }
        loss.kl += kl_to_prior(posts[n]);
    }
    loss.rec *= inv;
    loss.kl *= inv;
    loss.total = loss.rec + beta_ * loss.kl;
    if (!std::isfinite(loss.total)) throw NumericError("loss_and_grad: non-finite loss");

    // Backward.
    const ComplexTensor g_z = dec_dense_.backward(dec_conv_.backward(g_xh).reshaped(4 * m_, 1));
    ComplexTensor g_mu(n_batch, q_, 1), g_vr(n_batch, q_, 1), g_dr(n_batch, q_, 1);
    for (std::size_t n = 0; n < n_batch; ++n) {
        PosteriorGrad pg;
        reparameterize_backward(posts[n], eps_r[n], eps_i[n], g_z.sample(n), pg);
        kl_to_prior_backward(posts[n], beta_ * inv, pg);
        for (std::size_t l = 0; l < q_; ++l) {
            g_mu(n, l, 0) = pg.mu[l];
            const double v = posts[n].v[l];
            const cplx r = dr(n, l, 0);
            const double rho = std::abs(r);
            double f, fp_over_rho;
            tanh_ratio(rho, f, fp_over_rho);
            const cplx gd = pg.delta[l];
            const double re_gd_r = gd.real() * r.real() + gd.imag() * r.imag();
            // δ = c·v·f(|r|)·r
            const double gv = pg.v[l] + kPseudoShrink * f * re_gd_r;
            g_dr(n, l, 0) = kPseudoShrink * v * (f * gd + re_gd_r * fp_over_rho * r);
            g_vr(n, l, 0) = {gv * sigmoid(vr(n, l, 0).real()), 0.0};
        }
    }
    ComplexTensor g_h = head_mu_.backward(g_mu);
    const ComplexTensor g_h2 = head_v_.backward(g_vr);
    const ComplexTensor g_h3 = head_delta_.backward(g_dr);
    for (std::size_t i = 0; i < g_h.size(); ++i) g_h.data()[i] += g_h2.data()[i] + g_h3.data()[i];
    enc_conv_.backward(enc_dense_.backward(g_h).reshaped(16, m_ / 4));
    return loss;
}

std::vector<nn::Param*> CvaeModel::params() {
    std::vector<nn::Param*> out;
    for (auto* net : {&enc_conv_, &enc_dense_, &head_mu_, &head_v_, &head_delta_, &dec_dense_, &dec_conv_})
        for (auto* p : net->params()) out.push_back(p);
    return out;
}

std::vector<const nn::Param*> CvaeModel::params() const {
    auto ps = const_cast<CvaeModel*>(this)->params();
    return {ps.begin(), ps.end()};
}

namespace {
constexpr const char* kNetNames[] = {"encoder_conv", "encoder_dense", "head_mu", "head_v",
                                     "head_delta",   "decoder_dense", "decoder_conv"};
}

nn::Checkpoint CvaeModel::to_checkpoint() const {
    nn::Checkpoint ck;
    ck.header = {{"format", "radood-cvae"}, {"m", m_}, {"q", q_}, {"beta", beta_}, {"epochs_trained", epochs_trained_}};
    const nn::Sequential* nets[] = {&enc_conv_, &enc_dense_, &head_mu_, &head_v_, &head_delta_, &dec_dense_, &dec_conv_};
    nlohmann::json layers = nlohmann::json::object();
    for (std::size_t i = 0; i < 7; ++i) {
        layers[kNetNames[i]] = nn::specs_to_json(nets[i]->specs());
        nn::append_payload(*nets[i], ck.payload);
    }
    ck.header["networks"] = layers;
    return ck;
}

CvaeModel CvaeModel::from_checkpoint(const nn::Checkpoint& ck) {
    try {
        if (ck.header.at("format") != "radood-cvae") throw IoError("checkpoint: not a CVAE checkpoint");
        CvaeModel model(ck.header.at("m").get<std::size_t>(), ck.header.at("q").get<std::size_t>(),
                        ck.header.at("beta").get<double>(), 0);
        model.epochs_trained_ = ck.header.at("epochs_trained").get<std::size_t>();
        nn::Sequential* nets[] = {&model.enc_conv_, &model.enc_dense_, &model.head_mu_, &model.head_v_,
                                  &model.head_delta_, &model.dec_dense_, &model.dec_conv_};
        std::size_t off = 0;
        for (std::size_t i = 0; i < 7; ++i) {
            if (nn::specs_from_json(ck.header.at("networks").at(kNetNames[i])) != nets[i]->specs())
                throw IoError(std::string("checkpoint: layer specs of '") + kNetNames[i] + "' differ from the model");
            nn::read_payload(*nets[i], ck.payload, off);
        }
        if (off != ck.payload.size()) throw IoError("checkpoint: payload longer than the model");
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("checkpoint: malformed header: ") + e.what());
    }
}

void CvaeModel::save(const std::filesystem::path& path) const { nn::save_checkpoint(path, to_checkpoint()); }

CvaeModel CvaeModel::load(const std::filesystem::path& path) { return from_checkpoint(nn::load_checkpoint(path)); }

std::string TrainLog::to_csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "epoch,train_loss,val_loss,kl_term,rec_term\n";
    for (const auto& e : epochs)
        os << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.kl_term << ',' << e.rec_term << '\n';
    return os.str();
}

TrainLog train(CvaeModel& model, std::span<const clx::ComplexVector> dataset, const TrainConfig& config,
               const std::function<void(const EpochLog&)>& on_epoch) {
    config.validate();
    if (dataset.size() < 2) throw ConfigError("train: dataset needs at least 2 samples");
    model.set_beta(config.beta);
    const auto n_train = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(config.train_fraction * static_cast<double>(dataset.size()))));
    const auto train_set = dataset.subspan(0, std::min(n_train, dataset.size() - 1));
    const auto val_set = dataset.subspan(train_set.size());
    const Stream root(config.seed);
    const Stream val_noise = root.child({1, 0});
    const nn::AdamConfig adam{config.lr};
    nn::AdamState state;
    auto params = model.params();

    TrainLog log;
    std::vector<std::size_t> order(train_set.size());
    std::vector<clx::ComplexVector> batch;
    for (std::size_t e = 0; e < config.epochs; ++e) {
        const std::size_t epoch = model.epochs_trained() + 1;
        std::iota(order.begin(), order.end(), std::size_t{0});
        Stream shuffle = root.child({2, epoch});
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

        double train_sum = 0.0;
        std::size_t train_count = 0, b = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++b) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            if (end - start < 2) break;
            batch.clear();
            for (std::size_t i = start; i < end; ++i) batch.push_back(train_set[order[i]]);
            BatchLoss l;
            try {
                l = model.loss_and_grad(batch, root.child({3, epoch, b}));
                nn::adam_step(params, state, adam);
            } catch (const NumericError& err) {
                throw TrainingDiverged(epoch, b, err.what());
            }
            train_sum += l.total * static_cast<double>(batch.size());
            train_count += batch.size();
        }

        EpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = train_count ? train_sum / static_cast<double>(train_count) : 0.0;
        const BatchLoss val = model.evaluate(val_set, val_noise);
        if (!std::isfinite(val.total)) throw TrainingDiverged(epoch, b, "non-finite validation loss");
        entry.val_loss = val.total;
        entry.kl_term = val.kl;
        entry.rec_term = val.rec;
        model.set_epochs_trained(epoch);
        log.epochs.push_back(entry);
        if (on_epoch) on_epoch(entry);
    }
    return log;
}

}  // namespace radood::vae
