#include "radood/cvnn.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include <zlib.h>

#include "radood/error.hpp"

namespace radood::nn {

ComplexTensor::ComplexTensor(std::size_t batch, std::size_t channels, std::size_t length)
    : batch_(batch), channels_(channels), length_(length), data_(batch * channels * length) {}

ComplexTensor ComplexTensor::reshaped(std::size_t channels, std::size_t length) const {
    if (channels * length != features()) throw ConfigError("reshape: feature count changes");
    ComplexTensor out = *this;
    out.channels_ = channels;
    out.length_ = length;
    return out;
}

std::string to_string(LayerKind k) {
    switch (k) {
        case LayerKind::complex_dense: return "complex_dense";
        case LayerKind::complex_conv1d: return "complex_conv1d";
        case LayerKind::complex_conv1d_transposed: return "complex_conv1d_transposed";
        case LayerKind::complex_batch_norm: return "complex_batch_norm";
        case LayerKind::crelu: return "crelu";
    }
    return "?";
}

LayerKind layer_kind_from_string(const std::string& s) {
    for (auto k : {LayerKind::complex_dense, LayerKind::complex_conv1d, LayerKind::complex_conv1d_transposed,
                   LayerKind::complex_batch_norm, LayerKind::crelu})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown layer kind '" + s + "'");
}

void LayerSpec::validate() const {
    if (kind == LayerKind::crelu) return;
    if (in == 0 || out == 0 || kernel == 0 || stride == 0) throw ConfigError("layer spec: sizes must be positive");
    if (kind == LayerKind::complex_batch_norm && in != out) throw ConfigError("batch norm: in != out");
}

std::size_t LayerSpec::output_length(std::size_t length) const {
    const std::size_t pad = padding();
    switch (kind) {
        case LayerKind::complex_dense: return 1;
        case LayerKind::complex_conv1d:
            if (length + 2 * pad < kernel) throw ConfigError("conv1d: input shorter than kernel");
            return (length + 2 * pad - kernel) / stride + 1;
        case LayerKind::complex_conv1d_transposed:
            if (length == 0 || (length - 1) * stride + kernel + stride - 1 < 2 * pad)
                throw ConfigError("conv1d_transposed: empty output");
            return (length - 1) * stride + kernel + (stride - 1) - 2 * pad;
        default: return length;
    }
}

std::vector<const Param*> Layer::params() const {
    auto ps = const_cast<Layer*>(this)->params();
    return {ps.begin(), ps.end()};
}

std::vector<const std::vector<cplx>*> Layer::buffers() const {
    auto bs = const_cast<Layer*>(this)->buffers();
    return {bs.begin(), bs.end()};
}

void Layer::check_input(const ComplexTensor& x) const {
    const auto& s = spec();
    const bool ok = s.kind == LayerKind::crelu || (s.kind == LayerKind::complex_dense ? x.features() == s.in
                                                                                       : x.channels() == s.in);
    if (!ok || x.batch() == 0)
        throw ConfigError(to_string(s.kind) + ": input shape [" + std::to_string(x.batch()) + "," +
                          std::to_string(x.channels()) + "," + std::to_string(x.length()) + "] does not match in=" +
                          std::to_string(s.in));
}

cplx crelu(cplx v) { return {v.real() > 0.0 ? v.real() : 0.0, v.imag() > 0.0 ? v.imag() : 0.0}; }

namespace {

void init_weights(Param& p, std::size_t fan_in, Stream& rng) {
    const double sd = std::sqrt(1.0 / (2.0 * static_cast<double>(fan_in)));
    for (auto& w : p.value) {
        const double re = rng.normal();
        const double im = rng.normal();
        w = {sd * re, sd * im};
    }
}

Param make_param(std::string name, std::size_t n) { return {std::move(name), std::vector<cplx>(n), std::vector<cplx>(n)}; }

[[noreturn]] void no_tape(const LayerSpec& s) {
    throw std::logic_error(to_string(s.kind) + ": backward called before forward");
}

class Dense final : public Layer {
  public:
    Dense(const LayerSpec& s, Stream& rng)
        : Layer(s), w_(make_param("weight", s.out * s.in)), b_(make_param("bias", s.out)) {
        init_weights(w_, s.in, rng);
    }

    ComplexTensor infer(const ComplexTensor& x) const override {
        check_input(x);
        const std::size_t in = spec().in, out = spec().out;
        ComplexTensor y(x.batch(), out, 1);
        for (std::size_t n = 0; n < x.batch(); ++n) {
            const auto xs = x.sample(n);
            auto ys = y.sample(n);
            for (std::size_t o = 0; o < out; ++o) {
                cplx s = b_.value[o];
                const cplx* w = &w_.value[o * in];
                for (std::size_t i = 0; i < in; ++i) s += w[i] * xs[i];
                ys[o] = s;
            }
        }
        return y;
    }

    ComplexTensor forward(const ComplexTensor& x) override {
        input_ = x;
        has_tape_ = true;
        return infer(x);
    }

    ComplexTensor backward(const ComplexTensor& g) override {
        if (!has_tape_) no_tape(spec());
        const std::size_t in = spec().in, out = spec().out;
        ComplexTensor gx(input_.batch(), input_.channels(), input_.length());
        for (std::size_t n = 0; n < input_.batch(); ++n) {
            const auto xs = input_.sample(n);
            const auto gs = g.sample(n);
            auto gxs = gx.sample(n);
            for (std::size_t o = 0; o < out; ++o) {
                const cplx go = gs[o];
                b_.grad[o] += go;
                cplx* gw = &w_.grad[o * in];
                const cplx* w = &w_.value[o * in];
                for (std::size_t i = 0; i < in; ++i) {
                    gw[i] += go * std::conj(xs[i]);
                    gxs[i] += std::conj(w[i]) * go;
                }
            }
        }
        return gx;
    }

    std::vector<Param*> params() override { return {&w_, &b_}; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }

  private:
    Param w_, b_;
    ComplexTensor input_;
    bool has_tape_ = false;
};

/// y[n,o,t] = b[o] + Σ_c Σ_k W[o,c,k]·x[n,c,t·s + k - p]
class Conv1d final : public Layer {
  public:
    Conv1d(const LayerSpec& s, Stream& rng)
        : Layer(s), w_(make_param("weight", s.out * s.in * s.kernel)), b_(make_param("bias", s.out)) {
        init_weights(w_, s.in * s.kernel, rng);
    }

    ComplexTensor infer(const ComplexTensor& x) const override {
        check_input(x);
        const auto& s = spec();
        const std::size_t lin = x.length(), lout = s.output_length(lin);
        const auto pad = static_cast<std::ptrdiff_t>(s.padding());
        ComplexTensor y(x.batch(), s.out, lout);
        for (std::size_t n = 0; n < x.batch(); ++n)
            for (std::size_t o = 0; o < s.out; ++o)
                for (std::size_t t = 0; t < lout; ++t) {
                    cplx acc = b_.value[o];
                    for (std::size_t c = 0; c < s.in; ++c)
                        for (std::size_t k = 0; k < s.kernel; ++k) {
                            const auto idx = static_cast<std::ptrdiff_t>(t * s.stride + k) - pad;
                            if (idx < 0 || idx >= static_cast<std::ptrdiff_t>(lin)) continue;
                            acc += w_.value[(o * s.in + c) * s.kernel + k] * x(n, c, static_cast<std::size_t>(idx));
                        }
                    y(n, o, t) = acc;
                }
        return y;
    }

    ComplexTensor forward(const ComplexTensor& x) override {
        input_ = x;
        has_tape_ = true;
        return infer(x);
    }

    ComplexTensor backward(const ComplexTensor& g) override {
        if (!has_tape_) no_tape(spec());
        const auto& s = spec();
        const std::size_t lin = input_.length(), lout = g.length();
        const auto pad = static_cast<std::ptrdiff_t>(s.padding());
        ComplexTensor gx(input_.batch(), input_.channels(), lin);
        for (std::size_t n = 0; n < input_.batch(); ++n)
            for (std::size_t o = 0; o < s.out; ++o)
                for (std::size_t t = 0; t < lout; ++t) {
                    const cplx go = g(n, o, t);
                    b_.grad[o] += go;
                    for (std::size_t c = 0; c < s.in; ++c)
                        for (std::size_t k = 0; k < s.kernel; ++k) {
                            const auto idx = static_cast<std::ptrdiff_t>(t * s.stride + k) - pad;
                            if (idx < 0 || idx >= static_cast<std::ptrdiff_t>(lin)) continue;
                            const auto i = static_cast<std::size_t>(idx);
                            const std::size_t wi = (o * s.in + c) * s.kernel + k;
                            w_.grad[wi] += go * std::conj(input_(n, c, i));
                            gx(n, c, i) += std::conj(w_.value[wi]) * go;
                        }
                }
        return gx;
    }

    std::vector<Param*> params() override { return {&w_, &b_}; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv1d>(*this); }

  private:
    Param w_, b_;
    ComplexTensor input_;
    bool has_tape_ = false;
};

/// Adjoint geometry of Conv1d: input position i and tap k scatter to output
/// position i·s + k - p. Weights are laid out [in, out, kernel].
class ConvTranspose1d final : public Layer {
  public:
    ConvTranspose1d(const LayerSpec& s, Stream& rng)
        : Layer(s), w_(make_param("weight", s.in * s.out * s.kernel)), b_(make_param("bias", s.out)) {
        init_weights(w_, s.in * s.kernel, rng);
    }

    ComplexTensor infer(const ComplexTensor& x) const override {
        check_input(x);
        const auto& s = spec();
        const std::size_t lin = x.length(), lout = s.output_length(lin);
        const auto pad = static_cast<std::ptrdiff_t>(s.padding());
        ComplexTensor y(x.batch(), s.out, lout);
        for (std::size_t n = 0; n < x.batch(); ++n) {
            for (std::size_t o = 0; o < s.out; ++o)
                for (std::size_t j = 0; j < lout; ++j) y(n, o, j) = b_.value[o];
            for (std::size_t c = 0; c < s.in; ++c)
                for (std::size_t i = 0; i < lin; ++i) {
                    const cplx xv = x(n, c, i);
                    for (std::size_t k = 0; k < s.kernel; ++k) {
                        const auto j = static_cast<std::ptrdiff_t>(i * s.stride + k) - pad;
                        if (j < 0 || j >= static_cast<std::ptrdiff_t>(lout)) continue;
                        for (std::size_t o = 0; o < s.out; ++o)
                            y(n, o, static_cast<std::size_t>(j)) += w_.value[(c * s.out + o) * s.kernel + k] * xv;
                    }
                }
        }
        return y;
    }

    ComplexTensor forward(const ComplexTensor& x) override {
        input_ = x;
        has_tape_ = true;
        return infer(x);
    }

    ComplexTensor backward(const ComplexTensor& g) override {
        if (!has_tape_) no_tape(spec());
        const auto& s = spec();
        const std::size_t lin = input_.length(), lout = g.length();
        const auto pad = static_cast<std::ptrdiff_t>(s.padding());
        ComplexTensor gx(input_.batch(), input_.channels(), lin);
        for (std::size_t n = 0; n < input_.batch(); ++n) {
            for (std::size_t o = 0; o < s.out; ++o)
                for (std::size_t j = 0; j < lout; ++j) b_.grad[o] += g(n, o, j);
            for (std::size_t c = 0; c < s.in; ++c)
                for (std::size_t i = 0; i < lin; ++i) {
                    const cplx xv = input_(n, c, i);
                    cplx gxi = 0.0;
                    for (std::size_t k = 0; k < s.kernel; ++k) {
                        const auto j = static_cast<std::ptrdiff_t>(i * s.stride + k) - pad;
                        if (j < 0 || j >= static_cast<std::ptrdiff_t>(lout)) continue;
                        for (std::size_t o = 0; o < s.out; ++o) {
                            const cplx go = g(n, o, static_cast<std::size_t>(j));
                            const std::size_t wi = (c * s.out + o) * s.kernel + k;
                            w_.grad[wi] += go * std::conj(xv);
                            gxi += std::conj(w_.value[wi]) * go;
                        }
                    }
                    gx(n, c, i) = gxi;
                }
        }
        return gx;
    }

    std::vector<Param*> params() override { return {&w_, &b_}; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<ConvTranspose1d>(*this); }

  private:
    Param w_, b_;
    ComplexTensor input_;
    bool has_tape_ = false;
};

class CRelu final : public Layer {
  public:
    explicit CRelu(const LayerSpec& s) : Layer(s) {}

    ComplexTensor infer(const ComplexTensor& x) const override {
        ComplexTensor y = x;
        for (auto& v : y.data()) v = crelu(v);
        return y;
    }

    ComplexTensor forward(const ComplexTensor& x) override {
        input_ = x;
        has_tape_ = true;
        return infer(x);
    }

    ComplexTensor backward(const ComplexTensor& g) override {
        if (!has_tape_) no_tape(spec());
        ComplexTensor gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const cplx x = input_.data()[i];
            gx.data()[i] = {x.real() > 0.0 ? g.data()[i].real() : 0.0, x.imag() > 0.0 ? g.data()[i].imag() : 0.0};
        }
        return gx;
    }

    std::unique_ptr<Layer> clone() const override { return std::make_unique<CRelu>(*this); }

  private:
    ComplexTensor input_;
    bool has_tape_ = false;
};

// Symmetric 2x2 real matrix [[a, b], [b, d]].
struct Sym2 {
    double a, b, d;
};

struct Mat2 {
    double m00, m01, m10, m11;
};

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

struct Whitening {
    Sym2 inv_sqrt;  // V^{-1/2}
    Sym2 sqrt;      // V^{1/2}
};

Whitening whitening(Sym2 v) {
    const double s = std::sqrt(v.a * v.d - v.b * v.b);
    const double t = std::sqrt(v.a + v.d + 2.0 * s);
    return {{(v.d + s) / (s * t), -v.b / (s * t), (v.a + s) / (s * t)}, {(v.a + s) / t, v.b / t, (v.d + s) / t}};
}

// Solves S·C + C·S = B for general C, S symmetric positive definite.
Mat2 solve_sylvester(Sym2 s, Mat2 rhs) {
    double m[4][5] = {{2 * s.a, s.b, s.b, 0, rhs.m00},
                      {s.b, s.a + s.d, 0, s.b, rhs.m01},
                      {s.b, 0, s.a + s.d, s.b, rhs.m10},
                      {0, s.b, s.b, 2 * s.d, rhs.m11}};
    // unknowns ordered c00, c01, c10, c11
    for (int col = 0; col < 4; ++col) {
        int piv = col;
        for (int r = col + 1; r < 4; ++r)
            if (std::abs(m[r][col]) > std::abs(m[piv][col])) piv = r;
        for (int k = 0; k < 5; ++k) std::swap(m[col][k], m[piv][k]);
        for (int r = 0; r < 4; ++r) {
            if (r == col) continue;
            const double f = m[r][col] / m[col][col];
            for (int k = col; k < 5; ++k) m[r][k] -= f * m[col][k];
        }
    }
    return {m[0][4] / m[0][0], m[1][4] / m[1][1], m[2][4] / m[2][2], m[3][4] / m[3][3]};
}

/// Per channel: center, whiten the (re, im) pair with V^{-1/2}, then apply
/// the symmetric affine Γ and shift β. Statistics pool batch and length.
///
/// Parameters: gamma packs (γ_rr, γ_ii) as one complex and γ_ri as the real
/// part of a second entry; beta is complex.
class ComplexBatchNorm final : public Layer {
  public:
    explicit ComplexBatchNorm(const LayerSpec& s)
        : Layer(s),
          gamma_diag_(make_param("gamma_diag", s.in)),
          gamma_off_(make_param("gamma_off", s.in)),
          beta_(make_param("beta", s.in)),
          running_mean_(s.in),
          running_var_(s.in, cplx{1.0, 1.0}),
          running_cov_(s.in) {
        for (auto& g : gamma_diag_.value) g = {1.0, 1.0};
    }

    ComplexTensor infer(const ComplexTensor& x) const override {
        check_input(x);
        ComplexTensor y(x.batch(), x.channels(), x.length());
        for (std::size_t c = 0; c < x.channels(); ++c) {
            const Sym2 v{running_var_[c].real() + kBnEps, running_cov_[c].real(), running_var_[c].imag() + kBnEps};
            const Sym2 w = whitening(v).inv_sqrt;
            const cplx mean = running_mean_[c];
            for (std::size_t n = 0; n < x.batch(); ++n)
                for (std::size_t t = 0; t < x.length(); ++t) {
                    const cplx u = x(n, c, t) - mean;
                    y(n, c, t) = affine(c, w.a * u.real() + w.b * u.imag(), w.b * u.real() + w.d * u.imag());
                }
        }
        return y;
    }

    ComplexTensor forward(const ComplexTensor& x) override {
        check_input(x);
        if (x.batch() < 2) throw ConfigError("complex_batch_norm: training mode needs a batch of at least 2");
        const std::size_t count = x.batch() * x.length();
        const double inv = 1.0 / static_cast<double>(count);
        centered_ = ComplexTensor(x.batch(), x.channels(), x.length());
        whitened_ = ComplexTensor(x.batch(), x.channels(), x.length());
        stats_.assign(x.channels(), {});
        ComplexTensor y(x.batch(), x.channels(), x.length());
        for (std::size_t c = 0; c < x.channels(); ++c) {
            cplx mean = 0.0;
            for (std::size_t n = 0; n < x.batch(); ++n)
                for (std::size_t t = 0; t < x.length(); ++t) mean += x(n, c, t);
            mean *= inv;
            double vrr = 0.0, vri = 0.0, vii = 0.0;
            for (std::size_t n = 0; n < x.batch(); ++n)
                for (std::size_t t = 0; t < x.length(); ++t) {
                    const cplx u = x(n, c, t) - mean;
                    centered_(n, c, t) = u;
                    vrr += u.real() * u.real();
                    vri += u.real() * u.imag();
                    vii += u.imag() * u.imag();
                }
            vrr *= inv;
            vri *= inv;
            vii *= inv;
            const Whitening wh = whitening({vrr + kBnEps, vri, vii + kBnEps});
            stats_[c] = wh;
            const Sym2 w = wh.inv_sqrt;
            for (std::size_t n = 0; n < x.batch(); ++n)
                for (std::size_t t = 0; t < x.length(); ++t) {
                    const cplx u = centered_(n, c, t);
                    const double yr = w.a * u.real() + w.b * u.imag();
                    const double yi = w.b * u.real() + w.d * u.imag();
                    whitened_(n, c, t) = {yr, yi};
                    y(n, c, t) = affine(c, yr, yi);
                }
            running_mean_[c] = (1.0 - kBnMomentum) * running_mean_[c] + kBnMomentum * mean;
            running_var_[c] = (1.0 - kBnMomentum) * running_var_[c] + kBnMomentum * cplx{vrr, vii};
            running_cov_[c] = (1.0 - kBnMomentum) * running_cov_[c] + kBnMomentum * cplx{vri, 0.0};
        }
        has_tape_ = true;
        return y;
    }

    ComplexTensor backward(const ComplexTensor& g) override {
        if (!has_tape_) no_tape(spec());
        const std::size_t count = centered_.batch() * centered_.length();
        const double inv = 1.0 / static_cast<double>(count);
        ComplexTensor gx(centered_.batch(), centered_.channels(), centered_.length());
        for (std::size_t c = 0; c < centered_.channels(); ++c) {
            const double gam_rr = gamma_diag_.value[c].real(), gam_ii = gamma_diag_.value[c].imag();
            const double gam_ri = gamma_off_.value[c].real();
            const Sym2 w = stats_[c].inv_sqrt;
            // dL/dW accumulated as a general 2x2 (A = Σ gy·cᵀ).
            Mat2 a{0, 0, 0, 0};
            cplx gbeta = 0.0;
            double g_rr = 0.0, g_ii = 0.0, g_ri = 0.0;
            for (std::size_t n = 0; n < centered_.batch(); ++n)
                for (std::size_t t = 0; t < centered_.length(); ++t) {
                    const cplx go = g(n, c, t);
                    const cplx yw = whitened_(n, c, t);
                    const cplx u = centered_(n, c, t);
                    gbeta += go;
                    g_rr += go.real() * yw.real();
                    g_ii += go.imag() * yw.imag();
                    g_ri += go.real() * yw.imag() + go.imag() * yw.real();
                    const double gyr = gam_rr * go.real() + gam_ri * go.imag();
                    const double gyi = gam_ri * go.real() + gam_ii * go.imag();
                    a.m00 += gyr * u.real();
                    a.m01 += gyr * u.imag();
                    a.m10 += gyi * u.real();
                    a.m11 += gyi * u.imag();
                    // Direct path through y = W·c.
                    gx(n, c, t) = {w.a * gyr + w.b * gyi, w.b * gyr + w.d * gyi};
                }
            beta_.grad[c] += gbeta;
            gamma_diag_.grad[c] += cplx{g_rr, g_ii};
            gamma_off_.grad[c] += cplx{g_ri, 0.0};

            // W = S^{-1}: dL/dS = -W·A·W; then S·C + C·S = dL/dS gives dL/dV = C.
            const Mat2 wa{w.a * a.m00 + w.b * a.m10, w.a * a.m01 + w.b * a.m11, w.b * a.m00 + w.d * a.m10,
                          w.b * a.m01 + w.d * a.m11};
            const Mat2 waw{-(wa.m00 * w.a + wa.m01 * w.b), -(wa.m00 * w.b + wa.m01 * w.d),
                           -(wa.m10 * w.a + wa.m11 * w.b), -(wa.m10 * w.b + wa.m11 * w.d)};
            const Mat2 cv = solve_sylvester(stats_[c].sqrt, waw);
            // V = (1/N) Σ u uᵀ: dL/du += (1/N)(C + Cᵀ)·u.
            const double s00 = 2.0 * cv.m00 * inv, s01 = (cv.m01 + cv.m10) * inv, s11 = 2.0 * cv.m11 * inv;
            cplx gsum = 0.0;
            for (std::size_t n = 0; n < centered_.batch(); ++n)
                for (std::size_t t = 0; t < centered_.length(); ++t) {
                    const cplx u = centered_(n, c, t);
                    gx(n, c, t) += cplx{s00 * u.real() + s01 * u.imag(), s01 * u.real() + s11 * u.imag()};
                    gsum += gx(n, c, t);
                }
            // Centering: subtract the mean gradient.
            const cplx gmean = gsum * inv;
            for (std::size_t n = 0; n < centered_.batch(); ++n)
                for (std::size_t t = 0; t < centered_.length(); ++t) gx(n, c, t) -= gmean;
        }
        return gx;
    }

    std::vector<Param*> params() override { return {&gamma_diag_, &gamma_off_, &beta_}; }
    std::vector<std::vector<cplx>*> buffers() override { return {&running_mean_, &running_var_, &running_cov_}; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<ComplexBatchNorm>(*this); }

  private:
    cplx affine(std::size_t c, double yr, double yi) const {
        const double grr = gamma_diag_.value[c].real(), gii = gamma_diag_.value[c].imag();
        const double gri = gamma_off_.value[c].real();
        return cplx{grr * yr + gri * yi, gri * yr + gii * yi} + beta_.value[c];
    }

    Param gamma_diag_, gamma_off_, beta_;
    std::vector<cplx> running_mean_;
    std::vector<cplx> running_var_;  // (V_rr, V_ii)
    std::vector<cplx> running_cov_;  // (V_ri, 0)
    ComplexTensor centered_, whitened_;
    std::vector<Whitening> stats_;
    bool has_tape_ = false;
};

}  // namespace

std::unique_ptr<Layer> make_layer(const LayerSpec& spec, Stream& rng) {
    spec.validate();
    switch (spec.kind) {
        case LayerKind::complex_dense: return std::make_unique<Dense>(spec, rng);
        case LayerKind::complex_conv1d: return std::make_unique<Conv1d>(spec, rng);
        case LayerKind::complex_conv1d_transposed: return std::make_unique<ConvTranspose1d>(spec, rng);
        case LayerKind::complex_batch_norm: return std::make_unique<ComplexBatchNorm>(spec);
        case LayerKind::crelu: return std::make_unique<CRelu>(spec);
    }
    throw ConfigError("make_layer: unknown kind");
}

Sequential::Sequential(const std::vector<LayerSpec>& specs, Stream& rng) {
    for (const auto& s : specs) layers_.push_back(make_layer(s, rng));
}

Sequential::Sequential(const Sequential& other) {
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
    if (this != &other) {
        Sequential tmp(other);
        *this = std::move(tmp);
    }
    return *this;
}

void Sequential::push(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

ComplexTensor Sequential::infer(const ComplexTensor& x) const {
    ComplexTensor h = x;
    for (const auto& l : layers_) h = l->infer(h);
    return h;
}

ComplexTensor Sequential::forward(const ComplexTensor& x) {
    ComplexTensor h = x;
    for (auto& l : layers_) h = l->forward(h);
    return h;
}

ComplexTensor Sequential::backward(const ComplexTensor& grad_out) {
    ComplexTensor g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
}

std::vector<Param*> Sequential::params() {
    std::vector<Param*> out;
    for (auto& l : layers_)
        for (auto* p : l->params()) out.push_back(p);
    return out;
}

std::vector<const Param*> Sequential::params() const {
    std::vector<const Param*> out;
    for (const auto& l : layers_)
        for (const auto* p : static_cast<const Layer&>(*l).params()) out.push_back(p);
    return out;
}

std::vector<std::vector<cplx>*> Sequential::buffers() {
    std::vector<std::vector<cplx>*> out;
    for (auto& l : layers_)
        for (auto* b : l->buffers()) out.push_back(b);
    return out;
}

std::vector<const std::vector<cplx>*> Sequential::buffers() const {
    std::vector<const std::vector<cplx>*> out;
    for (const auto& l : layers_)
        for (const auto* b : static_cast<const Layer&>(*l).buffers()) out.push_back(b);
    return out;
}

std::vector<LayerSpec> Sequential::specs() const {
    std::vector<LayerSpec> out;
    for (const auto& l : layers_) out.push_back(l->spec());
    return out;
}

void Sequential::zero_grad() {
    for (auto* p : params()) std::fill(p->grad.begin(), p->grad.end(), cplx{});
}

void adam_step(const std::vector<Param*>& params, AdamState& state, const AdamConfig& cfg) {
    for (const auto* p : params)
        for (const auto& g : p->grad)
            if (!std::isfinite(g.real()) || !std::isfinite(g.imag()))
                throw NumericError("adam_step: non-finite gradient in '" + p->name + "'");
    if (state.m.size() != params.size()) {
        state.m.clear();
        state.v.clear();
        for (const auto* p : params) {
            state.m.emplace_back(p->value.size());
            state.v.emplace_back(p->value.size());
        }
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    auto update = [&](double& theta, double& m, double& v, double g) {
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        theta -= cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
    };
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Param& p = *params[pi];
        if (state.m[pi].size() != p.value.size()) throw ConfigError("adam_step: state shape mismatch");
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            double re = p.value[i].real(), im = p.value[i].imag();
            double mr = state.m[pi][i].real(), mi = state.m[pi][i].imag();
            double vr = state.v[pi][i].real(), vi = state.v[pi][i].imag();
            update(re, mr, vr, p.grad[i].real());
            update(im, mi, vi, p.grad[i].imag());
            p.value[i] = {re, im};
            state.m[pi][i] = {mr, mi};
            state.v[pi][i] = {vr, vi};
        }
    }
}

nlohmann::json specs_to_json(const std::vector<LayerSpec>& specs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : specs)
        arr.push_back({{"kind", to_string(s.kind)}, {"in", s.in}, {"out", s.out}, {"kernel", s.kernel}, {"stride", s.stride}});
    return arr;
}

std::vector<LayerSpec> specs_from_json(const nlohmann::json& j) {
    std::vector<LayerSpec> out;
    for (const auto& e : j) {
        LayerSpec s{layer_kind_from_string(e.at("kind").get<std::string>()), e.at("in").get<std::size_t>(),
                    e.at("out").get<std::size_t>(), e.at("kernel").get<std::size_t>(), e.at("stride").get<std::size_t>()};
        s.validate();
        out.push_back(s);
    }
    return out;
}

void append_payload(const Sequential& net, std::vector<float>& out) {
    for (const auto* p : net.params())
        for (const auto& v : p->value) {
            out.push_back(static_cast<float>(v.real()));
            out.push_back(static_cast<float>(v.imag()));
        }
    for (const auto* b : net.buffers())
        for (const auto& v : *b) {
            out.push_back(static_cast<float>(v.real()));
            out.push_back(static_cast<float>(v.imag()));
        }
}

void read_payload(Sequential& net, const std::vector<float>& in, std::size_t& offset) {
    auto take = [&](std::vector<cplx>& dst) {
        if (offset + 2 * dst.size() > in.size()) throw IoError("checkpoint: payload too short for network");
        for (auto& v : dst) {
            v = {in[offset], in[offset + 1]};
            offset += 2;
        }
    };
    for (auto* p : net.params()) take(p->value);
    for (auto* b : net.buffers()) take(*b);
}

namespace {

constexpr char kCkMagic[4] = {'R', 'D', 'C', 'K'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename T>
T get_le(const std::uint8_t* p) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
    return v;
}

std::uint32_t crc(const std::uint8_t* data, std::size_t n) {
    uLong c = crc32(0L, Z_NULL, 0);
    return static_cast<std::uint32_t>(crc32(c, data, static_cast<uInt>(n)));
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
    const std::string header = ck.header.dump();
    std::vector<std::uint8_t> out(std::begin(kCkMagic), std::end(kCkMagic));
    put_le<std::uint32_t>(out, Checkpoint::kVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
    out.insert(out.end(), header.begin(), header.end());
    put_le<std::uint64_t>(out, ck.payload.size());
    for (float f : ck.payload) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
    put_le<std::uint32_t>(out, crc(out.data(), out.size()));
    return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 24 || std::memcmp(bytes.data(), kCkMagic, 4) != 0) throw IoError("checkpoint: bad magic");
    const auto stored = get_le<std::uint32_t>(bytes.data() + bytes.size() - 4);
    if (crc(bytes.data(), bytes.size() - 4) != stored) throw IoError("checkpoint: checksum mismatch");
    const auto version = get_le<std::uint32_t>(bytes.data() + 4);
    if (version != Checkpoint::kVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
    const auto hlen = get_le<std::uint32_t>(bytes.data() + 8);
    std::size_t off = 12;
    if (off + hlen + 8 + 4 > bytes.size()) throw IoError("checkpoint: truncated header");
    Checkpoint ck;
    try {
        ck.header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                                          bytes.begin() + static_cast<std::ptrdiff_t>(off + hlen));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("checkpoint: header is not JSON: ") + e.what());
    }
    off += hlen;
    const auto count = get_le<std::uint64_t>(bytes.data() + off);
    off += 8;
    if (off + count * 4 + 4 != bytes.size()) throw IoError("checkpoint: payload length mismatch");
    ck.payload.resize(count);
    for (auto& f : ck.payload) {
        f = std::bit_cast<float>(get_le<std::uint32_t>(bytes.data() + off));
        off += 4;
    }
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    const auto bytes = encode_checkpoint(ck);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write to '" + path.string() + "' failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace radood::nn
