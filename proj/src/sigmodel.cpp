#include "radood/sigmodel.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>

namespace radood::sig {

std::string to_string(ClutterKind k) { return k == ClutterKind::cgn ? "cGN" : "cCGN"; }

ClutterKind clutter_kind_from_string(const std::string& s) {
    if (s == "cGN" || s == "cgn") return ClutterKind::cgn;
    if (s == "cCGN" || s == "ccgn") return ClutterKind::ccgn;
    throw ConfigError("unknown clutter kind '" + s + "' (expected cGN or cCGN)");
}

void Scenario::validate() const {
    if (m < 2) throw ConfigError("scenario: m must be >= 2");
    if (!(std::abs(rho) < 1.0)) throw ConfigError("scenario: |rho| must be < 1");
    if (!(texture_shape > 0.0) || !std::isfinite(texture_shape))
        throw ConfigError("scenario: texture_shape must be a positive finite number");
    if (doppler_bin >= m) throw ConfigError("scenario: doppler_bin must lie in [0, m)");
    if (std::isnan(cnr_db) || cnr_db == -std::numeric_limits<double>::infinity())
        throw ConfigError("scenario: cnr_db must be a number or +inf");
    if (std::isnan(snr_db) || snr_db == std::numeric_limits<double>::infinity())
        throw ConfigError("scenario: snr_db must be a number or -inf");
}

double Scenario::noise_power() const { return std::isinf(cnr_db) ? 0.0 : std::pow(10.0, -cnr_db / 10.0); }

double Scenario::snr_linear() const { return std::isinf(snr_db) ? 0.0 : std::pow(10.0, snr_db / 10.0); }

clx::ComplexVector steering_vector(std::size_t m, std::size_t d) {
    if (m == 0 || d >= m) throw ConfigError("steering_vector: need 0 <= d < m");
    clx::ComplexVector p(m);
    for (std::size_t k = 0; k < m; ++k) {
        // Reduce d·k mod m first so the phase stays exact for the quarter-turn cases.
        const auto r = static_cast<double>((d * k) % m);
        const double t = 2.0 * std::numbers::pi * r / static_cast<double>(m);
        if (4 * ((d * k) % m) % m == 0) {
            const auto quarter = 4 * ((d * k) % m) / m;
            static constexpr cplx kQuarter[4] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
            p[k] = kQuarter[quarter];
        } else {
            p[k] = std::polar(1.0, t);
        }
    }
    return p;
}

cplx target_amplitude(double snr_db, std::size_t m, double phase) {
    const double snr = std::isinf(snr_db) && snr_db < 0 ? 0.0 : std::pow(10.0, snr_db / 10.0);
    const double mag = std::sqrt(snr) / std::sqrt(static_cast<double>(m));
    const double t = 2.0 * std::numbers::pi * phase;
    if (phase == 0.0) return {mag, 0.0};
    if (phase == 0.5) return {-mag, 0.0};
    return std::polar(mag, t);
}

cplx target_amplitude(double snr_db, std::size_t m, Stream& rng) { return target_amplitude(snr_db, m, rng.uniform()); }

ClutterSampler::ClutterSampler(const Scenario& scenario)
    : scenario_(scenario), noise_std_(std::sqrt(scenario.noise_power())) {
    scenario_.validate();
    lower_ = clx::cholesky(clx::toeplitz(scenario_.rho, scenario_.m));
}

clx::ComplexVector ClutterSampler::draw(Stream& rng) const {
    const std::size_t m = scenario_.m;
    double amp = 1.0;
    if (scenario_.clutter_kind == ClutterKind::ccgn) {
        const double mu = scenario_.texture_shape;
        amp = std::sqrt(rng.gamma(mu, 1.0 / mu));
    }
    std::vector<cplx> w(m);
    for (auto& v : w) v = rng.complex_normal();
    clx::ComplexVector x(m);
    for (std::size_t i = 0; i < m; ++i) {
        cplx s = 0.0;
        for (std::size_t k = 0; k <= i; ++k) s += lower_(i, k) * w[k];
        x[i] = amp * s;
    }
    if (noise_std_ > 0.0)
        for (std::size_t i = 0; i < m; ++i) x[i] += noise_std_ * rng.complex_normal();
    return x;
}

SampleBatch sample_clutter(const Scenario& scenario, std::size_t n, const Stream& rng) {
    if (n == 0) throw ConfigError("sample_clutter: n must be positive");
    const ClutterSampler sampler(scenario);
    SampleBatch batch{{}, Label::h0, scenario};
    batch.signals.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Stream s = rng.child(i);
        batch.signals.push_back(sampler.draw(s));
    }
    return batch;
}

clx::ComplexVector add_target(const clx::ComplexVector& x, const Scenario& scenario, double phase) {
    const cplx alpha = target_amplitude(scenario.snr_db, scenario.m, phase);
    if (alpha == cplx{}) return x;
    const auto p = steering_vector(scenario.m, scenario.doppler_bin);
    clx::ComplexVector y = x;
    for (std::size_t k = 0; k < y.size(); ++k) y[k] += alpha * p[k];
    return y;
}

SampleBatch inject_target(const SampleBatch& batch, const Scenario& scenario, const Stream& rng) {
    if (batch.label != Label::h0) throw ConfigError("inject_target: batch must be labelled H0");
    scenario.validate();
    SampleBatch out{{}, Label::h1, scenario};
    out.signals.reserve(batch.signals.size());
    for (std::size_t i = 0; i < batch.signals.size(); ++i) {
        if (batch.signals[i].size() != scenario.m) throw ConfigError("inject_target: signal length != scenario.m");
        Stream s = rng.child(i);
        out.signals.push_back(add_target(batch.signals[i], scenario, s.uniform()));
    }
    return out;
}

namespace {

constexpr char kMagic[4] = {'C', 'I', 'Q', '1'};
constexpr std::size_t kHeaderBytes = 4 + 4 + 8;

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

}  // namespace

std::vector<std::uint8_t> encode_iq(const std::vector<clx::ComplexVector>& signals, std::size_t m) {
    if (m == 0 || m > std::numeric_limits<std::uint32_t>::max()) throw ConfigError("write_iq: invalid m");
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    out.reserve(kHeaderBytes + signals.size() * m * 8);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m));
    put_le<std::uint64_t>(out, signals.size());
    for (const auto& s : signals) {
        if (s.size() != m) throw ConfigError("write_iq: signal length differs from m");
        for (const auto& v : s) {
            put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v.real())));
            put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v.imag())));
        }
    }
    return out;
}

void write_iq(const std::filesystem::path& path, const std::vector<clx::ComplexVector>& signals, std::size_t m) {
    const auto bytes = encode_iq(signals, m);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write to '" + path.string() + "' failed");
}

SampleBatch decode_iq(const std::vector<std::uint8_t>& bytes, std::optional<std::size_t> expected_m) {
    if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw IqHeaderError("IQ: missing or malformed CIQ1 header");
    const auto m = get_le<std::uint32_t>(bytes.data() + 4);
    const auto count = get_le<std::uint64_t>(bytes.data() + 8);
    if (m == 0) throw IqHeaderError("IQ: header declares m = 0");
    if (expected_m && *expected_m != m)
        throw IqLengthMismatch("IQ: header m = " + std::to_string(m) + ", expected " + std::to_string(*expected_m));
    const std::size_t payload = bytes.size() - kHeaderBytes;
    const std::size_t record = static_cast<std::size_t>(m) * 8;
    if (count > payload / record)
        throw IqTruncatedError("IQ: payload holds " + std::to_string(payload) + " bytes, header promises " +
                               std::to_string(count) + " records of m = " + std::to_string(m));
    if (payload != count * record) throw IqHeaderError("IQ: trailing bytes after the declared records");
    SampleBatch batch;
    batch.scenario.m = m;
    batch.signals.reserve(count);
    const std::uint8_t* p = bytes.data() + kHeaderBytes;
    for (std::uint64_t r = 0; r < count; ++r) {
        clx::ComplexVector v(m);
        for (std::size_t k = 0; k < m; ++k, p += 8) {
            const float re = std::bit_cast<float>(get_le<std::uint32_t>(p));
            const float im = std::bit_cast<float>(get_le<std::uint32_t>(p + 4));
            v[k] = {re, im};
        }
        batch.signals.push_back(std::move(v));
    }
    return batch;
}

SampleBatch load_iq(const std::filesystem::path& path, std::optional<std::size_t> expected_m) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_iq(bytes, expected_m);
}

}  // namespace radood::sig
