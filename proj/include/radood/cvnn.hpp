#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "radood/clx.hpp"
#include "radood/rng.hpp"

#include <json.hpp>

namespace radood::nn {

/// Activations are rank-3 [batch, channels, length]. Dense layers treat the
/// trailing two axes as one flat feature axis and emit length 1.
class ComplexTensor {
  public:
    ComplexTensor() = default;
    ComplexTensor(std::size_t batch, std::size_t channels, std::size_t length);

    std::size_t batch() const noexcept { return batch_; }
    std::size_t channels() const noexcept { return channels_; }
    std::size_t length() const noexcept { return length_; }
    std::size_t features() const noexcept { return channels_ * length_; }
    std::size_t size() const noexcept { return data_.size(); }

    cplx& operator()(std::size_t n, std::size_t c, std::size_t t) { return data_[(n * channels_ + c) * length_ + t]; }
    const cplx& operator()(std::size_t n, std::size_t c, std::size_t t) const {
        return data_[(n * channels_ + c) * length_ + t];
    }
    std::span<cplx> sample(std::size_t n) { return {data_.data() + n * features(), features()}; }
    std::span<const cplx> sample(std::size_t n) const { return {data_.data() + n * features(), features()}; }

    std::vector<cplx>& data() noexcept { return data_; }
    const std::vector<cplx>& data() const noexcept { return data_; }

    /// Same data, new [channels, length] split of each sample's features.
    ComplexTensor reshaped(std::size_t channels, std::size_t length) const;

  private:
    std::size_t batch_ = 0, channels_ = 0, length_ = 0;
    std::vector<cplx> data_;
};

/// A trainable complex parameter and its gradient. Gradients follow the
/// steepest-descent (Wirtinger) convention g = 2·∂L/∂θ* = ∂L/∂Re θ + i·∂L/∂Im θ.
struct Param {
    std::string name;
    std::vector<cplx> value;
    std::vector<cplx> grad;
};

enum class LayerKind { complex_dense, complex_conv1d, complex_conv1d_transposed, complex_batch_norm, crelu };

std::string to_string(LayerKind k);
LayerKind layer_kind_from_string(const std::string& s);

struct LayerSpec {
    LayerKind kind = LayerKind::crelu;
    std::size_t in = 0;   // features (dense) or channels
    std::size_t out = 0;  // features (dense) or channels
    std::size_t kernel = 1;
    std::size_t stride = 1;

    static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::complex_dense, in, out, 1, 1}; }
    static LayerSpec conv(std::size_t in, std::size_t out, std::size_t k, std::size_t s) {
        return {LayerKind::complex_conv1d, in, out, k, s};
    }
    static LayerSpec conv_transposed(std::size_t in, std::size_t out, std::size_t k, std::size_t s) {
        return {LayerKind::complex_conv1d_transposed, in, out, k, s};
    }
    static LayerSpec batch_norm(std::size_t channels) { return {LayerKind::complex_batch_norm, channels, channels, 1, 1}; }
    static LayerSpec crelu() { return {LayerKind::crelu, 0, 0, 1, 1}; }

    /// Zero padding on each side: (kernel-1)/2.
    std::size_t padding() const noexcept { return (kernel - 1) / 2; }
    /// Output length for an input of `length` samples; throws on inconsistent geometry.
    std::size_t output_length(std::size_t length) const;

    void validate() const;
    bool operator==(const LayerSpec&) const = default;
};

class Layer {
  public:
    explicit Layer(LayerSpec spec) : spec_(spec) {}
    virtual ~Layer() = default;

    const LayerSpec& spec() const noexcept { return spec_; }

    /// Inference pass. Pure; safe to call concurrently on a frozen layer.
    virtual ComplexTensor infer(const ComplexTensor& x) const = 0;
    /// Training pass; records what backward needs.
    virtual ComplexTensor forward(const ComplexTensor& x) = 0;
    /// Accumulates parameter gradients and returns the input gradient.
    /// Throws std::logic_error when no forward pass is recorded.
    virtual ComplexTensor backward(const ComplexTensor& grad_out) = 0;

    virtual std::vector<Param*> params() { return {}; }
    /// Non-trainable state (batch-norm running statistics).
    virtual std::vector<std::vector<cplx>*> buffers() { return {}; }
    virtual std::unique_ptr<Layer> clone() const = 0;

    std::vector<const Param*> params() const;
    std::vector<const std::vector<cplx>*> buffers() const;

  protected:
    void check_input(const ComplexTensor& x) const;

  private:
    LayerSpec spec_;
};

/// Builds a layer with the default initialization: re/im of weights iid
/// N(0, 1/(2·fan_in)), zero biases, identity batch-norm affine.
std::unique_ptr<Layer> make_layer(const LayerSpec& spec, Stream& rng);

/// Elementwise max(re, 0) + i·max(im, 0).
cplx crelu(cplx v);

class Sequential {
  public:
    Sequential() = default;
    Sequential(const std::vector<LayerSpec>& specs, Stream& rng);
    Sequential(const Sequential& other);
    Sequential& operator=(const Sequential& other);
    Sequential(Sequential&&) noexcept = default;
    Sequential& operator=(Sequential&&) noexcept = default;

    void push(std::unique_ptr<Layer> layer);

    ComplexTensor infer(const ComplexTensor& x) const;
    ComplexTensor forward(const ComplexTensor& x);
    ComplexTensor backward(const ComplexTensor& grad_out);

    std::vector<Param*> params();
    std::vector<const Param*> params() const;
    std::vector<std::vector<cplx>*> buffers();
    std::vector<const std::vector<cplx>*> buffers() const;
    std::vector<LayerSpec> specs() const;
    void zero_grad();

    std::size_t size() const noexcept { return layers_.size(); }
    Layer& layer(std::size_t i) { return *layers_[i]; }
    const Layer& layer(std::size_t i) const { return *layers_[i]; }

  private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First and second moments per real component, stored packed as complex
/// (re moment, im moment).
struct AdamState {
    std::uint64_t step = 0;
    std::vector<std::vector<cplx>> m;
    std::vector<std::vector<cplx>> v;
};

/// One Adam update over `params`, treating every complex entry as two reals.
/// Throws NumericError if any gradient is non-finite; parameters are left
/// untouched in that case.
void adam_step(const std::vector<Param*>& params, AdamState& state, const AdamConfig& cfg);

/// Layer specs plus float32 parameter/buffer payload of a network.
nlohmann::json specs_to_json(const std::vector<LayerSpec>& specs);
std::vector<LayerSpec> specs_from_json(const nlohmann::json& j);
void append_payload(const Sequential& net, std::vector<float>& out);
/// Reads parameters then buffers in the order append_payload wrote them.
void read_payload(Sequential& net, const std::vector<float>& in, std::size_t& offset);

/// Versioned binary container: "RDCK", u32 version, u32 header length,
/// JSON header, u64 float count, little-endian float32 payload, u32 CRC-32
/// over every preceding byte.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;
    nlohmann::json header;
    std::vector<float> payload;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace radood::nn
