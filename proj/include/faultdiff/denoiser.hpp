#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "faultdiff/autograd.hpp"
#include "faultdiff/nn.hpp"

namespace faultdiff::denoiser {

struct DenoiserConfig {
    std::size_t model_dim = 64;
    std::size_t enc_layers = 3;
    std::size_t dec_layers = 4;
    std::size_t heads = 4;
    std::size_t ff_dim = 128;
    std::size_t fourier_pairs = 4;
    std::size_t seq_len = 24;
    std::size_t channels = 2;
    std::size_t steps = 100;  // diffusion steps T

    /// Throws ContractError on an inconsistent configuration.
    void validate() const;
    bool operator==(const DenoiserConfig&) const = default;
};

/// [seq_len x 4] cubic basis over normalized time s = t / (seq_len - 1).
template <typename T> Tensor<T> polynomial_basis(std::size_t seq_len);

/// [seq_len x 2K] basis: column 2k-2 = cos(2 pi k t / seq_len), 2k-1 = sin.
template <typename T> Tensor<T> fourier_basis(std::size_t seq_len, std::size_t pairs);

/// Raw sinusoidal code of a diffusion step (before the learned projection).
/// Half the entries are sines, half cosines, so the norm is sqrt(dim / 2).
std::vector<double> timestep_embed(std::size_t t, std::size_t dim);

/// Called after every decoder layer; may replace the residual stream.
template <typename T>
class DecoderHook {
public:
    virtual ~DecoderHook() = default;
    virtual Var<T> after_layer(std::size_t layer, const Var<T>& h, std::size_t batch) = 0;
};

template <typename T>
struct Decomposition {
    Var<T> trend;
    Var<T> seasonal;
    Var<T> residual;
};

template <typename T>
struct ForwardResult {
    Var<T> eps_hat;             // [batch*seq_len x channels]
    std::vector<Var<T>> taps;   // decoder layer outputs, [batch*seq_len x model_dim]
    Var<T> final_state;         // H after the closing layer norm
};

/// Transformer encoder-decoder noise predictor with trend, seasonal and
/// residual output heads. Parameters are named "backbone.*".
template <typename T>
class Denoiser {
public:
    Denoiser(const DenoiserConfig& config, std::uint64_t seed);

    const DenoiserConfig& config() const { return config_; }
    ParameterSet<T>& params() { return params_; }
    const ParameterSet<T>& params() const { return params_; }

    /// x_t: [batch*seq_len x channels], one step per sample. Throws
    /// ForwardError naming the layer if an activation goes non-finite.
    ForwardResult<T> forward(const Var<T>& x_t, std::span<const std::size_t> steps, DecoderHook<T>* hook = nullptr);

    /// Splits the final decoder state into the three head outputs.
    Decomposition<T> decompose(const Var<T>& h, std::size_t batch);

    const Tensor<T>& trend_basis() const { return trend_basis_; }
    const Tensor<T>& seasonal_basis() const { return seasonal_basis_; }

private:
    struct EncoderLayer {
        nn::LayerNorm<T> ln1, ln2;
        nn::MultiHeadAttention<T> attn;
        nn::FeedForward<T> ff;
    };
    struct DecoderLayer {
        nn::LayerNorm<T> ln1, ln2, ln3;
        nn::MultiHeadAttention<T> self_attn, cross_attn;
        nn::FeedForward<T> ff;
    };

    Var<T> step_embedding(std::span<const std::size_t> steps);

    DenoiserConfig config_;
    ParameterSet<T> params_;
    Tensor<T> position_;
    Tensor<T> trend_basis_;
    Tensor<T> seasonal_basis_;
    nn::Linear<T> input_;
    nn::Linear<T> time1_, time2_;
    std::vector<EncoderLayer> encoder_;
    std::vector<DecoderLayer> decoder_;
    nn::LayerNorm<T> enc_norm_, dec_norm_;
    nn::Linear<T> trend_head_, seasonal_head_, residual_head_;
};

extern template class Denoiser<float>;
extern template class Denoiser<double>;

} // namespace faultdiff::denoiser
