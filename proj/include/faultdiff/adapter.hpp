#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "faultdiff/denoiser.hpp"
#include "faultdiff/nn.hpp"

namespace faultdiff::adapter {

struct AdapterConfig {
    std::size_t window = 5;
    std::size_t heads = 4;
    std::size_t model_dim = 64;
    double alpha = 1.0;

    /// Window odd with 1 <= W <= 2 * seq_len - 1, heads divide model_dim,
    /// alpha finite. Throws ContractError otherwise.
    void validate(std::size_t seq_len) const;
    bool operator==(const AdapterConfig&) const = default;
};

/// Multi-head attention of every position over its `window`-wide
/// neighbourhood. x: [batch*S x D].
template <typename T>
Var<T> sliding_window_attention(const Var<T>& x, std::size_t batch, std::size_t window,
                                const nn::MultiHeadAttention<T>& attn) {
    return attn.windowed(x, batch, window);
}

/// One block per decoder layer: layer_norm -> window attention -> linear out
/// (zero-initialized). Parameters are named "adapter.<k>.*".
template <typename T>
class AdapterStack {
public:
    AdapterStack(const AdapterConfig& config, std::size_t blocks, std::uint64_t seed);

    const AdapterConfig& config() const { return config_; }
    void set_alpha(double alpha);
    std::size_t size() const { return blocks_.size(); }
    ParameterSet<T>& params() { return params_; }
    const ParameterSet<T>& params() const { return params_; }

    Var<T> block(std::size_t k, const Var<T>& x, std::size_t batch) const;

private:
    struct Block {
        nn::LayerNorm<T> ln;
        nn::MultiHeadAttention<T> attn;
        nn::Linear<T> out;
    };
    AdapterConfig config_;
    ParameterSet<T> params_;
    std::vector<Block> blocks_;
};

/// Layerwise accumulation of local adapter outputs. For stage k:
///   input_k   = tap_k + sum_{j<k} local_j
///   local_k   = block_k(input_k)
///   updated_k = tap_k + alpha * local_k
template <typename T>
class AdapterAccumulator {
public:
    using BlockFn = std::function<Var<T>(std::size_t, const Var<T>&, std::size_t)>;

    struct Stage {
        Var<T> input;
        Var<T> local;
        Var<T> updated;
    };

    AdapterAccumulator(BlockFn block, double alpha) : block_(std::move(block)), alpha_(alpha) {}

    Stage step(const Var<T>& tap, std::size_t batch);
    std::size_t stages() const { return stage_; }

private:
    BlockFn block_;
    double alpha_;
    Var<T> sum_;
    std::size_t stage_ = 0;
};

template <typename T>
struct AdapterTrace {
    std::vector<Var<T>> locals;
    std::vector<Var<T>> inputs;
    std::vector<Var<T>> updated;
};

/// Applies the stack to a fixed list of decoder taps.
template <typename T>
AdapterTrace<T> adapter_forward(const AdapterStack<T>& stack, const std::vector<Var<T>>& taps, std::size_t batch);

/// Backbone with adapter blocks interleaved after each decoder layer.
template <typename T>
class ComposedModel {
public:
    ComposedModel(denoiser::Denoiser<T>& backbone, AdapterStack<T>& adapter)
        : backbone_(&backbone), adapter_(&adapter) {}

    denoiser::ForwardResult<T> forward(const Var<T>& x_t, std::span<const std::size_t> steps);

    denoiser::Denoiser<T>& backbone() { return *backbone_; }
    AdapterStack<T>& adapter() { return *adapter_; }

private:
    denoiser::Denoiser<T>* backbone_;
    AdapterStack<T>* adapter_;
};

/// Freezes every backbone parameter and marks the adapter trainable. Throws
/// ContractError if the dimensions disagree.
template <typename T>
ComposedModel<T> attach(denoiser::Denoiser<T>& backbone, AdapterStack<T>& adapter);

extern template class AdapterStack<float>;
extern template class AdapterStack<double>;
extern template class AdapterAccumulator<float>;
extern template class AdapterAccumulator<double>;
extern template class ComposedModel<float>;
extern template class ComposedModel<double>;

} // namespace faultdiff::adapter
