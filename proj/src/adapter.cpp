#include "faultdiff/adapter.hpp"

#include <cmath>
#include <string>

#include "faultdiff/ops.hpp"

namespace faultdiff::adapter {

void AdapterConfig::validate(std::size_t seq_len) const {
    if (window == 0 || window % 2 == 0)
        throw ContractError("adapter: window must be a positive odd integer, got " + std::to_string(window));
    if (seq_len > 0 && window > 2 * seq_len - 1)
        throw ContractError("adapter: window " + std::to_string(window) + " exceeds 2 * seq_len - 1");
    if (heads == 0 || model_dim == 0 || model_dim % heads != 0)
        throw ContractError("adapter: model_dim must be divisible by heads");
    if (!std::isfinite(alpha)) throw ContractError("adapter: alpha must be finite");
}

template <typename T>
AdapterStack<T>::AdapterStack(const AdapterConfig& config, std::size_t blocks, std::uint64_t seed) : config_(config) {
    config_.validate(0);
    if (blocks == 0) throw ContractError("adapter: need at least one block");
    Rng rng(seed);
    const std::size_t D = config_.model_dim;
    for (std::size_t k = 0; k < blocks; ++k) {
        const std::string p = "adapter." + std::to_string(k);
        Block b;
        b.ln = nn::LayerNorm<T>(params_, p + ".ln", D);
        b.attn = nn::MultiHeadAttention<T>(params_, p + ".attn", D, config_.heads, rng);
        b.out = nn::Linear<T>(params_, p + ".out", D, D, rng, true);
        blocks_.push_back(b);
    }
}

template <typename T>
void AdapterStack<T>::set_alpha(double alpha) {
    if (!std::isfinite(alpha)) throw ContractError("adapter: alpha must be finite");
    config_.alpha = alpha;
}

template <typename T>
Var<T> AdapterStack<T>::block(std::size_t k, const Var<T>& x, std::size_t batch) const {
    if (k >= blocks_.size()) throw ContractError("adapter: block index out of range");
    const auto& b = blocks_[k];
    return b.out(sliding_window_attention(b.ln(x), batch, config_.window, b.attn));
}

template <typename T>
typename AdapterAccumulator<T>::Stage AdapterAccumulator<T>::step(const Var<T>& tap, std::size_t batch) {
    Stage s;
    if (sum_.valid() && sum_.shape() != tap.shape())
        throw ContractError("adapter: tap " + std::to_string(stage_) + " has shape " + shape_str(tap.shape()) +
                            ", earlier taps " + shape_str(sum_.shape()));
    s.input = sum_.valid() ? ops::add(tap, sum_) : tap;
    s.local = block_(stage_, s.input, batch);
    if (s.local.shape() != tap.shape()) throw ContractError("adapter: block output shape differs from its tap");
    sum_ = sum_.valid() ? ops::add(sum_, s.local) : s.local;
    s.updated = alpha_ == 0.0 ? tap : ops::add(tap, ops::scale(s.local, static_cast<T>(alpha_)));
    ++stage_;
    return s;
}

template <typename T>
AdapterTrace<T> adapter_forward(const AdapterStack<T>& stack, const std::vector<Var<T>>& taps, std::size_t batch) {
    if (taps.size() != stack.size())
        throw ContractError("adapter_forward: " + std::to_string(taps.size()) + " taps for " +
                            std::to_string(stack.size()) + " blocks");
    AdapterAccumulator<T> acc(
        [&stack](std::size_t k, const Var<T>& x, std::size_t b) { return stack.block(k, x, b); },
        stack.config().alpha);
    AdapterTrace<T> trace;
    for (const auto& tap : taps) {
        if (tap.cols() != stack.config().model_dim) throw ContractError("adapter_forward: tap width mismatch");
        auto s = acc.step(tap, batch);
        trace.inputs.push_back(s.input);
        trace.locals.push_back(s.local);
        trace.updated.push_back(s.updated);
    }
    return trace;
}

namespace {

template <typename T>
class AccumulatingHook : public denoiser::DecoderHook<T> {
public:
    explicit AccumulatingHook(const AdapterStack<T>& stack)
        : acc_([&stack](std::size_t k, const Var<T>& x, std::size_t b) { return stack.block(k, x, b); },
               stack.config().alpha) {}

    Var<T> after_layer(std::size_t, const Var<T>& h, std::size_t batch) override { return acc_.step(h, batch).updated; }

private:
    AdapterAccumulator<T> acc_;
};

} // namespace

template <typename T>
denoiser::ForwardResult<T> ComposedModel<T>::forward(const Var<T>& x_t, std::span<const std::size_t> steps) {
    // alpha = 0 bypasses the blocks entirely, so the result is the plain
    // backbone computation.
    if (adapter_->config().alpha == 0.0) return backbone_->forward(x_t, steps);
    AccumulatingHook<T> hook(*adapter_);
    return backbone_->forward(x_t, steps, &hook);
}

template <typename T>
ComposedModel<T> attach(denoiser::Denoiser<T>& backbone, AdapterStack<T>& adapter) {
    const auto& bc = backbone.config();
    const auto& ac = adapter.config();
    if (ac.model_dim != bc.model_dim)
        throw ContractError("attach: adapter model_dim " + std::to_string(ac.model_dim) + " != backbone " +
                            std::to_string(bc.model_dim));
    if (adapter.size() != bc.dec_layers)
        throw ContractError("attach: " + std::to_string(adapter.size()) + " adapter blocks for " +
                            std::to_string(bc.dec_layers) + " decoder layers");
    ac.validate(bc.seq_len);
    backbone.params().set_trainable(false);
    adapter.params().set_trainable(true);
    return ComposedModel<T>(backbone, adapter);
}

template class AdapterStack<float>;
template class AdapterStack<double>;
template class AdapterAccumulator<float>;
template class AdapterAccumulator<double>;
template class ComposedModel<float>;
template class ComposedModel<double>;
template AdapterTrace<float> adapter_forward(const AdapterStack<float>&, const std::vector<Var<float>>&, std::size_t);
template AdapterTrace<double> adapter_forward(const AdapterStack<double>&, const std::vector<Var<double>>&, std::size_t);
template ComposedModel<float> attach(denoiser::Denoiser<float>&, AdapterStack<float>&);
template ComposedModel<double> attach(denoiser::Denoiser<double>&, AdapterStack<double>&);

} // namespace faultdiff::adapter
