#include "faultdiff/denoiser.hpp"

#include <cmath>
#include <string>

#include "faultdiff/ops.hpp"

namespace faultdiff::denoiser {

void DenoiserConfig::validate() const {
    if (model_dim == 0 || heads == 0 || model_dim % heads != 0)
        throw ContractError("denoiser: model_dim " + std::to_string(model_dim) + " not divisible by heads " +
                            std::to_string(heads));
    if (model_dim % 2 != 0) throw ContractError("denoiser: model_dim must be even");
    if (enc_layers < 1 || dec_layers < 1) throw ContractError("denoiser: need at least one encoder and decoder layer");
    if (ff_dim == 0) throw ContractError("denoiser: ff_dim must be positive");
    if (seq_len < 2) throw ContractError("denoiser: seq_len must be >= 2");
    if (channels == 0) throw ContractError("denoiser: channels must be positive");
    if (steps < 2) throw ContractError("denoiser: steps must be >= 2");
}

template <typename T>
Tensor<T> polynomial_basis(std::size_t seq_len) {
    if (seq_len < 2) throw ContractError("polynomial_basis: seq_len must be >= 2");
    Tensor<T> p = Tensor<T>::matrix(seq_len, 4);
    for (std::size_t t = 0; t < seq_len; ++t) {
        const double s = double(t) / double(seq_len - 1);
        for (std::size_t k = 0; k < 4; ++k) p.at(t, k) = static_cast<T>(std::pow(s, double(k)));
    }
    return p;
}

template <typename T>
Tensor<T> fourier_basis(std::size_t seq_len, std::size_t pairs) {
    Tensor<T> f = Tensor<T>::matrix(seq_len, 2 * pairs);
    for (std::size_t t = 0; t < seq_len; ++t)
        for (std::size_t k = 1; k <= pairs; ++k) {
            const double w = 2.0 * M_PI * double(k) * double(t) / double(seq_len);
            f.at(t, 2 * k - 2) = static_cast<T>(std::cos(w));
            f.at(t, 2 * k - 1) = static_cast<T>(std::sin(w));
        }
    return f;
}

std::vector<double> timestep_embed(std::size_t t, std::size_t dim) {
    if (dim < 2 || dim % 2) throw ContractError("timestep_embed: dim must be even and >= 2");
    const std::size_t half = dim / 2;
    std::vector<double> e(dim);
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
        e[i] = std::sin(double(t) * freq);
        e[i + half] = std::cos(double(t) * freq);
    }
    return e;
}

template <typename T>
Denoiser<T>::Denoiser(const DenoiserConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    const std::size_t D = config_.model_dim, d = config_.channels, K = config_.fourier_pairs;
    Rng rng(seed);

    position_ = Tensor<T>::matrix(config_.seq_len, D);
    for (std::size_t t = 0; t < config_.seq_len; ++t) {
        const auto e = timestep_embed(t, D);
        for (std::size_t c = 0; c < D; ++c) position_.at(t, c) = static_cast<T>(e[c]);
    }
    trend_basis_ = polynomial_basis<T>(config_.seq_len);
    seasonal_basis_ = fourier_basis<T>(config_.seq_len, K);

    auto& ps = params_;
    input_ = nn::Linear<T>(ps, "backbone.input", d, D, rng);
    time1_ = nn::Linear<T>(ps, "backbone.time.0", D, D, rng);
    time2_ = nn::Linear<T>(ps, "backbone.time.1", D, D, rng);
    for (std::size_t l = 0; l < config_.enc_layers; ++l) {
        const std::string p = "backbone.enc." + std::to_string(l);
        EncoderLayer layer;
        layer.ln1 = nn::LayerNorm<T>(ps, p + ".ln1", D);
        layer.attn = nn::MultiHeadAttention<T>(ps, p + ".attn", D, config_.heads, rng);
        layer.ln2 = nn::LayerNorm<T>(ps, p + ".ln2", D);
        layer.ff = nn::FeedForward<T>(ps, p + ".ff", D, config_.ff_dim, rng);
        encoder_.push_back(layer);
    }
    enc_norm_ = nn::LayerNorm<T>(ps, "backbone.enc.norm", D);
    for (std::size_t l = 0; l < config_.dec_layers; ++l) {
        const std::string p = "backbone.dec." + std::to_string(l);
        DecoderLayer layer;
        layer.ln1 = nn::LayerNorm<T>(ps, p + ".ln1", D);
        layer.self_attn = nn::MultiHeadAttention<T>(ps, p + ".self", D, config_.heads, rng);
        layer.ln2 = nn::LayerNorm<T>(ps, p + ".ln2", D);
        layer.cross_attn = nn::MultiHeadAttention<T>(ps, p + ".cross", D, config_.heads, rng);
        layer.ln3 = nn::LayerNorm<T>(ps, p + ".ln3", D);
        layer.ff = nn::FeedForward<T>(ps, p + ".ff", D, config_.ff_dim, rng);
        decoder_.push_back(layer);
    }
    dec_norm_ = nn::LayerNorm<T>(ps, "backbone.dec.norm", D);
    trend_head_ = nn::Linear<T>(ps, "backbone.head.trend", D, 4 * d, rng, true);
    seasonal_head_ = nn::Linear<T>(ps, "backbone.head.seasonal", D, 2 * K * d, rng, true);
    residual_head_ = nn::Linear<T>(ps, "backbone.head.residual", D, d, rng, true);
}

template <typename T>
Var<T> Denoiser<T>::step_embedding(std::span<const std::size_t> steps) {
    const std::size_t D = config_.model_dim;
    Tensor<T> raw = Tensor<T>::matrix(steps.size(), D);
    for (std::size_t b = 0; b < steps.size(); ++b) {
        if (steps[b] >= config_.steps)
            throw ContractError("denoiser: step " + std::to_string(steps[b]) + " outside [0, " +
                                std::to_string(config_.steps) + ")");
        const auto e = timestep_embed(steps[b], D);
        for (std::size_t c = 0; c < D; ++c) raw.at(b, c) = static_cast<T>(e[c]);
    }
    return time2_(ops::gelu(time1_(Var<T>::constant(std::move(raw)))));
}

namespace {

template <typename T>
void check_finite(const Var<T>& h, const std::string& layer) {
    if (!h.value().all_finite()) throw ForwardError("non-finite activation in " + layer);
}

} // namespace

template <typename T>
ForwardResult<T> Denoiser<T>::forward(const Var<T>& x_t, std::span<const std::size_t> steps, DecoderHook<T>* hook) {
    const std::size_t tau = config_.seq_len, batch = steps.size();
    if (batch == 0) throw ContractError("denoiser: empty batch");
    if (x_t.rows() != batch * tau || x_t.cols() != config_.channels)
        throw DimensionError("denoiser: input " + shape_str(x_t.shape()) + " does not match batch " +
                             std::to_string(batch) + " x seq_len " + std::to_string(tau) + " x channels " +
                             std::to_string(config_.channels));
    if (!x_t.value().all_finite()) throw ContractError("denoiser: non-finite input");

    const Var<T> time = ops::repeat_rows(step_embedding(steps), tau);
    const Var<T> pos = ops::tile_rows(Var<T>::constant(position_), batch);
    const Var<T> embedded = ops::add(input_(x_t), pos);
    check_finite(embedded, "input projection");

    Var<T> h = embedded;
    for (std::size_t l = 0; l < encoder_.size(); ++l) {
        const auto& L = encoder_[l];
        h = ops::add(h, time);
        const Var<T> n1 = L.ln1(h);
        h = ops::add(h, L.attn(n1, n1, batch));
        h = ops::add(h, L.ff(L.ln2(h)));
        check_finite(h, "encoder layer " + std::to_string(l));
    }
    const Var<T> memory = enc_norm_(h);

    ForwardResult<T> out;
    h = embedded;
    for (std::size_t l = 0; l < decoder_.size(); ++l) {
        const auto& L = decoder_[l];
        h = ops::add(h, time);
        const Var<T> n1 = L.ln1(h);
        h = ops::add(h, L.self_attn(n1, n1, batch));
        h = ops::add(h, L.cross_attn(L.ln2(h), memory, batch));
        h = ops::add(h, L.ff(L.ln3(h)));
        check_finite(h, "decoder layer " + std::to_string(l));
        out.taps.push_back(h);
        if (hook) {
            h = hook->after_layer(l, h, batch);
            check_finite(h, "adapter after decoder layer " + std::to_string(l));
        }
    }
    out.final_state = dec_norm_(h);
    const auto parts = decompose(out.final_state, batch);
    out.eps_hat = ops::add(ops::add(parts.trend, parts.seasonal), parts.residual);
    check_finite(out.eps_hat, "output heads");
    return out;
}

template <typename T>
Decomposition<T> Denoiser<T>::decompose(const Var<T>& h, std::size_t batch) {
    if (h.cols() != config_.model_dim || h.rows() != batch * config_.seq_len)
        throw DimensionError("decompose: state " + shape_str(h.shape()) + " does not match config");
    const Var<T> pooled = ops::mean_pool_rows(h, batch);
    Decomposition<T> parts;
    parts.trend = ops::basis_expand(trend_head_(pooled), trend_basis_, config_.channels);
    parts.seasonal = ops::basis_expand(seasonal_head_(pooled), seasonal_basis_, config_.channels);
    parts.residual = residual_head_(h);
    return parts;
}

template Tensor<float> polynomial_basis<float>(std::size_t);
template Tensor<double> polynomial_basis<double>(std::size_t);
template Tensor<float> fourier_basis<float>(std::size_t, std::size_t);
template Tensor<double> fourier_basis<double>(std::size_t, std::size_t);
template class Denoiser<float>;
template class Denoiser<double>;

} // namespace faultdiff::denoiser
