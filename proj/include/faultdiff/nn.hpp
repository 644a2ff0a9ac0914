#pragma once

#include <cmath>
#include <string>

#include "faultdiff/autograd.hpp"
#include "faultdiff/ops.hpp"
#include "faultdiff/rng.hpp"

namespace faultdiff::nn {

/// Uniform(-bound, bound) fill drawn in row-major order.
template <typename T>
Tensor<T> uniform_init(Shape shape, double bound, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

/// Affine map x * w + b with a [in x out] weight.
template <typename T>
struct Linear {
    Parameter<T>* weight = nullptr;
    Parameter<T>* bias = nullptr;

    Linear() = default;
    Linear(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
           bool zero_init = false) {
        const double bound = zero_init ? 0.0 : 1.0 / std::sqrt(double(in));
        weight = &ps.add(name + ".w", uniform_init<T>({in, out}, bound, rng));
        bias = &ps.add(name + ".b", Tensor<T>({out}));
    }

    Var<T> operator()(const Var<T>& x) const {
        return ops::linear(x, Var<T>::param(*weight), Var<T>::param(*bias));
    }
};

template <typename T>
struct LayerNorm {
    Parameter<T>* gain = nullptr;
    Parameter<T>* bias = nullptr;

    LayerNorm() = default;
    LayerNorm(ParameterSet<T>& ps, const std::string& name, std::size_t dim) {
        gain = &ps.add(name + ".g", Tensor<T>({dim}, T(1)));
        bias = &ps.add(name + ".b", Tensor<T>({dim}));
    }

    Var<T> operator()(const Var<T>& x) const {
        return ops::layer_norm(x, Var<T>::param(*gain), Var<T>::param(*bias));
    }
};

/// Projections around the fused attention kernels.
template <typename T>
struct MultiHeadAttention {
    Linear<T> q, k, v, o;
    std::size_t heads = 1;

    MultiHeadAttention() = default;
    MultiHeadAttention(ParameterSet<T>& ps, const std::string& name, std::size_t dim, std::size_t n_heads, Rng& rng)
        : q(ps, name + ".q", dim, dim, rng),
          k(ps, name + ".k", dim, dim, rng),
          v(ps, name + ".v", dim, dim, rng),
          o(ps, name + ".o", dim, dim, rng),
          heads(n_heads) {}

    /// Full (or band-limited) attention of `query` rows over `context` rows.
    Var<T> operator()(const Var<T>& query, const Var<T>& context, std::size_t batch, long band = -1) const {
        return o(ops::attention(q(query), k(context), v(context), batch, heads, band));
    }

    /// Sliding-window self-attention.
    Var<T> windowed(const Var<T>& x, std::size_t batch, std::size_t window) const {
        return o(ops::window_attention(q(x), k(x), v(x), batch, heads, window));
    }
};

template <typename T>
struct FeedForward {
    Linear<T> up, down;

    FeedForward() = default;
    FeedForward(ParameterSet<T>& ps, const std::string& name, std::size_t dim, std::size_t hidden, Rng& rng)
        : up(ps, name + ".up", dim, hidden, rng), down(ps, name + ".down", hidden, dim, rng) {}

    Var<T> operator()(const Var<T>& x) const { return down(ops::gelu(up(x))); }
};

} // namespace faultdiff::nn
