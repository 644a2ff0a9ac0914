#pragma once

#include <cstddef>
#include <vector>

#include "faultdiff/autograd.hpp"

// Differentiable op vocabulary. All ops view their inputs as matrices
// (rows x last-dim) unless stated otherwise.
namespace faultdiff::ops {

template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);

/// x * w + bias, bias broadcast over rows. `bias` may be an invalid Var.
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias);

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);

/// Adds a length-cols row vector to every row of a.
template <typename T> Var<T> add_row(const Var<T>& a, const Var<T>& row);

/// [r x c] -> [r*times x c], each row repeated `times` times consecutively.
template <typename T> Var<T> repeat_rows(const Var<T>& a, std::size_t times);

/// [r x c] -> [r*times x c], the whole block stacked `times` times.
template <typename T> Var<T> tile_rows(const Var<T>& a, std::size_t times);

template <typename T> Var<T> gelu(const Var<T>& a);
template <typename T> Var<T> relu(const Var<T>& a);
template <typename T> Var<T> tanh(const Var<T>& a);
template <typename T> Var<T> abs(const Var<T>& a);
template <typename T> Var<T> square(const Var<T>& a);

/// min(a, m) elementwise; zero gradient where clamped.
template <typename T> Var<T> clamp_max(const Var<T>& a, T m);

/// Max-subtracted softmax. `axis` indexes a rank-2 view: 0 normalizes
/// columns, 1 (or -1) normalizes rows.
template <typename T> Var<T> softmax(const Var<T>& a, int axis = -1);

/// Normalizes each row to zero mean / unit variance, then gain * x + bias.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5));

template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);

template <typename T> Var<T> transpose(const Var<T>& a);
template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);

template <typename T> Var<T> slice_rows(const Var<T>& a, std::size_t begin, std::size_t end);
template <typename T> Var<T> slice_cols(const Var<T>& a, std::size_t begin, std::size_t end);
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);

/// Inserts `before` and `after` zero rows around each group of `seq` rows.
template <typename T>
Var<T> pad_rows(const Var<T>& a, std::size_t seq, std::size_t before, std::size_t after);

/// [groups*seq x c] -> [groups x c], mean over each block of seq rows.
template <typename T> Var<T> mean_pool_rows(const Var<T>& a, std::size_t groups);

/// Expands per-sample basis coefficients into a time series.
/// coeffs: [B x K*d] laid out as K rows of d; basis: [seq x K].
/// Result: [B*seq x d], out[b, s, c] = sum_k basis[s, k] * coeffs[b, k*d + c].
template <typename T>
Var<T> basis_expand(const Var<T>& coeffs, const Tensor<T>& basis, std::size_t channels);

/// Multi-head scaled dot-product attention over `batch` independent
/// sequences. q: [batch*sq x D], k/v: [batch*sk x D]. When band >= 0,
/// position i may only attend to keys j with |i - j| <= band.
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t batch,
                 std::size_t heads, long band = -1);

/// Sliding-window multi-head attention. Keys and values are zero-padded by
/// floor(window/2) on both ends of every sequence; each position attends
/// over its window of `window` padded keys with padding masked out, and the
/// result is placed at the window center. Throws ContractError on even
/// window.
template <typename T>
Var<T> window_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t batch,
                        std::size_t heads, std::size_t window);

/// Mean negative log-likelihood of integer labels under row-softmax(logits).
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const std::vector<int>& labels);

} // namespace faultdiff::ops
