#include "faultdiff/ops.hpp"

#include <cmath>
#include <limits>

namespace faultdiff::ops {

namespace {

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T{0}) continue;
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[k x n] += A[m x k]^T * B[m x n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T{0}) continue;
            T* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
std::vector<T> transposed(const T* a, std::size_t rows, std::size_t cols) {
    std::vector<T> out(rows * cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = a[i * cols + j];
    return out;
}

// C[m x k] += G[m x n] * B[k x n]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* g, const T* b, T* c) {
    const auto bt = transposed(b, k, n);
    gemm_nn(m, k, n, g, bt.data(), c);
}

template <typename T>
Tensor<T>& grad_of(const Var<T>& v) {
    return v.node()->grad_buffer();
}

template <typename T>
Var<T> unary(const Var<T>& a, T (*f)(T), T (*df)(T, T)) {
    Tensor<T> out(a.shape());
    const auto x = a.value().data();
    auto y = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    return make_result<T>(std::move(out), {a}, [a, df](Node<T>& self) {
        auto& ga = grad_of(a);
        const auto x = a.value().data();
        const auto y = self.value.data();
        const auto g = self.grad.data();
        for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
    });
}

} // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k)
        throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    Tensor<T> out = Tensor<T>::matrix(m, n);
    gemm_nn(m, n, k, a.value().data().data(), b.value().data().data(), out.data().data());
    return make_result<T>(std::move(out), {a, b}, [a, b, m, n, k](Node<T>& self) {
        const T* g = self.grad.data().data();
        if (a.requires_grad()) gemm_nt(m, n, k, g, b.value().data().data(), grad_of(a).data().data());
        if (b.requires_grad()) gemm_tn(m, n, k, a.value().data().data(), g, grad_of(b).data().data());
    });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
    const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
    if (w.rows() != k)
        throw DimensionError("linear: input width " + std::to_string(k) + " vs weight " + shape_str(w.shape()));
    if (bias.valid() && bias.numel() != n)
        throw DimensionError("linear: bias length " + std::to_string(bias.numel()) + " vs " + std::to_string(n));
    Tensor<T> out = Tensor<T>::matrix(m, n);
    T* o = out.data().data();
    if (bias.valid()) {
        const T* bv = bias.value().data().data();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) o[i * n + j] = bv[j];
    }
    gemm_nn(m, n, k, x.value().data().data(), w.value().data().data(), o);
    return make_result<T>(std::move(out), {x, w, bias}, [x, w, bias, m, n, k](Node<T>& self) {
        const T* g = self.grad.data().data();
        if (x.requires_grad()) gemm_nt(m, n, k, g, w.value().data().data(), grad_of(x).data().data());
        if (w.requires_grad()) gemm_tn(m, n, k, x.value().data().data(), g, grad_of(w).data().data());
        if (bias.valid() && bias.requires_grad()) {
            auto& gb = grad_of(bias);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
    });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "add");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
    return make_result<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
        for (const Var<T>* v : {&a, &b}) {
            if (!v->requires_grad()) continue;
            auto& gv = grad_of(*v);
            for (std::size_t i = 0; i < gv.numel(); ++i) gv[i] += self.grad[i];
        }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "sub");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
    return make_result<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
        if (a.requires_grad()) {
            auto& ga = grad_of(a);
            for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad[i];
        }
        if (b.requires_grad()) {
            auto& gb = grad_of(b);
            for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] -= self.grad[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "mul");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
    return make_result<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
        if (a.requires_grad()) {
            auto& ga = grad_of(a);
            for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad[i] * b.value()[i];
        }
        if (b.requires_grad()) {
            auto& gb = grad_of(b);
            for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += self.grad[i] * a.value()[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * s;
    return make_result<T>(std::move(out), {a}, [a, s](Node<T>& self) {
        auto& ga = grad_of(a);
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad[i] * s;
    });
}

template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
    const std::size_t r = a.rows(), c = a.cols();
    if (row.numel() != c)
        throw DimensionError("add_row: row length " + std::to_string(row.numel()) + " vs " + std::to_string(c));
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a.value()[i * c + j] + row.value()[j];
    return make_result<T>(std::move(out), {a, row}, [a, row, r, c](Node<T>& self) {
        if (a.requires_grad()) {
            auto& ga = grad_of(a);
            for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad[i];
        }
        if (row.requires_grad()) {
            auto& gr = grad_of(row);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gr[j] += self.grad[i * c + j];
        }
    });
}

template <typename T>
Var<T> repeat_rows(const Var<T>& a, std::size_t times) {
    const std::size_t r = a.rows(), c = a.cols();
    Tensor<T> out = Tensor<T>::matrix(r * times, c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t t = 0; t < times; ++t)
            std::copy_n(a.value().data().data() + i * c, c, out.data().data() + (i * times + t) * c);
    return make_result<T>(std::move(out), {a}, [a, r, c, times](Node<T>& self) {
        auto& ga = grad_of(a);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t t = 0; t < times; ++t)
                for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad[(i * times + t) * c + j];
    });
}

template <typename T>
Var<T> tile_rows(const Var<T>& a, std::size_t times) {
    const std::size_t n = a.numel(), c = a.cols();
    Tensor<T> out = Tensor<T>::matrix(a.rows() * times, c);
    for (std::size_t t = 0; t < times; ++t)
        std::copy_n(a.value().data().data(), n, out.data().data() + t * n);
    return make_result<T>(std::move(out), {a}, [a, n, times](Node<T>& self) {
        auto& ga = grad_of(a);
        for (std::size_t t = 0; t < times; ++t)
            for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[t * n + i];
    });
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
    return unary<T>(
        a, [](T x) { return T(0.5) * x * (T(1) + std::erf(x * T(M_SQRT1_2))); },
        [](T x, T) {
            const T cdf = T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2)));
            const T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014327);
            return cdf + x * pdf;
        });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
    return unary<T>(a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
    return unary<T>(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> abs(const Var<T>& a) {
    return unary<T>(
        a, [](T x) { return std::abs(x); },
        [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> square(const Var<T>& a) {
    return unary<T>(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Var<T> clamp_max(const Var<T>& a, T m) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::min(a.value()[i], m);
    return make_result<T>(std::move(out), {a}, [a, m](Node<T>& self) {
        auto& ga = grad_of(a);
        for (std::size_t i = 0; i < ga.numel(); ++i)
            if (a.value()[i] < m) ga[i] += self.grad[i];
    });
}

namespace {

template <typename T>
void softmax_rows_inplace(T* x, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        T* row = x + i * cols;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, row[j]);
        T total = 0;
        for (std::size_t j = 0; j < cols; ++j) {
            row[j] = std::exp(row[j] - mx);
            total += row[j];
        }
        for (std::size_t j = 0; j < cols; ++j) row[j] /= total;
    }
}

template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
    const std::size_t r = a.rows(), c = a.cols();
    Tensor<T> out = a.value();
    softmax_rows_inplace(out.data().data(), r, c);
    return make_result<T>(std::move(out), {a}, [a, r, c](Node<T>& self) {
        auto& ga = grad_of(a);
        for (std::size_t i = 0; i < r; ++i) {
            const T* y = self.value.data().data() + i * c;
            const T* g = self.grad.data().data() + i * c;
            T dot = 0;
            for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += y[j] * (g[j] - dot);
        }
    });
}

} // namespace

template <typename T>
Var<T> softmax(const Var<T>& a, int axis) {
    const int rank = static_cast<int>(a.shape().size());
    if (axis == -1 || axis == rank - 1 || (rank == 1 && axis == 0)) return softmax_rows(a);
    if (rank == 2 && axis == 0) return transpose(softmax_rows(transpose(a)));
    throw ContractError("softmax: unsupported axis " + std::to_string(axis) + " for shape " + shape_str(a.shape()));
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
    const std::size_t r = x.rows(), c = x.cols();
    if (c == 0) throw DimensionError("layer_norm: empty last axis");
    if (gain.numel() != c || bias.numel() != c) throw DimensionError("layer_norm: gain/bias length mismatch");
    Tensor<T> out(x.shape());
    std::vector<T> xhat(r * c), rstd(r);
    for (std::size_t i = 0; i < r; ++i) {
        const T* row = x.value().data().data() + i * c;
        T mu = 0;
        for (std::size_t j = 0; j < c; ++j) mu += row[j];
        mu /= T(c);
        T var = 0;
        for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= T(c);
        rstd[i] = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            xhat[i * c + j] = (row[j] - mu) * rstd[i];
            out[i * c + j] = gain.value()[j] * xhat[i * c + j] + bias.value()[j];
        }
    }
    return make_result<T>(std::move(out), {x, gain, bias},
                          [x, gain, bias, r, c, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        const T* g = self.grad.data().data();
        if (gain.requires_grad()) {
            auto& gg = grad_of(gain);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gg[j] += g[i * c + j] * xhat[i * c + j];
        }
        if (bias.requires_grad()) {
            auto& gb = grad_of(bias);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
        }
        if (x.requires_grad()) {
            auto& gx = grad_of(x);
            std::vector<T> dxhat(c);
            for (std::size_t i = 0; i < r; ++i) {
                T mean_d = 0, mean_dx = 0;
                for (std::size_t j = 0; j < c; ++j) {
                    dxhat[j] = g[i * c + j] * gain.value()[j];
                    mean_d += dxhat[j];
                    mean_dx += dxhat[j] * xhat[i * c + j];
                }
                mean_d /= T(c);
                mean_dx /= T(c);
                for (std::size_t j = 0; j < c; ++j)
                    gx[i * c + j] += rstd[i] * (dxhat[j] - mean_d - xhat[i * c + j] * mean_dx);
            }
        }
    });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
    T total = 0;
    for (T v : a.value().data()) total += v;
    return make_result<T>(Tensor<T>::scalar(total), {a}, [a](Node<T>& self) {
        auto& ga = grad_of(a);
        const T g = self.grad[0];
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
    if (a.numel() == 0) throw DimensionError("mean of empty tensor");
    return scale(sum(a), T(1) / T(a.numel()));
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
    const std::size_t r = a.rows(), c = a.cols();
    Tensor<T> out({c, r}, transposed(a.value().data().data(), r, c));
    return make_result<T>(std::move(out), {a}, [a, r, c](Node<T>& self) {
        auto& ga = grad_of(a);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad[j * r + i];
    });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
    Tensor<T> out = a.value().reshaped(std::move(shape));
    return make_result<T>(std::move(out), {a}, [a](Node<T>& self) {
        auto& ga = grad_of(a);
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad[i];
    });
}

template <typename T>
Var<T> slice_rows(const Var<T>& a, std::size_t begin, std::size_t end) {
    const std::size_t c = a.cols();
    if (begin > end || end > a.rows())
        throw DimensionError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) + ") out of " +
                             std::to_string(a.rows()));
    Tensor<T> out = Tensor<T>::matrix(end - begin, c);
    std::copy_n(a.value().data().data() + begin * c, (end - begin) * c, out.data().data());
    return make_result<T>(std::move(out), {a}, [a, begin, c](Node<T>& self) {
        auto& ga = grad_of(a);
        for (std::size_t i = 0; i < self.grad.numel(); ++i) ga[begin * c + i] += self.grad[i];
    });
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, std::size_t begin, std::size_t end) {
    const std::size_t r = a.rows(), c = a.cols(), w = end - begin;
    if (begin > end || end > c)
        throw DimensionError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) + ") out of " +
                             std::to_string(c));
    Tensor<T> out = Tensor<T>::matrix(r, w);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a.value()[i * c + begin + j];
    return make_result<T>(std::move(out), {a}, [a, r, c, w, begin](Node<T>& self) {
        auto& ga = grad_of(a);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) ga[i * c + begin + j] += self.grad[i * w + j];
    });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const std::size_t c = parts.front().cols();
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != c) throw DimensionError("concat_rows: column mismatch");
        rows += p.rows();
    }
    Tensor<T> out = Tensor<T>::matrix(rows, c);
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy_n(p.value().data().data(), p.numel(), out.data().data() + off);
        off += p.numel();
    }
    return make_result<T>(std::move(out), parts, [parts](Node<T>& self) {
        std::size_t off = 0;
        for (const auto& p : parts) {
            if (p.requires_grad()) {
                auto& gp = grad_of(p);
                for (std::size_t i = 0; i < p.numel(); ++i) gp[i] += self.grad[off + i];
            }
            off += p.numel();
        }
    });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t r = parts.front().rows();
    std::size_t c = 0;
    for (const auto& p : parts) {
        if (p.rows() != r) throw DimensionError("concat_cols: row mismatch");
        c += p.cols();
    }
    Tensor<T> out = Tensor<T>::matrix(r, c);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.cols();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) out[i * c + off + j] = p.value()[i * w + j];
        off += w;
    }
    return make_result<T>(std::move(out), parts, [parts, r, c](Node<T>& self) {
        std::size_t off = 0;
        for (const auto& p : parts) {
            const std::size_t w = p.cols();
            if (p.requires_grad()) {
                auto& gp = grad_of(p);
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += self.grad[i * c + off + j];
            }
            off += w;
        }
    });
}

template <typename T>
Var<T> pad_rows(const Var<T>& a, std::size_t seq, std::size_t before, std::size_t after) {
    const std::size_t c = a.cols();
    if (seq == 0 || a.rows() % seq != 0) throw DimensionError("pad_rows: rows not a multiple of seq");
    const std::size_t groups = a.rows() / seq, padded = seq + before + after;
    Tensor<T> out = Tensor<T>::matrix(groups * padded, c);
    for (std::size_t g = 0; g < groups; ++g)
        std::copy_n(a.value().data().data() + g * seq * c, seq * c,
                    out.data().data() + (g * padded + before) * c);
    return make_result<T>(std::move(out), {a}, [a, seq, before, padded, groups, c](Node<T>& self) {
        auto& ga = grad_of(a);
        for (std::size_t g = 0; g < groups; ++g)
            for (std::size_t i = 0; i < seq * c; ++i) ga[g * seq * c + i] += self.grad[(g * padded + before) * c + i];
    });
}

template <typename T>
Var<T> mean_pool_rows(const Var<T>& a, std::size_t groups) {
    const std::size_t c = a.cols();
    if (groups == 0 || a.rows() % groups != 0) throw DimensionError("mean_pool_rows: rows not divisible by groups");
    const std::size_t seq = a.rows() / groups;
    Tensor<T> out = Tensor<T>::matrix(groups, c);
    const T inv = T(1) / T(seq);
    for (std::size_t g = 0; g < groups; ++g)
        for (std::size_t s = 0; s < seq; ++s)
            for (std::size_t j = 0; j < c; ++j) out[g * c + j] += a.value()[(g * seq + s) * c + j] * inv;
    return make_result<T>(std::move(out), {a}, [a, groups, seq, c, inv](Node<T>& self) {
        auto& ga = grad_of(a);
        for (std::size_t g = 0; g < groups; ++g)
            for (std::size_t s = 0; s < seq; ++s)
                for (std::size_t j = 0; j < c; ++j) ga[(g * seq + s) * c + j] += self.grad[g * c + j] * inv;
    });
}

template <typename T>
Var<T> basis_expand(const Var<T>& coeffs, const Tensor<T>& basis, std::size_t channels) {
    const std::size_t batch = coeffs.rows(), seq = basis.rows(), kdim = basis.cols();
    if (coeffs.cols() != kdim * channels)
        throw DimensionError("basis_expand: coefficient width " + std::to_string(coeffs.cols()) + " != " +
                             std::to_string(kdim) + "*" + std::to_string(channels));
    Tensor<T> out = Tensor<T>::matrix(batch * seq, channels);
    for (std::size_t b = 0; b < batch; ++b)
        gemm_nn(seq, channels, kdim, basis.data().data(), coeffs.value().data().data() + b * kdim * channels,
                out.data().data() + b * seq * channels);
    return make_result<T>(std::move(out), {coeffs}, [coeffs, basis, batch, seq, kdim, channels](Node<T>& self) {
        auto& gc = grad_of(coeffs);
        for (std::size_t b = 0; b < batch; ++b)
            gemm_tn(seq, channels, kdim, basis.data().data(), self.grad.data().data() + b * seq * channels,
                    gc.data().data() + b * kdim * channels);
    });
}

template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t batch, std::size_t heads,
                 long band) {
    const std::size_t dim = q.cols();
    if (batch == 0 || heads == 0 || dim % heads != 0) throw DimensionError("attention: dim not divisible by heads");
    if (k.cols() != dim || v.cols() != dim || k.rows() != v.rows())
        throw DimensionError("attention: q/k/v shapes disagree");
    if (q.rows() % batch != 0 || k.rows() % batch != 0) throw DimensionError("attention: rows not divisible by batch");
    const std::size_t sq = q.rows() / batch, sk = k.rows() / batch, dh = dim / heads;
    const T sc = T(1) / std::sqrt(T(dh));
    const T* Q = q.value().data().data();
    const T* K = k.value().data().data();
    const T* V = v.value().data().data();

    std::vector<T> probs(batch * heads * sq * sk);
    Tensor<T> out = Tensor<T>::matrix(batch * sq, dim);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < sq; ++i) {
                T* p = probs.data() + ((b * heads + h) * sq + i) * sk;
                const T* qi = Q + (b * sq + i) * dim + h * dh;
                for (std::size_t j = 0; j < sk; ++j) {
                    const long dist = static_cast<long>(i) - static_cast<long>(j);
                    if (band >= 0 && (dist > band || -dist > band)) {
                        p[j] = -std::numeric_limits<T>::infinity();
                        continue;
                    }
                    const T* kj = K + (b * sk + j) * dim + h * dh;
                    T s = 0;
                    for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
                    p[j] = s * sc;
                }
                softmax_rows_inplace(p, 1, sk);
                T* oi = out.data().data() + (b * sq + i) * dim + h * dh;
                for (std::size_t j = 0; j < sk; ++j) {
                    if (p[j] == T(0)) continue;
                    const T* vj = V + (b * sk + j) * dim + h * dh;
                    for (std::size_t c = 0; c < dh; ++c) oi[c] += p[j] * vj[c];
                }
            }

    return make_result<T>(std::move(out), {q, k, v},
                          [q, k, v, batch, heads, sq, sk, dh, dim, sc, probs = std::move(probs)](Node<T>& self) {
        const T* Q = q.value().data().data();
        const T* K = k.value().data().data();
        const T* V = v.value().data().data();
        const T* G = self.grad.data().data();
        T* dQ = q.requires_grad() ? grad_of(q).data().data() : nullptr;
        T* dK = k.requires_grad() ? grad_of(k).data().data() : nullptr;
        T* dV = v.requires_grad() ? grad_of(v).data().data() : nullptr;
        std::vector<T> dp(sk);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t i = 0; i < sq; ++i) {
                    const T* p = probs.data() + ((b * heads + h) * sq + i) * sk;
                    const T* gi = G + (b * sq + i) * dim + h * dh;
                    T dot = 0;
                    for (std::size_t j = 0; j < sk; ++j) {
                        dp[j] = 0;
                        if (p[j] == T(0)) continue;
                        const T* vj = V + (b * sk + j) * dim + h * dh;
                        for (std::size_t c = 0; c < dh; ++c) dp[j] += gi[c] * vj[c];
                        dot += p[j] * dp[j];
                        if (dV) {
                            T* dvj = dV + (b * sk + j) * dim + h * dh;
                            for (std::size_t c = 0; c < dh; ++c) dvj[c] += p[j] * gi[c];
                        }
                    }
                    const T* qi = Q + (b * sq + i) * dim + h * dh;
                    for (std::size_t j = 0; j < sk; ++j) {
                        if (p[j] == T(0)) continue;
                        const T ds = p[j] * (dp[j] - dot) * sc;
                        const T* kj = K + (b * sk + j) * dim + h * dh;
                        if (dQ) {
                            T* dqi = dQ + (b * sq + i) * dim + h * dh;
                            for (std::size_t c = 0; c < dh; ++c) dqi[c] += ds * kj[c];
                        }
                        if (dK) {
                            T* dkj = dK + (b * sk + j) * dim + h * dh;
                            for (std::size_t c = 0; c < dh; ++c) dkj[c] += ds * qi[c];
                        }
                    }
                }
    });
}

template <typename T>
Var<T> window_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t batch, std::size_t heads,
                        std::size_t window) {
    if (window == 0 || window % 2 == 0)
        throw ContractError("window_attention: window must be odd and positive, got " + std::to_string(window));
    const std::size_t dim = q.cols();
    if (batch == 0 || heads == 0 || dim % heads != 0)
        throw DimensionError("window_attention: dim not divisible by heads");
    if (k.shape() != q.shape() || v.shape() != q.shape())
        throw DimensionError("window_attention: q/k/v shapes disagree");
    if (q.rows() % batch != 0) throw DimensionError("window_attention: rows not divisible by batch");
    const std::size_t seq = q.rows() / batch, dh = dim / heads, half = window / 2, padded = seq + 2 * half;
    const T sc = T(1) / std::sqrt(T(dh));

    // Zero-padded keys/values: padded row p of sequence b holds original row p - half.
    auto pad = [&](const Tensor<T>& src) {
        std::vector<T> out(batch * padded * dim, T(0));
        for (std::size_t b = 0; b < batch; ++b)
            std::copy_n(src.data().data() + b * seq * dim, seq * dim, out.data() + (b * padded + half) * dim);
        return out;
    };
    const std::vector<T> kp = pad(k.value()), vp = pad(v.value());
    auto is_pad = [half, seq](std::size_t p) { return p < half || p >= seq + half; };

    const T* Q = q.value().data().data();
    std::vector<T> probs(batch * heads * seq * window);
    Tensor<T> out = Tensor<T>::matrix(batch * seq, dim);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < seq; ++i) {
                T* p = probs.data() + ((b * heads + h) * seq + i) * window;
                const T* qi = Q + (b * seq + i) * dim + h * dh;
                for (std::size_t w = 0; w < window; ++w) {
                    const std::size_t pos = i + w;  // window over padded rows i .. i+window-1
                    if (is_pad(pos)) {
                        p[w] = -std::numeric_limits<T>::infinity();
                        continue;
                    }
                    const T* kw = kp.data() + (b * padded + pos) * dim + h * dh;
                    T s = 0;
                    for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kw[c];
                    p[w] = s * sc;
                }
                softmax_rows_inplace(p, 1, window);
                T* oi = out.data().data() + (b * seq + i) * dim + h * dh;
                for (std::size_t w = 0; w < window; ++w) {
                    if (p[w] == T(0)) continue;
                    const T* vw = vp.data() + (b * padded + i + w) * dim + h * dh;
                    for (std::size_t c = 0; c < dh; ++c) oi[c] += p[w] * vw[c];
                }
            }

    return make_result<T>(std::move(out), {q, k, v},
                          [q, k, v, batch, heads, seq, window, half, padded, dh, dim, sc, kp, vp,
                           probs = std::move(probs)](Node<T>& self) {
        const T* Q = q.value().data().data();
        const T* G = self.grad.data().data();
        std::vector<T> dkp(batch * padded * dim, T(0)), dvp(batch * padded * dim, T(0));
        T* dQ = q.requires_grad() ? grad_of(q).data().data() : nullptr;
        std::vector<T> dp(window);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t i = 0; i < seq; ++i) {
                    const T* p = probs.data() + ((b * heads + h) * seq + i) * window;
                    const T* gi = G + (b * seq + i) * dim + h * dh;
                    T dot = 0;
                    for (std::size_t w = 0; w < window; ++w) {
                        dp[w] = 0;
                        if (p[w] == T(0)) continue;
                        const std::size_t row = (b * padded + i + w) * dim + h * dh;
                        for (std::size_t c = 0; c < dh; ++c) {
                            dp[w] += gi[c] * vp[row + c];
                            dvp[row + c] += p[w] * gi[c];
                        }
                        dot += p[w] * dp[w];
                    }
                    const T* qi = Q + (b * seq + i) * dim + h * dh;
                    for (std::size_t w = 0; w < window; ++w) {
                        if (p[w] == T(0)) continue;
                        const T ds = p[w] * (dp[w] - dot) * sc;
                        const std::size_t row = (b * padded + i + w) * dim + h * dh;
                        if (dQ)
                            for (std::size_t c = 0; c < dh; ++c) dQ[(b * seq + i) * dim + h * dh + c] += ds * kp[row + c];
                        for (std::size_t c = 0; c < dh; ++c) dkp[row + c] += ds * qi[c];
                    }
                }
        auto unpad = [&](const Var<T>& target, const std::vector<T>& src) {
            if (!target.requires_grad()) return;
            auto& g = grad_of(target);
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t i = 0; i < seq * dim; ++i) g[b * seq * dim + i] += src[(b * padded + half) * dim + i];
        };
        unpad(k, dkp);
        unpad(v, dvp);
    });
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
    const std::size_t n = logits.rows(), c = logits.cols();
    if (labels.size() != n) throw DimensionError("softmax_cross_entropy: label count mismatch");
    std::vector<T> probs(logits.value().data().begin(), logits.value().data().end());
    softmax_rows_inplace(probs.data(), n, c);
    T loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
            throw ContractError("softmax_cross_entropy: label out of range");
        loss -= std::log(std::max(probs[i * c + labels[i]], std::numeric_limits<T>::min()));
    }
    loss /= T(n);
    return make_result<T>(Tensor<T>::scalar(loss), {logits}, [logits, labels, probs = std::move(probs), n, c](Node<T>& self) {
        auto& gl = grad_of(logits);
        const T g = self.grad[0] / T(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j)
                gl[i * c + j] += g * (probs[i * c + j] - (static_cast<std::size_t>(labels[i]) == j ? T(1) : T(0)));
    });
}

#define FAULTDIFF_INSTANTIATE_OPS(T)                                                                    \
    template Var<T> matmul(const Var<T>&, const Var<T>&);                                               \
    template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                \
    template Var<T> add(const Var<T>&, const Var<T>&);                                                  \
    template Var<T> sub(const Var<T>&, const Var<T>&);                                                  \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                                  \
    template Var<T> scale(const Var<T>&, T);                                                            \
    template Var<T> add_row(const Var<T>&, const Var<T>&);                                              \
    template Var<T> repeat_rows(const Var<T>&, std::size_t);                                            \
    template Var<T> tile_rows(const Var<T>&, std::size_t);                                              \
    template Var<T> gelu(const Var<T>&);                                                                \
    template Var<T> relu(const Var<T>&);                                                                \
    template Var<T> tanh(const Var<T>&);                                                                \
    template Var<T> abs(const Var<T>&);                                                                 \
    template Var<T> square(const Var<T>&);                                                              \
    template Var<T> clamp_max(const Var<T>&, T);                                                        \
    template Var<T> softmax(const Var<T>&, int);                                                        \
    template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                         \
    template Var<T> sum(const Var<T>&);                                                                 \
    template Var<T> mean(const Var<T>&);                                                                \
    template Var<T> transpose(const Var<T>&);                                                           \
    template Var<T> reshape(const Var<T>&, Shape);                                                      \
    template Var<T> slice_rows(const Var<T>&, std::size_t, std::size_t);                                \
    template Var<T> slice_cols(const Var<T>&, std::size_t, std::size_t);                                \
    template Var<T> concat_rows(const std::vector<Var<T>>&);                                            \
    template Var<T> concat_cols(const std::vector<Var<T>>&);                                            \
    template Var<T> pad_rows(const Var<T>&, std::size_t, std::size_t, std::size_t);                     \
    template Var<T> mean_pool_rows(const Var<T>&, std::size_t);                                         \
    template Var<T> basis_expand(const Var<T>&, const Tensor<T>&, std::size_t);                         \
    template Var<T> attention(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, std::size_t, long); \
    template Var<T> window_attention(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, std::size_t, \
                                     std::size_t);                                                      \
    template Var<T> softmax_cross_entropy(const Var<T>&, const std::vector<int>&);

FAULTDIFF_INSTANTIATE_OPS(float)
FAULTDIFF_INSTANTIATE_OPS(double)

} // namespace faultdiff::ops
