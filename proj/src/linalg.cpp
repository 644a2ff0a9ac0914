#include "faultdiff/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace faultdiff::linalg {

SymEig sym_eig(const TensorD& a, double symmetry_tol) {
    const std::size_t n = a.rows();
    if (a.rank() != 2 || a.cols() != n) throw DimensionError("sym_eig: matrix must be square, got " + shape_str(a.shape()));
    if (n > 256) throw ContractError("sym_eig: n = " + std::to_string(n) + " exceeds 256");

    double scale = 0;
    for (double v : a.data()) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(a.at(i, j) - a.at(j, i)) > symmetry_tol * std::max(scale, 1.0))
                throw ContractError("sym_eig: input is not symmetric at (" + std::to_string(i) + "," +
                                    std::to_string(j) + ")");

    TensorD m = a;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) m.at(i, j) = m.at(j, i) = 0.5 * (a.at(i, j) + a.at(j, i));
    TensorD v = TensorD::matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) v.at(i, i) = 1.0;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0, total = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                total += m.at(i, j) * m.at(i, j);
                if (i != j) off += m.at(i, j) * m.at(i, j);
            }
        if (off <= 1e-30 * std::max(total, 1e-300)) break;

        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = m.at(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (m.at(q, q) - m.at(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double mkp = m.at(k, p), mkq = m.at(k, q);
                    m.at(k, p) = c * mkp - s * mkq;
                    m.at(k, q) = s * mkp + c * mkq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double mpk = m.at(p, k), mqk = m.at(q, k);
                    m.at(p, k) = c * mpk - s * mqk;
                    m.at(q, k) = s * mpk + c * mqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v.at(k, p), vkq = v.at(k, q);
                    v.at(k, p) = c * vkp - s * vkq;
                    v.at(k, q) = s * vkp + c * vkq;
                }
            }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return m.at(x, x) > m.at(y, y); });
    SymEig out;
    out.values.resize(n);
    out.vectors = TensorD::matrix(n, n);
    for (std::size_t c = 0; c < n; ++c) {
        out.values[c] = m.at(order[c], order[c]);
        for (std::size_t r = 0; r < n; ++r) out.vectors.at(r, c) = v.at(r, order[c]);
    }
    return out;
}

TensorD sym_apply(const SymEig& eig, double (*f)(double)) {
    const std::size_t n = eig.values.size();
    TensorD out = TensorD::matrix(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        const double fk = f(eig.values[k]);
        for (std::size_t i = 0; i < n; ++i) {
            const double vik = eig.vectors.at(i, k) * fk;
            for (std::size_t j = 0; j < n; ++j) out.at(i, j) += vik * eig.vectors.at(j, k);
        }
    }
    return out;
}

TensorD matmul(const TensorD& a, const TensorD& b) {
    if (a.cols() != b.rows()) throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    TensorD out = TensorD::matrix(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double av = a.at(i, k);
            for (std::size_t j = 0; j < b.cols(); ++j) out.at(i, j) += av * b.at(k, j);
        }
    return out;
}

TensorD transpose(const TensorD& a) {
    TensorD out = TensorD::matrix(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
    return out;
}

Moments row_moments(const TensorD& x) {
    const std::size_t n = x.rows(), d = x.cols();
    if (n < 2) throw ContractError("row_moments: need at least 2 rows");
    Moments m;
    m.mean.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) m.mean[j] += x.at(i, j);
    for (double& v : m.mean) v /= static_cast<double>(n);
    m.cov = TensorD::matrix(d, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < d; ++a) {
            const double da = x.at(i, a) - m.mean[a];
            for (std::size_t b = a; b < d; ++b) m.cov.at(a, b) += da * (x.at(i, b) - m.mean[b]);
        }
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
            m.cov.at(a, b) /= static_cast<double>(n - 1);
            m.cov.at(b, a) = m.cov.at(a, b);
        }
    return m;
}

} // namespace faultdiff::linalg
