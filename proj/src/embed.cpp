#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>

#include "faultdiff/linalg.hpp"
#include "faultdiff/metrics.hpp"
#include "faultdiff/rng.hpp"

namespace faultdiff::metrics {

namespace fs = std::filesystem;

TensorD pca_2d(const TensorD& x) {
    const std::size_t n = x.rows(), k = x.cols();
    if (n < 3) throw ContractError("pca_2d: need at least 3 points");
    TensorD centered = x;
    for (std::size_t c = 0; c < k; ++c) {
        double m = 0;
        for (std::size_t r = 0; r < n; ++r) m += x.at(r, c);
        m /= double(n);
        for (std::size_t r = 0; r < n; ++r) centered.at(r, c) -= m;
    }
    TensorD out = TensorD::matrix(n, 2);
    if (k <= 256) {
        const auto eig = linalg::sym_eig(linalg::row_moments(x).cov);
        for (std::size_t a = 0; a < std::min<std::size_t>(2, k); ++a) {
            // Fix the sign so the largest loading is positive.
            std::size_t big = 0;
            for (std::size_t c = 1; c < k; ++c)
                if (std::abs(eig.vectors.at(c, a)) > std::abs(eig.vectors.at(big, a))) big = c;
            const double sign = eig.vectors.at(big, a) < 0 ? -1.0 : 1.0;
            for (std::size_t r = 0; r < n; ++r) {
                double s = 0;
                for (std::size_t c = 0; c < k; ++c) s += centered.at(r, c) * eig.vectors.at(c, a);
                out.at(r, a) = sign * s;
            }
        }
    } else if (n <= 256) {
        // Wide data: the Gram matrix shares the nonzero spectrum.
        const TensorD gram = linalg::matmul(centered, linalg::transpose(centered));
        const auto eig = linalg::sym_eig(gram);
        for (std::size_t a = 0; a < 2; ++a) {
            const double s = std::sqrt(std::max(eig.values[a], 0.0));
            std::size_t big = 0;
            for (std::size_t r = 1; r < n; ++r)
                if (std::abs(eig.vectors.at(r, a)) > std::abs(eig.vectors.at(big, a))) big = r;
            const double sign = eig.vectors.at(big, a) < 0 ? -1.0 : 1.0;
            for (std::size_t r = 0; r < n; ++r) out.at(r, a) = sign * s * eig.vectors.at(r, a);
        }
    } else {
        throw ContractError("pca_2d: more than 256 points with more than 256 features");
    }
    return out;
}

TensorD tsne_2d(const TensorD& x, double perplexity, std::size_t iterations, std::uint64_t seed) {
    const std::size_t n = x.rows();
    if (n < 3) throw ContractError("tsne_2d: need at least 3 points");
    const double perp = std::min(perplexity, double(n - 1) / 3.0);
    if (perp < 1.0)
        throw ContractError("tsne_2d: perplexity " + std::to_string(perp) + " infeasible for " + std::to_string(n) +
                            " points (needs >= 1)");

    std::vector<double> d2(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0;
            for (std::size_t c = 0; c < x.cols(); ++c) s += (x.at(i, c) - x.at(j, c)) * (x.at(i, c) - x.at(j, c));
            d2[i * n + j] = d2[j * n + i] = s;
        }

    // Conditional affinities with a per-point precision matched to log(perp).
    std::vector<double> p(n * n, 0.0);
    const double target = std::log(perp);
    for (std::size_t i = 0; i < n; ++i) {
        double beta = 1.0, lo = 0.0, hi = INFINITY;
        for (int it = 0; it < 100; ++it) {
            double sum = 0, hsum = 0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                const double v = std::exp(-beta * d2[i * n + j]);
                p[i * n + j] = v;
                sum += v;
                hsum += beta * d2[i * n + j] * v;
            }
            if (sum <= 0) sum = 1e-300;
            const double h = std::log(sum) + hsum / sum;
            for (std::size_t j = 0; j < n; ++j) p[i * n + j] /= sum;
            if (std::abs(h - target) < 1e-5) break;
            if (h > target) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2 : 0.5 * (beta + hi);
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
    }
    std::vector<double> P(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            P[i * n + j] = i == j ? 0.0 : std::max((p[i * n + j] + p[j * n + i]) / (2.0 * double(n)), 1e-12);

    Rng rng(seed);
    std::vector<double> y(n * 2), vel(n * 2, 0.0), gains(n * 2, 1.0), grad(n * 2);
    for (auto& v : y) v = 1e-2 * rng.normal();
    const std::size_t exaggerate = std::min<std::size_t>(250, iterations / 4);
    std::vector<double> q(n * n);
    for (std::size_t it = 0; it < iterations; ++it) {
        const double ex = it < exaggerate ? 12.0 : 1.0;
        const double momentum = it < 250 ? 0.5 : 0.8;
        double qsum = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) {
                    q[i * n + j] = 0;
                    continue;
                }
                const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
                q[i * n + j] = 1.0 / (1.0 + dx * dx + dy * dy);
                qsum += q[i * n + j];
            }
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                const double w = (ex * P[i * n + j] - q[i * n + j] / qsum) * q[i * n + j];
                grad[2 * i] += 4.0 * w * (y[2 * i] - y[2 * j]);
                grad[2 * i + 1] += 4.0 * w * (y[2 * i + 1] - y[2 * j + 1]);
            }
        for (std::size_t k = 0; k < 2 * n; ++k) {
            gains[k] = (grad[k] > 0) != (vel[k] > 0) ? gains[k] + 0.2 : std::max(gains[k] * 0.8, 0.01);
            vel[k] = momentum * vel[k] - 200.0 * gains[k] * grad[k];
            y[k] += vel[k];
        }
        for (int a = 0; a < 2; ++a) {
            double m = 0;
            for (std::size_t i = 0; i < n; ++i) m += y[2 * i + a];
            m /= double(n);
            for (std::size_t i = 0; i < n; ++i) y[2 * i + a] -= m;
        }
    }
    TensorD out = TensorD::matrix(n, 2);
    std::copy(y.begin(), y.end(), out.data().begin());
    return out;
}

std::vector<std::pair<double, double>> kde_1d(const std::vector<double>& values, double lo, double hi,
                                              std::size_t grid) {
    if (values.empty()) throw ContractError("kde_1d: no values");
    if (grid < 2 || !(hi > lo)) throw ContractError("kde_1d: need grid >= 2 and hi > lo");
    const double n = double(values.size());
    double m = 0, sd = 0;
    for (double v : values) m += v;
    m /= n;
    for (double v : values) sd += (v - m) * (v - m);
    sd = values.size() > 1 ? std::sqrt(sd / (n - 1)) : 0.0;
    double h = 1.06 * sd * std::pow(n, -0.2);
    if (!(h > 0)) h = 1e-3 * (hi - lo);
    std::vector<std::pair<double, double>> out;
    for (std::size_t g = 0; g < grid; ++g) {
        const double at = lo + (hi - lo) * double(g) / double(grid - 1);
        double dens = 0;
        for (double v : values) {
            const double z = (at - v) / h;
            dens += std::exp(-0.5 * z * z);
        }
        out.emplace_back(at, dens / (n * h * std::sqrt(2.0 * M_PI)));
    }
    return out;
}

Embedding embed_2d(const std::vector<std::pair<std::string, data::Dataset>>& sets, const EmbedOptions& options) {
    std::vector<std::string> labels;
    std::size_t total = 0, width = 0;
    for (const auto& [label, ds] : sets) {
        if (ds.samples.empty()) continue;
        const std::size_t w = ds.seq_len() * ds.channels();
        if (width && w != width) throw DimensionError("embed_2d: corpus '" + ds.id + "' has a different shape");
        width = w;
        total += ds.size();
    }
    if (total < 3) throw ContractError("embed_2d: need at least 3 samples in total");
    TensorD x = TensorD::matrix(total, width);
    std::size_t r = 0;
    for (const auto& [label, ds] : sets)
        for (const auto& s : ds.samples) {
            std::copy(s.values.data().begin(), s.values.data().end(), &x.at(r++, 0));
            labels.push_back(label);
        }
    const TensorD y = options.method == EmbedMethod::pca
                          ? pca_2d(x)
                          : tsne_2d(x, options.perplexity, options.iterations, options.seed);

    Embedding e;
    for (std::size_t i = 0; i < total; ++i) e.points.push_back({labels[i], y.at(i, 0), y.at(i, 1)});
    std::vector<std::string> distinct;
    for (const auto& l : labels)
        if (std::find(distinct.begin(), distinct.end(), l) == distinct.end()) distinct.push_back(l);
    for (int axis = 0; axis < 2; ++axis) {
        double lo = INFINITY, hi = -INFINITY;
        for (std::size_t i = 0; i < total; ++i) {
            lo = std::min(lo, y.at(i, axis));
            hi = std::max(hi, y.at(i, axis));
        }
        const double pad = hi > lo ? 0.1 * (hi - lo) : 1.0;
        for (const auto& l : distinct) {
            std::vector<double> v;
            for (std::size_t i = 0; i < total; ++i)
                if (labels[i] == l) v.push_back(y.at(i, axis));
            for (const auto& [g, dens] : kde_1d(v, lo - pad, hi + pad, options.kde_grid))
                e.kde.push_back({l, axis == 0 ? 'x' : 'y', g, dens});
        }
    }
    return e;
}

namespace {

std::string fmt(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

} // namespace

void write_embedding(const Embedding& e, const fs::path& points_csv, const fs::path& kde_csv) {
    for (const auto& p : {points_csv, kde_csv})
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream pts(points_csv, std::ios::binary);
    pts << "label,x,y\n";
    for (const auto& p : e.points) pts << p.label << ',' << fmt(p.x) << ',' << fmt(p.y) << '\n';
    std::ofstream kde(kde_csv, std::ios::binary);
    kde << "label,axis,grid,density\n";
    for (const auto& k : e.kde) kde << k.label << ',' << k.axis << ',' << fmt(k.grid) << ',' << fmt(k.density) << '\n';
}

} // namespace faultdiff::metrics
