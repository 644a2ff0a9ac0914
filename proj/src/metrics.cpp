#include "faultdiff/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "faultdiff/linalg.hpp"
#include "faultdiff/nn.hpp"
#include "faultdiff/ops.hpp"
#include "faultdiff/parallel.hpp"
#include "faultdiff/rng.hpp"
#include "faultdiff/training.hpp"

namespace faultdiff::metrics {

namespace fs = std::filesystem;
using data::Dataset;

// ---------------------------------------------------------------------------
// Evaluation networks

Mlp::Mlp(std::size_t inputs, std::size_t outputs, const Options& options, std::uint64_t seed) : options_(options) {
    if (inputs == 0 || outputs == 0) throw ContractError("Mlp: zero-sized layer");
    Rng rng(seed);
    std::size_t in = inputs;
    std::vector<std::size_t> sizes = options_.hidden;
    sizes.push_back(outputs);
    for (std::size_t l = 0; l < sizes.size(); ++l) {
        const std::string name = "mlp." + std::to_string(l);
        const double bound = 1.0 / std::sqrt(double(in));
        auto& w = params_.add(name + ".w", nn::uniform_init<float>({in, sizes[l]}, bound, rng));
        auto& b = params_.add(name + ".b", TensorF({sizes[l]}));
        layers_.emplace_back(&w, &b);
        in = sizes[l];
    }
    mean_.assign(inputs, 0.0);
    scale_.assign(inputs, 1.0);
}

TensorF Mlp::standardize(const TensorD& x) const {
    if (x.cols() != mean_.size()) throw DimensionError("Mlp: input width mismatch");
    TensorF out = TensorF::matrix(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) out.at(r, c) = static_cast<float>((x.at(r, c) - mean_[c]) / scale_[c]);
    return out;
}

namespace {

template <typename Layers>
Var<float> mlp_forward(Layers& layers, const Var<float>& x) {
    Var<float> h = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        h = ops::linear(h, Var<float>::param(*layers[l].first), Var<float>::param(*layers[l].second));
        if (l + 1 < layers.size()) h = ops::relu(h);
    }
    return h;
}

} // namespace

template <typename LossFn>
void Mlp::fit(const TensorD& x, LossFn&& loss) {
    if (x.rows() == 0) throw ContractError("Mlp: empty training set");
    for (std::size_t c = 0; c < x.cols(); ++c) {
        double m = 0, v = 0;
        for (std::size_t r = 0; r < x.rows(); ++r) m += x.at(r, c);
        m /= double(x.rows());
        for (std::size_t r = 0; r < x.rows(); ++r) v += (x.at(r, c) - m) * (x.at(r, c) - m);
        v = std::sqrt(v / double(x.rows()));
        mean_[c] = m;
        scale_[c] = v > 1e-12 ? v : 1.0;
    }
    const Var<float> input = Var<float>::constant(standardize(x));
    training::Adam adam;
    for (std::size_t e = 0; e < options_.epochs; ++e) {
        params_.zero_grad();
        const Var<float> l = loss(mlp_forward(layers_, input));
        backward(l);
        adam.step(params_, options_.learning_rate);
    }
}

void Mlp::fit_classifier(const TensorD& x, const std::vector<int>& labels) {
    fit(x, [&](const Var<float>& logits) { return ops::softmax_cross_entropy(logits, labels); });
}

void Mlp::fit_regressor(const TensorD& x, const TensorD& y) {
    const Var<float> target = Var<float>::constant(y.cast<float>());
    fit(x, [&](const Var<float>& pred) { return ops::mean(ops::square(ops::sub(pred, target))); });
}

TensorD Mlp::predict(const TensorD& x) const {
    NoGradGuard guard;
    auto& layers = const_cast<std::vector<std::pair<Parameter<float>*, Parameter<float>*>>&>(layers_);
    return mlp_forward(layers, Var<float>::constant(standardize(x))).value().cast<double>();
}

std::vector<int> Mlp::classify(const TensorD& x) const {
    const TensorD logits = predict(x);
    std::vector<int> out(logits.rows());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c)
            if (logits.at(r, c) > logits.at(r, best)) best = c;
        out[r] = static_cast<int>(best);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Helpers

TensorD flatten(const Dataset& ds) {
    const std::size_t per = ds.seq_len() * ds.channels();
    TensorD x = TensorD::matrix(ds.size(), per);
    for (std::size_t i = 0; i < ds.size(); ++i)
        for (std::size_t k = 0; k < per; ++k) x.at(i, k) = ds.samples[i].values[k];
    return x;
}

namespace {

void check_pair(const Dataset& real, const Dataset& synth, const char* who) {
    if (real.samples.empty() || synth.samples.empty()) throw ContractError(std::string(who) + ": empty corpus");
    if (real.seq_len() != synth.seq_len() || real.channels() != synth.channels())
        throw DimensionError(std::string(who) + ": real is " + std::to_string(real.seq_len()) + "x" +
                             std::to_string(real.channels()) + ", synthetic is " + std::to_string(synth.seq_len()) +
                             "x" + std::to_string(synth.channels()));
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    return idx;
}

TensorD take_rows(const TensorD& x, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end) {
    TensorD out = TensorD::matrix(end - begin, x.cols());
    for (std::size_t r = begin; r < end; ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) out.at(r - begin, c) = x.at(idx[r], c);
    return out;
}

TensorD stack(const TensorD& a, const TensorD& b) {
    TensorD out = TensorD::matrix(a.rows() + b.rows(), a.cols());
    std::copy(a.data().begin(), a.data().end(), out.data().begin());
    std::copy(b.data().begin(), b.data().end(), out.data().begin() + a.numel());
    return out;
}

// Inputs: first seq_len - 1 steps flattened; target: the last step.
void forecast_split(const Dataset& ds, TensorD& x, TensorD& y) {
    const std::size_t tau = ds.seq_len(), d = ds.channels();
    x = TensorD::matrix(ds.size(), (tau - 1) * d);
    y = TensorD::matrix(ds.size(), d);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& v = ds.samples[i].values;
        for (std::size_t k = 0; k < (tau - 1) * d; ++k) x.at(i, k) = v[k];
        for (std::size_t c = 0; c < d; ++c) y.at(i, c) = v.at(tau - 1, c);
    }
}

// Regression in target-standardized units; a constant target is predicted
// exactly by its mean.
double fit_and_score_forecast(const TensorD& xtr, const TensorD& ytr, const TensorD& xte, const TensorD& yte,
                              std::uint64_t seed) {
    const std::size_t d = ytr.cols();
    std::vector<double> mean(d, 0.0), sd(d, 0.0);
    for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t r = 0; r < ytr.rows(); ++r) mean[c] += ytr.at(r, c);
        mean[c] /= double(ytr.rows());
        for (std::size_t r = 0; r < ytr.rows(); ++r) sd[c] += (ytr.at(r, c) - mean[c]) * (ytr.at(r, c) - mean[c]);
        sd[c] = std::sqrt(sd[c] / double(ytr.rows()));
    }
    TensorD yn = ytr;
    for (std::size_t r = 0; r < yn.rows(); ++r)
        for (std::size_t c = 0; c < d; ++c) yn.at(r, c) = sd[c] > 1e-12 ? (ytr.at(r, c) - mean[c]) / sd[c] : 0.0;
    Mlp net(xtr.cols(), d, {}, seed);
    net.fit_regressor(xtr, yn);
    const TensorD pred = net.predict(xte);
    double err = 0;
    for (std::size_t r = 0; r < xte.rows(); ++r)
        for (std::size_t c = 0; c < d; ++c) {
            const double p = sd[c] > 1e-12 ? mean[c] + sd[c] * pred.at(r, c) : mean[c];
            err += std::abs(p - yte.at(r, c));
        }
    return err / double(xte.rows() * d);
}

} // namespace

// ---------------------------------------------------------------------------
// Scores

double discriminative_score(const Dataset& real, const Dataset& synth, std::uint64_t seed) {
    check_pair(real, synth, "discriminative_score");
    if (real.size() < 2 || synth.size() < 2) throw ContractError("discriminative_score: need >= 2 samples per corpus");
    const TensorD xr = flatten(real), xs = flatten(synth);
    const auto ir = shuffled(real.size(), derive_seed(seed, 1));
    const auto is = shuffled(synth.size(), derive_seed(seed, 2));
    auto split = [](std::size_t n) { return std::clamp<std::size_t>((n * 8 + 5) / 10, 1, n - 1); };
    const std::size_t nr = split(real.size()), ns = split(synth.size());

    const TensorD xtrain = stack(take_rows(xr, ir, 0, nr), take_rows(xs, is, 0, ns));
    const TensorD xtest = stack(take_rows(xr, ir, nr, real.size()), take_rows(xs, is, ns, synth.size()));
    std::vector<int> ytrain(nr, 1), ytest(real.size() - nr, 1);
    ytrain.resize(nr + ns, 0);
    ytest.resize(xtest.rows(), 0);

    Mlp net(xtrain.cols(), 2, {}, derive_seed(seed, 3));
    net.fit_classifier(xtrain, ytrain);
    const auto pred = net.classify(xtest);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == ytest[i];
    return std::abs(double(correct) / double(pred.size()) - 0.5);
}

double predictive_score(const Dataset& real, const Dataset& synth, std::uint64_t seed) {
    check_pair(real, synth, "predictive_score");
    if (real.seq_len() < 3) throw ContractError("predictive_score: seq_len must be >= 3");
    TensorD xs, ys, xr, yr;
    forecast_split(synth, xs, ys);
    forecast_split(real, xr, yr);
    return fit_and_score_forecast(xs, ys, xr, yr, derive_seed(seed, 4));
}

double predictive_baseline(const Dataset& real, std::uint64_t seed) {
    if (real.size() < 2) throw ContractError("predictive_baseline: need >= 2 samples");
    if (real.seq_len() < 3) throw ContractError("predictive_baseline: seq_len must be >= 3");
    TensorD x, y;
    forecast_split(real, x, y);
    const auto idx = shuffled(real.size(), derive_seed(seed, 5));
    const std::size_t half = real.size() / 2;
    return fit_and_score_forecast(take_rows(x, idx, 0, half), take_rows(y, idx, 0, half),
                                  take_rows(x, idx, half, real.size()), take_rows(y, idx, half, real.size()),
                                  derive_seed(seed, 4));
}

TensorD context_embed(const Dataset& ds, std::uint64_t encoder_seed) {
    constexpr std::size_t kHidden = 16, kOut = 16, kKernel = 3;
    const std::size_t tau = ds.seq_len(), d = ds.channels();
    Rng rng(encoder_seed);
    auto init = [&](std::size_t out, std::size_t in) {
        std::vector<double> w(out * in * kKernel);
        const double s = 1.0 / std::sqrt(double(in * kKernel));
        for (auto& v : w) v = s * rng.normal();
        std::vector<double> b(out);
        for (auto& v : b) v = 0.1 * rng.normal();
        return std::make_pair(w, b);
    };
    const auto [w1, b1] = init(kHidden, d);
    const auto [w2, b2] = init(kOut, kHidden);

    // 'same' convolution along time with zero padding, then tanh.
    auto conv = [&](const std::vector<double>& in, std::size_t cin, const std::vector<double>& w,
                    const std::vector<double>& b, std::size_t cout) {
        std::vector<double> out(tau * cout);
        for (std::size_t t = 0; t < tau; ++t)
            for (std::size_t o = 0; o < cout; ++o) {
                double acc = b[o];
                for (std::size_t k = 0; k < kKernel; ++k) {
                    const long src = long(t) + long(k) - 1;
                    if (src < 0 || src >= long(tau)) continue;
                    for (std::size_t c = 0; c < cin; ++c) acc += w[(o * cin + c) * kKernel + k] * in[src * cin + c];
                }
                out[t * cout + o] = std::tanh(acc);
            }
        return out;
    };

    TensorD emb = TensorD::matrix(ds.size(), kOut);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& v = ds.samples[i].values;
        const std::vector<double> x(v.data().begin(), v.data().end());
        const auto h2 = conv(conv(x, d, w1, b1, kHidden), kHidden, w2, b2, kOut);
        for (std::size_t t = 0; t < tau; ++t)
            for (std::size_t o = 0; o < kOut; ++o) emb.at(i, o) += h2[t * kOut + o] / double(tau);
    }
    return emb;
}

double frechet_distance(const TensorD& a, const TensorD& b) {
    if (a.rows() < 2 || b.rows() < 2) throw ContractError("frechet_distance: need >= 2 points per cloud");
    if (a.cols() != b.cols()) throw DimensionError("frechet_distance: embedding widths differ");
    auto ma = linalg::row_moments(a), mb = linalg::row_moments(b);
    const std::size_t k = a.cols();
    for (std::size_t i = 0; i < k; ++i) {
        ma.cov.at(i, i) += 1e-6;
        mb.cov.at(i, i) += 1e-6;
    }
    auto root = [](double v) { return std::sqrt(std::max(v, 0.0)); };
    const auto ea = linalg::sym_eig(ma.cov);
    for (double v : ea.values)
        if (!std::isfinite(v) || v <= 0) throw MetricError("frechet_distance: degenerate covariance");
    const TensorD ra = linalg::sym_apply(ea, +[](double v) { return std::sqrt(std::max(v, 0.0)); });
    TensorD inner = linalg::matmul(linalg::matmul(ra, mb.cov), ra);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j) inner.at(i, j) = inner.at(j, i) = 0.5 * (inner.at(i, j) + inner.at(j, i));
    double tr_sqrt = 0;
    for (double v : linalg::sym_eig(inner).values) tr_sqrt += root(v);
    double dist = 0, tr = 0;
    for (std::size_t i = 0; i < k; ++i) {
        dist += (ma.mean[i] - mb.mean[i]) * (ma.mean[i] - mb.mean[i]);
        tr += ma.cov.at(i, i) + mb.cov.at(i, i);
    }
    const double fid = dist + tr - 2.0 * tr_sqrt;
    if (!std::isfinite(fid)) throw MetricError("frechet_distance: non-finite result");
    return std::max(fid, 0.0);
}

double context_fid(const Dataset& real, const Dataset& synth, std::uint64_t encoder_seed) {
    check_pair(real, synth, "context_fid");
    return frechet_distance(context_embed(real, encoder_seed), context_embed(synth, encoder_seed));
}

TensorD mean_correlation(const Dataset& ds, bool* constant_channel) {
    const std::size_t tau = ds.seq_len(), d = ds.channels();
    TensorD acc = TensorD::matrix(d, d);
    for (const auto& s : ds.samples) {
        std::vector<double> mean(d, 0.0), sd(d, 0.0);
        for (std::size_t c = 0; c < d; ++c) {
            for (std::size_t t = 0; t < tau; ++t) mean[c] += s.at(t, c);
            mean[c] /= double(tau);
            for (std::size_t t = 0; t < tau; ++t) sd[c] += (s.at(t, c) - mean[c]) * (s.at(t, c) - mean[c]);
            sd[c] = std::sqrt(sd[c]);
            if (sd[c] == 0 && constant_channel) *constant_channel = true;
        }
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                double r = 0;
                if (i == j) r = 1;
                else if (sd[i] > 0 && sd[j] > 0) {
                    for (std::size_t t = 0; t < tau; ++t) r += (s.at(t, i) - mean[i]) * (s.at(t, j) - mean[j]);
                    r /= sd[i] * sd[j];
                }
                acc.at(i, j) += r;
            }
    }
    for (auto& v : acc.data()) v /= double(ds.size());
    return acc;
}

double correlational_score(const Dataset& real, const Dataset& synth, bool* constant_channel) {
    check_pair(real, synth, "correlational_score");
    if (real.channels() < 2) throw ContractError("correlational_score: needs at least 2 channels");
    const TensorD cr = mean_correlation(real, constant_channel), cs = mean_correlation(synth, constant_channel);
    double score = 0;
    for (std::size_t k = 0; k < cr.numel(); ++k) score += std::abs(cr[k] - cs[k]);
    return score;
}

TensorD acf_features(const Dataset& ds, std::size_t max_lag) {
    const std::size_t tau = ds.seq_len(), d = ds.channels();
    if (max_lag == 0 || max_lag >= tau) throw ContractError("acf_features: max_lag must lie in [1, seq_len)");
    TensorD f = TensorD::matrix(ds.size(), d * max_lag);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& s = ds.samples[i];
        for (std::size_t c = 0; c < d; ++c) {
            double m = 0, var = 0;
            for (std::size_t t = 0; t < tau; ++t) m += s.at(t, c);
            m /= double(tau);
            for (std::size_t t = 0; t < tau; ++t) var += (s.at(t, c) - m) * (s.at(t, c) - m);
            for (std::size_t l = 1; l <= max_lag; ++l) {
                double acc = 0;
                if (var > 0)
                    for (std::size_t t = 0; t + l < tau; ++t) acc += (s.at(t, c) - m) * (s.at(t + l, c) - m);
                f.at(i, c * max_lag + l - 1) = var > 0 ? acc / var : 0.0;
            }
        }
    }
    return f;
}

namespace {

double mean_pairwise_distance(const TensorD& f) {
    double acc = 0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < f.rows(); ++i)
        for (std::size_t j = i + 1; j < f.rows(); ++j) {
            double d = 0;
            for (std::size_t c = 0; c < f.cols(); ++c) d += (f.at(i, c) - f.at(j, c)) * (f.at(i, c) - f.at(j, c));
            acc += std::sqrt(d);
            ++pairs;
        }
    return acc / double(pairs);
}

} // namespace

double diversity_score(const Dataset& real, const Dataset& synth, std::size_t max_lag) {
    check_pair(real, synth, "diversity_score");
    if (synth.size() < 2) throw ContractError("diversity_score: need at least 2 synthetic samples");
    if (real.size() < 2) throw ContractError("diversity_score: need at least 2 real samples");
    const double ref = mean_pairwise_distance(acf_features(real, max_lag));
    if (!(ref > 0)) throw MetricError("diversity_score: real samples have identical features");
    return mean_pairwise_distance(acf_features(synth, max_lag)) / ref;
}

ClassScores score_predictions(const std::vector<int>& truth, const std::vector<int>& predicted, std::size_t classes) {
    if (truth.size() != predicted.size() || truth.empty()) throw ContractError("score_predictions: bad label vectors");
    std::vector<double> tp(classes, 0), fp(classes, 0), fn(classes, 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] == predicted[i]) {
            ++correct;
            tp[truth[i]] += 1;
        } else {
            fp[predicted[i]] += 1;
            fn[truth[i]] += 1;
        }
    }
    ClassScores s;
    s.accuracy = double(correct) / double(truth.size());
    for (std::size_t c = 0; c < classes; ++c) {
        const double p = tp[c] + fp[c] > 0 ? tp[c] / (tp[c] + fp[c]) : 0.0;
        const double r = tp[c] + fn[c] > 0 ? tp[c] / (tp[c] + fn[c]) : 0.0;
        s.precision += p;
        s.recall += r;
        s.f1 += p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    }
    s.precision /= double(classes);
    s.recall /= double(classes);
    s.f1 /= double(classes);
    return s;
}

ClassScores downstream_eval(const std::vector<Dataset>& train_real, const std::vector<Dataset>& synth,
                            const std::vector<Dataset>& test, std::uint64_t seed) {
    std::vector<std::string> classes;
    for (const auto& ds : train_real)
        if (std::find(classes.begin(), classes.end(), ds.label) == classes.end()) classes.push_back(ds.label);
    std::sort(classes.begin(), classes.end());
    if (classes.size() < 2) throw ContractError("downstream_eval: need at least 2 classes");
    auto class_of = [&](const std::string& label) {
        const auto it = std::find(classes.begin(), classes.end(), label);
        if (it == classes.end()) throw ContractError("downstream_eval: label '" + label + "' has no real training data");
        return static_cast<int>(it - classes.begin());
    };

    std::size_t tau = 0, dim = 0;
    auto collect = [&](const std::vector<Dataset>& sets, std::vector<std::vector<double>>& rows, std::vector<int>& y) {
        for (const auto& ds : sets) {
            if (ds.samples.empty()) continue;
            if (tau == 0) {
                tau = ds.seq_len();
                dim = ds.channels();
            }
            if (ds.seq_len() != tau || ds.channels() != dim)
                throw DimensionError("downstream_eval: corpus '" + ds.id + "' has a different shape");
            const int cls = class_of(ds.label);
            for (const auto& s : ds.samples) {
                rows.emplace_back(s.values.data().begin(), s.values.data().end());
                y.push_back(cls);
            }
        }
    };
    std::vector<std::vector<double>> train_rows, test_rows;
    std::vector<int> ytrain, ytest;
    collect(train_real, train_rows, ytrain);
    collect(synth, train_rows, ytrain);
    collect(test, test_rows, ytest);
    for (std::size_t c = 0; c < classes.size(); ++c)
        if (std::find(ytest.begin(), ytest.end(), int(c)) == ytest.end())
            throw ContractError("downstream_eval: class '" + classes[c] + "' has no test samples");

    auto to_tensor = [](const std::vector<std::vector<double>>& rows) {
        TensorD x = TensorD::matrix(rows.size(), rows.front().size());
        for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r].begin(), rows[r].end(), &x.at(r, 0));
        return x;
    };
    Mlp net(train_rows.front().size(), classes.size(), {}, derive_seed(seed, 6));
    net.fit_classifier(to_tensor(train_rows), ytrain);
    return score_predictions(ytest, net.classify(to_tensor(test_rows)), classes.size());
}

// ---------------------------------------------------------------------------
// Reports

std::vector<std::string> MetricReport::metrics() const {
    std::vector<std::string> out;
    for (const auto& r : rows)
        if (std::find(out.begin(), out.end(), r.metric) == out.end()) out.push_back(r.metric);
    return out;
}

std::vector<std::uint64_t> MetricReport::seeds() const {
    std::vector<std::uint64_t> out;
    for (const auto& r : rows)
        if (std::find(out.begin(), out.end(), r.seed) == out.end()) out.push_back(r.seed);
    return out;
}

std::optional<double> MetricReport::median(const std::string& metric) const {
    std::vector<double> v;
    for (const auto& r : rows)
        if (r.metric == metric) v.push_back(r.value);
    if (v.empty()) return std::nullopt;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

MetricReport evaluate(const Dataset& real, const Dataset& synth, const EvaluateOptions& options) {
    check_pair(real, synth, "evaluate");
    for (const auto& m : options.metrics)
        if (std::find(all_metric_names().begin(), all_metric_names().end(), m) == all_metric_names().end())
            throw ContractError("evaluate: unknown metric '" + m + "'");
    if (options.seeds.empty()) throw ContractError("evaluate: no seeds given");

    MetricReport report;
    report.corpus_real = real.id;
    report.corpus_synth = synth.id;
    report.config_hash = options.config_hash;

    struct Task {
        std::string metric;
        std::uint64_t seed;
        double value = 0;
        bool constant_channel = false;
    };
    std::vector<Task> tasks;
    for (const auto seed : options.seeds)
        for (const auto& m : options.metrics) tasks.push_back({m, seed});

    parallel_for(tasks.size(), [&](std::size_t i) {
        auto& t = tasks[i];
        if (t.metric == "context_fid") t.value = context_fid(real, synth);
        else if (t.metric == "correlational") t.value = correlational_score(real, synth, &t.constant_channel);
        else if (t.metric == "discriminative") t.value = discriminative_score(real, synth, t.seed);
        else if (t.metric == "predictive") t.value = predictive_score(real, synth, t.seed);
        else t.value = diversity_score(real, synth, options.max_lag);
        if (!std::isfinite(t.value)) throw MetricError(t.metric + " produced a non-finite value");
    });

    bool warned = false;
    for (const auto& t : tasks) {
        report.rows.push_back({t.metric, t.value, t.seed});
        if (t.constant_channel && !warned) {
            report.warnings.push_back("correlational: constant channel found; its correlations were treated as 0");
            warned = true;
        }
    }
    return report;
}

namespace {

std::string fmt(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

} // namespace

std::string report_json(const MetricReport& report) {
    using nlohmann::ordered_json;
    ordered_json j;
    j["metric_version"] = report.metric_version;
    j["corpus_real"] = report.corpus_real;
    j["corpus_synth"] = report.corpus_synth;
    j["config_hash"] = report.config_hash;
    j["seeds"] = report.seeds();
    ordered_json metrics = ordered_json::object();
    for (const auto& m : report.metrics()) {
        ordered_json per = ordered_json::object();
        for (const auto& r : report.rows)
            if (r.metric == m) per[std::to_string(r.seed)] = r.value;
        metrics[m] = {{"per_seed", per}, {"median", *report.median(m)}};
    }
    j["metrics"] = metrics;
    if (report.downstream)
        j["downstream"] = {{"accuracy", report.downstream->accuracy},
                           {"precision", report.downstream->precision},
                           {"recall", report.downstream->recall},
                           {"f1", report.downstream->f1}};
    else
        j["downstream"] = nullptr;
    j["warnings"] = report.warnings;
    return j.dump(2) + "\n";
}

std::string report_csv(const MetricReport& report) {
    std::string out = "metric,value,seed,corpus_real,corpus_synth,metric_version\n";
    auto line = [&](const std::string& metric, double value, const std::string& seed) {
        out += metric + "," + fmt(value) + "," + seed + "," + report.corpus_real + "," + report.corpus_synth + "," +
               report.metric_version + "\n";
    };
    for (const auto& r : report.rows) line(r.metric, r.value, std::to_string(r.seed));
    for (const auto& m : report.metrics()) line(m, *report.median(m), "median");
    return out;
}

void write_report(const MetricReport& report, const fs::path& json_path, const fs::path& csv_path) {
    for (const auto& p : {json_path, csv_path})
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream(json_path, std::ios::binary) << report_json(report);
    std::ofstream(csv_path, std::ios::binary) << report_csv(report);
}

} // namespace faultdiff::metrics
