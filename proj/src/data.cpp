#include "faultdiff/data.hpp"

#include <algorithm>
#include <cmath>

#include "faultdiff/parallel.hpp"
#include "faultdiff/rng.hpp"

namespace faultdiff::data {

TimeSeries::TimeSeries(TensorF v, std::vector<std::string> names)
    : values(std::move(v)), channel_names(std::move(names)) {
    if (channel_names.empty()) channel_names = default_channel_names(values.cols());
    if (channel_names.size() != values.cols())
        throw DimensionError("TimeSeries: " + std::to_string(channel_names.size()) + " channel names for " +
                             std::to_string(values.cols()) + " channels");
}

std::vector<std::string> default_channel_names(std::size_t channels) {
    std::vector<std::string> names;
    for (std::size_t c = 0; c < channels; ++c) names.push_back("ch" + std::to_string(c));
    return names;
}

void Dataset::validate() const {
    if (samples.empty()) throw ContractError("dataset '" + id + "' is empty");
    const std::size_t tau = seq_len(), dim = channels();
    if (tau < 2) throw ContractError("dataset '" + id + "': sequence length must be >= 2");
    if (dim < 1) throw ContractError("dataset '" + id + "': needs at least one channel");
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (s.seq_len() != tau || s.channels() != dim)
            throw ContractError("dataset '" + id + "': sample " + std::to_string(i) + " has shape " +
                                shape_str(s.values.shape()) + ", expected [" + std::to_string(tau) + "x" +
                                std::to_string(dim) + "]");
        if (!s.values.all_finite())
            throw ContractError("dataset '" + id + "': sample " + std::to_string(i) + " has non-finite values");
    }
}

namespace {

struct Component {
    double freq;  // cycles per step
    double amplitude;
    double phase;
};

std::string base_kind_name(BaseKind k) { return k == BaseKind::sine_mixture ? "sine" : "ar"; }

} // namespace

Dataset generate_normal(const NormalConfig& config) {
    if (config.seq_len < 8) throw ContractError("generate_normal: seq_len must be >= 8");
    if (config.channels < 1) throw ContractError("generate_normal: channels must be >= 1");
    if (config.n_samples < 1) throw ContractError("generate_normal: n_samples must be >= 1");
    if (config.kind == BaseKind::sine_mixture &&
        (config.min_components < 1 || config.max_components < config.min_components))
        throw ContractError("generate_normal: invalid component range");
    if (!(config.noise_std >= 0) || !(config.ar_noise >= 0)) throw ContractError("generate_normal: negative noise");

    const std::size_t tau = config.seq_len, dim = config.channels;

    // Corpus-level structure shared by all samples.
    std::vector<std::vector<Component>> components(dim);
    if (config.kind == BaseKind::sine_mixture) {
        Rng rng(derive_seed(config.structure_seed.value_or(config.seed), 0xC0FFEE));
        for (auto& ch : components) {
            const std::size_t count =
                config.min_components + rng.below(config.max_components - config.min_components + 1);
            for (std::size_t k = 0; k < count; ++k) {
                Component c;
                c.freq = rng.uniform(1.0, 4.0) / static_cast<double>(tau);
                c.amplitude = rng.uniform(0.3, 1.0) / std::sqrt(static_cast<double>(count));
                c.phase = rng.uniform(0.0, 2.0 * M_PI);
                ch.push_back(c);
            }
        }
    }

    Dataset ds;
    ds.id = "normal_" + base_kind_name(config.kind) + "_t" + std::to_string(tau) + "_d" + std::to_string(dim) + "_n" +
            std::to_string(config.n_samples) + "_s" + std::to_string(config.seed);
    ds.label = "normal";
    ds.seed = config.seed;
    ds.samples.resize(config.n_samples);

    parallel_for(config.n_samples, [&](std::size_t i) {
        Rng rng(config.seed + i);
        TensorF v = TensorF::matrix(tau, dim);
        if (config.kind == BaseKind::sine_mixture) {
            const double shift = rng.uniform(0.0, static_cast<double>(tau));
            const double gain = rng.uniform(0.8, 1.2);
            for (std::size_t c = 0; c < dim; ++c)
                for (std::size_t t = 0; t < tau; ++t) {
                    double x = 0;
                    for (const auto& comp : components[c])
                        x += gain * comp.amplitude *
                             std::sin(2.0 * M_PI * comp.freq * (static_cast<double>(t) + shift) + comp.phase);
                    if (config.noise_std > 0) x += config.noise_std * rng.normal();
                    v.at(t, c) = static_cast<float>(x);
                }
        } else {
            for (std::size_t c = 0; c < dim; ++c) {
                double x1 = 0, x2 = 0;
                for (std::size_t t = 0; t < config.ar_burn_in + tau; ++t) {
                    const double x = config.ar1 * x1 + config.ar2 * x2 + config.ar_noise * rng.normal();
                    x2 = x1;
                    x1 = x;
                    if (t >= config.ar_burn_in) v.at(t - config.ar_burn_in, c) = static_cast<float>(x);
                }
            }
        }
        ds.samples[i] = TimeSeries(std::move(v), default_channel_names(dim));
    });
    return ds;
}

Normalizer fit_normalizer(const Dataset& ds, NormMode mode) {
    if (ds.samples.empty()) throw ContractError("fit_normalizer: empty dataset");
    const std::size_t dim = ds.channels();
    Normalizer n;
    n.mode = mode;
    if (mode == NormMode::minmax) {
        n.lo.assign(dim, INFINITY);
        n.hi.assign(dim, -INFINITY);
        for (const auto& s : ds.samples)
            for (std::size_t t = 0; t < s.seq_len(); ++t)
                for (std::size_t c = 0; c < dim; ++c) {
                    n.lo[c] = std::min<double>(n.lo[c], s.at(t, c));
                    n.hi[c] = std::max<double>(n.hi[c], s.at(t, c));
                }
    } else {
        n.lo.assign(dim, 0.0);
        n.hi.assign(dim, 0.0);
        double count = 0;
        for (const auto& s : ds.samples) {
            count += static_cast<double>(s.seq_len());
            for (std::size_t t = 0; t < s.seq_len(); ++t)
                for (std::size_t c = 0; c < dim; ++c) n.lo[c] += s.at(t, c);
        }
        for (double& m : n.lo) m /= count;
        for (const auto& s : ds.samples)
            for (std::size_t t = 0; t < s.seq_len(); ++t)
                for (std::size_t c = 0; c < dim; ++c) n.hi[c] += (s.at(t, c) - n.lo[c]) * (s.at(t, c) - n.lo[c]);
        for (double& v : n.hi) v = std::sqrt(v / count);
    }
    return n;
}

namespace {

// Forward and inverse per-channel affine maps: y = (x - offset) * factor.
void channel_affine(const Normalizer& n, std::size_t c, double& offset, double& factor) {
    if (n.mode == NormMode::minmax) {
        const double span = n.hi[c] - n.lo[c];
        if (span > 0) {
            offset = n.lo[c] + 0.5 * span;
            factor = 2.0 / span;
        } else {
            offset = n.lo[c];
            factor = 1.0;
        }
    } else {
        offset = n.lo[c];
        factor = n.hi[c] > 0 ? 1.0 / n.hi[c] : 1.0;
    }
}

} // namespace

TimeSeries Normalizer::apply(const TimeSeries& s) const {
    if (s.channels() != lo.size()) throw DimensionError("Normalizer::apply: channel count mismatch");
    TimeSeries out = s;
    for (std::size_t c = 0; c < s.channels(); ++c) {
        double offset, factor;
        channel_affine(*this, c, offset, factor);
        for (std::size_t t = 0; t < s.seq_len(); ++t)
            out.at(t, c) = static_cast<float>((static_cast<double>(s.at(t, c)) - offset) * factor);
    }
    return out;
}

TimeSeries Normalizer::invert(const TimeSeries& s) const {
    if (s.channels() != lo.size()) throw DimensionError("Normalizer::invert: channel count mismatch");
    TimeSeries out = s;
    for (std::size_t c = 0; c < s.channels(); ++c) {
        double offset, factor;
        channel_affine(*this, c, offset, factor);
        for (std::size_t t = 0; t < s.seq_len(); ++t)
            out.at(t, c) = static_cast<float>(static_cast<double>(s.at(t, c)) / factor + offset);
    }
    return out;
}

Dataset Normalizer::apply(const Dataset& ds) const {
    Dataset out = ds;
    for (auto& s : out.samples) s = apply(s);
    return out;
}

Dataset Normalizer::invert(const Dataset& ds) const {
    Dataset out = ds;
    for (auto& s : out.samples) s = invert(s);
    return out;
}

} // namespace faultdiff::data
