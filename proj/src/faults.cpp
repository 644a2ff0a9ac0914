#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "faultdiff/data.hpp"
#include "faultdiff/parallel.hpp"
#include "faultdiff/rng.hpp"

namespace faultdiff::data {

namespace {

constexpr std::array<std::pair<FaultKind, std::string_view>, kFaultKindCount> kNames{{
    {FaultKind::sudden, "sudden"},
    {FaultKind::gradual, "gradual"},
    {FaultKind::periodic, "periodic"},
    {FaultKind::random_noise, "random_noise"},
    {FaultKind::intermittent, "intermittent"},
    {FaultKind::impulse, "impulse"},
    {FaultKind::trend, "trend"},
    {FaultKind::saturation, "saturation"},
    {FaultKind::offset, "offset"},
    {FaultKind::compound, "compound"},
    {FaultKind::frequency_shift, "frequency_shift"},
    {FaultKind::amplitude_shift, "amplitude_shift"},
    {FaultKind::missing_data, "missing_data"},
    {FaultKind::low_frequency_anomaly, "low_frequency_anomaly"},
    {FaultKind::sudden_recovery, "sudden_recovery"},
}};

double extra_or(const FaultSpec& spec, const char* key, double fallback) {
    auto it = spec.extra.find(key);
    return it == spec.extra.end() ? fallback : it->second;
}

double default_period(const FaultSpec& spec) {
    if (spec.kind == FaultKind::low_frequency_anomaly) return extra_or(spec, "period", 2.0 * double(spec.duration));
    return extra_or(spec, "period", std::max(2.0, double(spec.duration) / 3.0));
}

std::size_t recovery_point(const FaultSpec& spec) {
    return static_cast<std::size_t>(extra_or(spec, "recovery", double(spec.onset + spec.duration)));
}

std::vector<std::size_t> affected_channels(const FaultSpec& spec, std::size_t channels) {
    if (!spec.channels.empty()) return spec.channels;
    std::vector<std::size_t> all(channels);
    std::iota(all.begin(), all.end(), 0);
    return all;
}

} // namespace

std::string_view fault_kind_name(FaultKind kind) {
    for (const auto& [k, name] : kNames)
        if (k == kind) return name;
    return "unknown";
}

FaultKind parse_fault_kind(std::string_view name) {
    for (const auto& [k, n] : kNames)
        if (n == name) return k;
    throw ContractError("unknown fault kind '" + std::string(name) + "'");
}

const std::vector<FaultKind>& all_fault_kinds() {
    static const std::vector<FaultKind> kinds = [] {
        std::vector<FaultKind> v;
        for (const auto& [k, name] : kNames) v.push_back(k);
        return v;
    }();
    return kinds;
}

std::pair<std::size_t, std::size_t> fault_window(const FaultSpec& spec, std::size_t seq_len) {
    switch (spec.kind) {
        case FaultKind::sudden:
        case FaultKind::trend:
            return {spec.onset, seq_len};
        case FaultKind::sudden_recovery:
            return {spec.onset, recovery_point(spec)};
        case FaultKind::compound: {
            std::size_t lo = seq_len, hi = 0;
            for (const auto& c : spec.components) {
                const auto [a, b] = fault_window(c, seq_len);
                lo = std::min(lo, a);
                hi = std::max(hi, b);
            }
            return {std::min(lo, hi), hi};
        }
        default:
            return {spec.onset, spec.onset + spec.duration};
    }
}

void validate_fault(const FaultSpec& spec, std::size_t seq_len, std::size_t channels) {
    const std::string name(fault_kind_name(spec.kind));
    if (spec.kind == FaultKind::compound) {
        if (spec.components.empty()) throw ContractError("compound fault needs at least one component");
        for (const auto& c : spec.components) {
            if (c.kind == FaultKind::compound) throw ContractError("compound faults cannot nest");
            validate_fault(c, seq_len, channels);
        }
        return;
    }
    if (spec.onset >= seq_len)
        throw ContractError(name + ": onset " + std::to_string(spec.onset) + " outside [0, " + std::to_string(seq_len) + ")");
    if (spec.duration < 1) throw ContractError(name + ": duration must be >= 1");
    if (spec.kind == FaultKind::sudden_recovery) {
        const std::size_t r = recovery_point(spec);
        if (r <= spec.onset || r >= seq_len)
            throw ContractError(name + ": recovery point " + std::to_string(r) + " must lie in (onset, seq_len)");
    } else if (spec.onset + spec.duration > seq_len) {
        throw ContractError(name + ": window [" + std::to_string(spec.onset) + ", " +
                            std::to_string(spec.onset + spec.duration) + ") exceeds sequence length " +
                            std::to_string(seq_len));
    }
    if (!std::isfinite(spec.magnitude)) throw ContractError(name + ": magnitude must be finite");
    std::vector<bool> seen(channels, false);
    for (std::size_t c : spec.channels) {
        if (c >= channels) throw ContractError(name + ": channel " + std::to_string(c) + " out of range");
        if (seen[c]) throw ContractError(name + ": duplicate channel " + std::to_string(c));
        seen[c] = true;
    }
    for (const auto& [key, value] : spec.extra)
        if (!std::isfinite(value)) throw ContractError(name + ": extra '" + key + "' must be finite");
    if (spec.kind == FaultKind::periodic && !(default_period(spec) > 0))
        throw ContractError(name + ": period must be positive");
    if (spec.kind == FaultKind::low_frequency_anomaly && default_period(spec) < double(spec.duration))
        throw ContractError(name + ": period must be >= duration");
    if (spec.kind == FaultKind::intermittent && extra_or(spec, "burst", 1.0) < 1.0)
        throw ContractError(name + ": burst must be >= 1");
    if (spec.kind == FaultKind::impulse && extra_or(spec, "count", 1.0) < 1.0)
        throw ContractError(name + ": count must be >= 1");
}

TimeSeries inject_fault(const TimeSeries& series, const FaultSpec& spec, std::uint64_t seed) {
    const std::size_t tau = series.seq_len();
    validate_fault(spec, tau, series.channels());

    if (spec.kind == FaultKind::compound) {
        TimeSeries out = series;
        for (std::size_t k = 0; k < spec.components.size(); ++k) out = inject_fault(out, spec.components[k], seed + k);
        return out;
    }

    TimeSeries out = series;
    const auto channels = affected_channels(spec, series.channels());
    const auto [begin, end] = fault_window(spec, tau);
    const std::size_t span = end - begin;
    const double m = spec.magnitude;
    const double dur = static_cast<double>(spec.duration);
    Rng rng(seed);

    auto add = [&](std::size_t c, std::size_t t, double delta) {
        out.at(t, c) = static_cast<float>(static_cast<double>(series.at(t, c)) + delta);
    };

    switch (spec.kind) {
        case FaultKind::sudden:
        case FaultKind::offset:
        case FaultKind::sudden_recovery:
            for (std::size_t c : channels)
                for (std::size_t t = begin; t < end; ++t) add(c, t, m);
            break;
        case FaultKind::gradual:
            for (std::size_t c : channels)
                for (std::size_t i = 0; i < span; ++i) add(c, begin + i, m * double(i + 1) / dur);
            break;
        case FaultKind::trend:
            for (std::size_t c : channels)
                for (std::size_t i = 0; i < span; ++i) add(c, begin + i, (m / dur) * double(i + 1));
            break;
        case FaultKind::periodic:
        case FaultKind::low_frequency_anomaly: {
            const double period = default_period(spec);
            for (std::size_t c : channels)
                for (std::size_t i = 0; i < span; ++i) add(c, begin + i, m * std::sin(2.0 * M_PI * double(i) / period));
            break;
        }
        case FaultKind::random_noise:
            for (std::size_t c : channels)
                for (std::size_t t = begin; t < end; ++t) add(c, t, m * rng.normal());
            break;
        case FaultKind::intermittent: {
            const auto burst = static_cast<std::size_t>(extra_or(spec, "burst", std::max(1.0, std::floor(dur / 4.0))));
            for (std::size_t c : channels)
                for (std::size_t i = 0; i < span; ++i)
                    if ((i / burst) % 2 == 0) add(c, begin + i, m);
            break;
        }
        case FaultKind::impulse: {
            auto count = static_cast<std::size_t>(extra_or(spec, "count", std::max(1.0, std::floor(dur / 5.0))));
            count = std::min(count, span);
            std::vector<std::size_t> pos(span);
            std::iota(pos.begin(), pos.end(), begin);
            for (std::size_t i = 0; i < count; ++i) std::swap(pos[i], pos[i + rng.below(span - i)]);
            for (std::size_t c : channels)
                for (std::size_t i = 0; i < count; ++i) add(c, pos[i], m);
            break;
        }
        case FaultKind::saturation:
            for (std::size_t c : channels) {
                double level;
                if (auto it = spec.extra.find("clip_level"); it != spec.extra.end()) {
                    level = it->second;
                } else {
                    level = 0;
                    for (std::size_t t = begin; t < end; ++t) level += series.at(t, c);
                    level /= double(span);
                }
                for (std::size_t t = begin; t < end; ++t)
                    if (series.at(t, c) > level) out.at(t, c) = static_cast<float>(level);
            }
            break;
        case FaultKind::frequency_shift:
            for (std::size_t c : channels)
                for (std::size_t i = 0; i < span; ++i) {
                    const double src = std::clamp(double(begin) + double(i) * (1.0 + m), 0.0, double(tau - 1));
                    const auto lo = static_cast<std::size_t>(std::floor(src));
                    const std::size_t hi = std::min(lo + 1, tau - 1);
                    const double w = src - double(lo);
                    out.at(begin + i, c) = static_cast<float>((1.0 - w) * series.at(lo, c) + w * series.at(hi, c));
                }
            break;
        case FaultKind::amplitude_shift:
            for (std::size_t c : channels)
                for (std::size_t t = begin; t < end; ++t)
                    out.at(t, c) = static_cast<float>(static_cast<double>(series.at(t, c)) * (1.0 + m));
            break;
        case FaultKind::missing_data:
            for (std::size_t c : channels) {
                const float hold = series.at(begin > 0 ? begin - 1 : begin, c);
                for (std::size_t t = begin; t < end; ++t) out.at(t, c) = hold;
            }
            break;
        case FaultKind::compound:
            break;
    }
    return out;
}

namespace {

double mean_channel_std(const TimeSeries& s) {
    double total = 0;
    for (std::size_t c = 0; c < s.channels(); ++c) {
        double mu = 0, var = 0;
        for (std::size_t t = 0; t < s.seq_len(); ++t) mu += s.at(t, c);
        mu /= double(s.seq_len());
        for (std::size_t t = 0; t < s.seq_len(); ++t) var += (s.at(t, c) - mu) * (s.at(t, c) - mu);
        total += std::sqrt(var / double(s.seq_len()));
    }
    total /= double(s.channels());
    return total > 0 ? total : 1.0;
}

FaultSpec draw_single(FaultKind kind, const FaultRecipe& recipe, const TimeSeries& series, Rng& rng) {
    const std::size_t tau = series.seq_len();
    const std::size_t lo = tau / 4, hi = std::max(tau / 2, lo);
    FaultSpec spec;
    spec.kind = kind;
    spec.onset = recipe.onset ? *recipe.onset : lo + rng.below(hi - lo + 1);
    spec.duration = recipe.duration ? *recipe.duration : std::max<std::size_t>(1, lo + rng.below(hi - lo + 1));
    if (spec.onset < tau && spec.onset + spec.duration > tau) spec.duration = tau - spec.onset;
    spec.magnitude = recipe.magnitude ? *recipe.magnitude : rng.uniform(1.0, 3.0) * mean_channel_std(series);
    spec.channels = recipe.channels;
    spec.extra = recipe.extra;
    if (kind == FaultKind::sudden_recovery && !spec.extra.count("recovery")) {
        std::size_t r = spec.onset + spec.duration;
        if (r >= tau) r = tau - 1;
        spec.extra["recovery"] = double(r);
    }
    if (kind == FaultKind::low_frequency_anomaly) {
        auto it = spec.extra.find("period");
        if (it != spec.extra.end() && it->second < double(spec.duration)) it->second = double(spec.duration);
    }
    return spec;
}

} // namespace

FaultSpec draw_fault_spec(const FaultRecipe& recipe, const TimeSeries& series, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0xFA17));
    if (recipe.kind != FaultKind::compound) return draw_single(recipe.kind, recipe, series, rng);
    if (recipe.components.empty()) throw ContractError("compound recipe needs component kinds");
    FaultSpec spec;
    spec.kind = FaultKind::compound;
    for (FaultKind k : recipe.components) {
        if (k == FaultKind::compound) throw ContractError("compound faults cannot nest");
        spec.components.push_back(draw_single(k, recipe, series, rng));
    }
    const auto [b, e] = fault_window(spec, series.seq_len());
    spec.onset = b;
    spec.duration = std::max<std::size_t>(1, e - b);
    spec.magnitude = spec.components.front().magnitude;
    return spec;
}

Dataset generate_fault(const NormalConfig& base, const FaultRecipe& recipe) {
    Dataset normal = generate_normal(base);
    Dataset ds;
    ds.id = "fault_" + std::string(fault_kind_name(recipe.kind)) + "_t" + std::to_string(base.seq_len) + "_d" +
            std::to_string(base.channels) + "_n" + std::to_string(base.n_samples) + "_s" + std::to_string(base.seed);
    ds.label = "fault:" + std::string(fault_kind_name(recipe.kind));
    ds.seed = base.seed;
    ds.fault_recipe = recipe;
    ds.samples.resize(normal.size());
    ds.sample_faults.resize(normal.size());
    parallel_for(normal.size(), [&](std::size_t i) {
        ds.sample_faults[i] = draw_fault_spec(recipe, normal.samples[i], base.seed + i);
        ds.samples[i] = inject_fault(normal.samples[i], ds.sample_faults[i], base.seed + i);
    });
    return ds;
}

} // namespace faultdiff::data
