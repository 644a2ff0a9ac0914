#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "faultdiff/tensor.hpp"

namespace faultdiff::data {

/// One multichannel sample: seq_len x channels values (row = timestep).
struct TimeSeries {
    TensorF values;
    std::vector<std::string> channel_names;

    TimeSeries() = default;
    TimeSeries(TensorF v, std::vector<std::string> names);

    std::size_t seq_len() const { return values.rows(); }
    std::size_t channels() const { return values.cols(); }
    float at(std::size_t t, std::size_t c) const { return values.at(t, c); }
    float& at(std::size_t t, std::size_t c) { return values.at(t, c); }

    bool operator==(const TimeSeries&) const = default;
};

std::vector<std::string> default_channel_names(std::size_t channels);

enum class FaultKind {
    sudden,
    gradual,
    periodic,
    random_noise,
    intermittent,
    impulse,
    trend,
    saturation,
    offset,
    compound,
    frequency_shift,
    amplitude_shift,
    missing_data,
    low_frequency_anomaly,
    sudden_recovery,
};

inline constexpr std::size_t kFaultKindCount = 15;

std::string_view fault_kind_name(FaultKind kind);
/// Throws ContractError for unknown names.
FaultKind parse_fault_kind(std::string_view name);
const std::vector<FaultKind>& all_fault_kinds();

/// Parametrized fault. Kind-specific keys in `extra`:
///   periodic / low_frequency_anomaly: period
///   saturation: clip_level
///   intermittent: burst
///   impulse: count
///   sudden_recovery: recovery
/// `components` lists the sub-faults of a compound fault, applied in order.
struct FaultSpec {
    FaultKind kind = FaultKind::sudden;
    std::size_t onset = 0;
    std::size_t duration = 1;
    double magnitude = 1.0;
    std::vector<std::size_t> channels;  // empty = every channel
    std::map<std::string, double> extra;
    std::vector<FaultSpec> components;

    bool operator==(const FaultSpec&) const = default;
};

/// Throws ContractError if the spec does not fit a seq_len x channels series.
void validate_fault(const FaultSpec& spec, std::size_t seq_len, std::size_t channels);

/// Timesteps [first, second) a fault may modify. sudden and trend persist to
/// the end of the series; sudden_recovery ends at its recovery point.
std::pair<std::size_t, std::size_t> fault_window(const FaultSpec& spec, std::size_t seq_len);

/// Applies the fault; values outside the fault window and channel set are
/// returned bit-identical. Deterministic in (series, spec, seed). Compound
/// component k is applied with seed + k.
TimeSeries inject_fault(const TimeSeries& series, const FaultSpec& spec, std::uint64_t seed);

/// Fault corpus recipe. Unset fields are drawn per sample: onset uniform in
/// [seq_len/4, seq_len/2], duration uniform in [seq_len/4, seq_len/2],
/// magnitude uniform in [1, 3] times the mean channel std of the sample.
struct FaultRecipe {
    FaultKind kind = FaultKind::sudden;
    std::optional<std::size_t> onset;
    std::optional<std::size_t> duration;
    std::optional<double> magnitude;
    std::vector<std::size_t> channels;
    std::map<std::string, double> extra;
    std::vector<FaultKind> components;  // compound only

    bool operator==(const FaultRecipe&) const = default;
};

/// Labeled collection of equally shaped samples.
struct Dataset {
    std::string id;
    std::string label = "normal";  // "normal" or "fault:<kind>"
    std::vector<TimeSeries> samples;
    std::optional<std::uint64_t> seed;
    std::optional<FaultRecipe> fault_recipe;
    std::vector<FaultSpec> sample_faults;  // concrete spec per sample, when known
    std::map<std::string, std::string> provenance;

    std::size_t size() const { return samples.size(); }
    std::size_t seq_len() const { return samples.empty() ? 0 : samples.front().seq_len(); }
    std::size_t channels() const { return samples.empty() ? 0 : samples.front().channels(); }

    /// Throws ContractError if empty, non-uniform, too short or non-finite.
    void validate() const;
};

enum class BaseKind { sine_mixture, ar_process };

struct NormalConfig {
    std::size_t seq_len = 24;
    std::size_t channels = 2;
    std::size_t n_samples = 64;
    std::uint64_t seed = 0;
    /// Seed of the corpus-level structure (sine components). Unset = seed.
    /// Corpora sharing it come from the same underlying process.
    std::optional<std::uint64_t> structure_seed;
    BaseKind kind = BaseKind::sine_mixture;
    // sine_mixture
    std::size_t min_components = 2;
    std::size_t max_components = 4;
    double noise_std = 0.05;
    // ar_process: x[t] = ar1 * x[t-1] + ar2 * x[t-2] + ar_noise * e[t]
    double ar1 = 0.5;
    double ar2 = -0.3;
    double ar_noise = 0.1;
    std::size_t ar_burn_in = 64;
};

Dataset generate_normal(const NormalConfig& config);

/// Draws a concrete spec for one sample.
FaultSpec draw_fault_spec(const FaultRecipe& recipe, const TimeSeries& series, std::uint64_t seed);

/// Normal base series (per `base`) with the recipe injected into every sample.
/// Sample i uses seed base.seed + i for both drawing and injection.
Dataset generate_fault(const NormalConfig& base, const FaultRecipe& recipe);

enum class NormMode { minmax, zscore };

/// Per-channel affine scaling. In minmax mode training data maps into
/// [-1, 1]; a constant channel maps to 0 and inverts back to the constant.
struct Normalizer {
    NormMode mode = NormMode::minmax;
    std::vector<double> lo;     // min (minmax) or mean (zscore)
    std::vector<double> hi;     // max (minmax) or std (zscore)

    TimeSeries apply(const TimeSeries& s) const;
    TimeSeries invert(const TimeSeries& s) const;
    Dataset apply(const Dataset& ds) const;
    Dataset invert(const Dataset& ds) const;

    bool operator==(const Normalizer&) const = default;
};

Normalizer fit_normalizer(const Dataset& ds, NormMode mode = NormMode::minmax);

/// Writes manifest.json plus sample_00000.csv ... into `dir`.
void save_corpus(const Dataset& ds, const std::filesystem::path& dir);

/// Throws CorpusError naming the offending file on any inconsistency.
Dataset load_corpus(const std::filesystem::path& dir);

/// Shortest round-trip decimal text for a float.
std::string format_float(float v);

} // namespace faultdiff::data
