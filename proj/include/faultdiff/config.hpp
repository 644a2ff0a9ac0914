#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "faultdiff/adapter.hpp"
#include "faultdiff/data.hpp"
#include "faultdiff/denoiser.hpp"
#include "faultdiff/losses.hpp"
#include "faultdiff/metrics.hpp"
#include "faultdiff/training.hpp"

namespace faultdiff::config {

enum class ValueType { integer, real, text, path, boolean, list };

struct KeyInfo {
    std::string key;  // "section.name"
    ValueType type;
    std::string desk;
    std::string paper;
    std::string help;
};

/// Every recognised key with its preset defaults.
const std::vector<KeyInfo>& schema();

std::vector<std::string> preset_names();

/// Flat sectioned key=value configuration. Every key has a default from
/// the active preset; unknown keys are rejected.
class RunConfig {
public:
    /// Throws ConfigError for an unknown preset.
    explicit RunConfig(const std::string& preset = "desk");

    /// Parses `[section]` headers and `key = value` lines; `#` and `;` start
    /// comments. A `run.preset` entry resets defaults before the others
    /// apply.
    static RunConfig from_text(const std::string& text, const std::string& preset = "desk");
    static RunConfig from_file(const std::filesystem::path& path, const std::string& preset = "desk");

    /// Validates key and value type; throws ConfigError.
    void set(const std::string& key, const std::string& value);
    /// "key=value" form used by --override.
    void apply_override(const std::string& assignment);

    const std::string& get(const std::string& key) const;
    std::int64_t get_int(const std::string& key) const;
    std::size_t get_size(const std::string& key) const;
    double get_real(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<std::string> get_list(const std::string& key) const;
    std::filesystem::path get_path(const std::string& key) const;

    const std::string& preset() const { return preset_; }
    std::uint64_t seed() const { return static_cast<std::uint64_t>(get_int("run.seed")); }
    std::filesystem::path out_dir() const { return get_path("run.out"); }

    /// Canonical text of all keys, sorted, paths included.
    std::string canonical_text() const;
    /// FNV-1a over the sorted canonical lines of every non-path key, as 16
    /// hex digits. Independent of key order and output location.
    std::string hash() const;
    /// JSON object of all values (for checkpoint and report headers).
    std::string echo_json() const;

    denoiser::DenoiserConfig denoiser() const;
    training::ScheduleConfig schedule() const;
    adapter::AdapterConfig adapter() const;
    training::TrainConfig train(training::Phase phase) const;
    training::LossConfig loss() const;
    data::NormalConfig normal_data() const;
    /// Fault corpus base generator (normal parameters, fault seed and count).
    data::NormalConfig fault_base() const;
    data::FaultRecipe fault_recipe() const;
    data::NormMode norm_mode() const;
    metrics::EvaluateOptions evaluate_options() const;

private:
    void reset(const std::string& preset);
    std::string preset_;
    std::map<std::string, std::string> values_;
};

} // namespace faultdiff::config
