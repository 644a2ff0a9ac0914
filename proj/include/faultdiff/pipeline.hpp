#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "faultdiff/config.hpp"
#include "faultdiff/data.hpp"
#include "faultdiff/metrics.hpp"
#include "faultdiff/training.hpp"

namespace faultdiff::pipeline {

using Logger = std::function<void(const std::string&)>;

/// Fixed directory structure of one experiment output directory.
struct Layout {
    std::filesystem::path root;

    explicit Layout(std::filesystem::path r) : root(std::move(r)) {}

    std::filesystem::path checkpoints() const { return root / "checkpoints"; }
    std::filesystem::path samples() const { return root / "samples"; }
    std::filesystem::path reports() const { return root / "reports"; }
    std::filesystem::path logs() const { return root / "logs"; }
    std::filesystem::path data() const { return root / "data"; }
    std::filesystem::path lock() const { return root / "config.lock"; }
    std::filesystem::path normal_corpus() const { return data() / "normal"; }
    std::filesystem::path fault_corpus() const { return data() / "fault"; }
    std::filesystem::path reference_corpus() const { return data() / "fault_reference"; }
    std::filesystem::path checkpoint(const std::string& name) const { return checkpoints() / (name + ".fdck"); }
    std::filesystem::path partial_marker(const std::string& verb) const { return root / (verb + ".partial"); }
};

/// Which corpora make_data writes.
enum class DataKind { normal, fault, both };

struct GenerateResult {
    data::Dataset corpus;
    std::filesystem::path corpus_dir;
    std::string checkpoint_hash;
};

struct DownstreamResult {
    std::vector<std::string> classes;
    metrics::ClassScores real_only;
    std::optional<metrics::ClassScores> augmented;
};

/// FNV-1a 64 of a file's bytes as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);

/// Every step below validates the configuration first, then creates the
/// layout, writes config.lock and a `<verb>.partial` marker that is removed
/// only when the step succeeds.
std::vector<data::Dataset> make_data(const config::RunConfig& cfg, DataKind kind, const Logger& log = {});
training::Checkpoint run_pretrain(const config::RunConfig& cfg, const Logger& log = {});
training::Checkpoint run_finetune(const config::RunConfig& cfg, const Logger& log = {});
GenerateResult run_generate(const config::RunConfig& cfg, const Logger& log = {});
metrics::MetricReport run_evaluate(const config::RunConfig& cfg, const Logger& log = {});
metrics::Embedding run_embed(const config::RunConfig& cfg, const Logger& log = {});
DownstreamResult run_downstream(const config::RunConfig& cfg, const Logger& log = {});

std::string downstream_json(const DownstreamResult& result, const config::RunConfig& cfg);

} // namespace faultdiff::pipeline
