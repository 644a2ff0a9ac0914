#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "faultdiff/adapter.hpp"
#include "faultdiff/data.hpp"
#include "faultdiff/denoiser.hpp"
#include "faultdiff/diffusion.hpp"
#include "faultdiff/losses.hpp"

namespace faultdiff::training {

enum class Phase { pretrain, finetune };

std::string phase_name(Phase phase);
Phase parse_phase(const std::string& name);

struct ScheduleConfig {
    diffusion::ScheduleKind kind = diffusion::ScheduleKind::linear;
    double beta_start = 1e-3;
    double beta_end = 0.2;
    bool operator==(const ScheduleConfig&) const = default;
};

struct TrainConfig {
    Phase phase = Phase::pretrain;
    std::size_t steps = 2000;
    std::size_t batch_size = 8;
    double learning_rate = 1e-3;
    std::size_t warmup_steps = 0;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 0;  // 0 = only the final checkpoint

    void validate() const;
    /// Learning rate at (0-based) step with linear warmup.
    double rate_at(std::size_t step) const;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adaptive-moment optimizer over the trainable members of a ParameterSet.
class Adam {
public:
    explicit Adam(AdamConfig config = {}) : config_(config) {}

    /// Applies one update with learning rate `lr` using each trainable
    /// parameter's grad. Frozen parameters are never touched.
    void step(ParameterSet<float>& params, double lr);

    std::uint64_t steps_taken() const { return t_; }
    std::map<std::string, TensorF>& first_moments() { return m_; }
    std::map<std::string, TensorF>& second_moments() { return v_; }
    const std::map<std::string, TensorF>& first_moments() const { return m_; }
    const std::map<std::string, TensorF>& second_moments() const { return v_; }
    void restore(std::uint64_t t, std::map<std::string, TensorF> m, std::map<std::string, TensorF> v);

private:
    AdamConfig config_;
    std::uint64_t t_ = 0;
    std::map<std::string, TensorF> m_, v_;
};

struct NamedTensor {
    std::string name;
    std::string group;  // backbone | adapter | adam_m | adam_v
    TensorF value;
    bool operator==(const NamedTensor&) const = default;
};

/// Everything needed to rebuild a model and continue its training.
struct Checkpoint {
    static constexpr std::uint16_t kVersion = 1;

    std::string phase = "init";  // init | pretrain | finetune
    std::uint64_t step = 0;
    std::string rng_state;
    denoiser::DenoiserConfig denoiser;
    ScheduleConfig schedule;
    std::optional<adapter::AdapterConfig> adapter;
    std::optional<data::Normalizer> normalizer;
    std::uint64_t adam_step = 0;
    std::string config_echo;  // JSON text of the run configuration
    std::string config_hash;
    std::vector<NamedTensor> tensors;

    const NamedTensor* find(const std::string& name, const std::string& group) const;
    std::vector<const NamedTensor*> group(const std::string& group) const;
};

/// Writes atomically (temp file + rename).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);

/// Throws CheckpointError on bad magic, version, truncation, checksum or
/// shape disagreement.
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>");

/// Backbone (+ optional adapter) with its schedule; the sampling entry point.
class Model : public diffusion::NoisePredictor {
public:
    Model(const denoiser::DenoiserConfig& config, const ScheduleConfig& schedule, std::uint64_t seed);

    /// Rebuilds from a checkpoint. Throws CheckpointError if a parameter is
    /// missing or has the wrong shape.
    static Model from_checkpoint(const Checkpoint& ckpt);

    denoiser::Denoiser<float>& backbone() { return *backbone_; }
    const denoiser::Denoiser<float>& backbone() const { return *backbone_; }
    adapter::AdapterStack<float>* adapter() { return adapter_.get(); }
    const adapter::AdapterStack<float>* adapter() const { return adapter_.get(); }

    /// Attaches a fresh zero-initialized adapter and freezes the backbone.
    void add_adapter(const adapter::AdapterConfig& config, std::uint64_t seed);
    void set_alpha(double alpha);

    const ScheduleConfig& schedule_config() const { return schedule_config_; }
    const diffusion::NoiseSchedule& schedule() const { return schedule_; }

    std::optional<data::Normalizer> normalizer;

    /// Differentiable forward of the composed model.
    Var<float> forward(const Var<float>& x_t, std::span<const std::size_t> steps);

    /// Inference without graph recording; splits the batch over FD_THREADS
    /// workers.
    TensorF predict_noise(const TensorF& x, std::span<const std::size_t> steps) const override;

    /// Draws n series (de-normalized when a normalizer is set).
    std::vector<data::TimeSeries> generate(std::size_t n, std::uint64_t seed, std::size_t batch = 64) const;

    /// Parameter tensors in checkpoint layout.
    void export_params(Checkpoint& ckpt) const;

private:
    std::unique_ptr<denoiser::Denoiser<float>> backbone_;
    std::unique_ptr<adapter::AdapterStack<float>> adapter_;
    ScheduleConfig schedule_config_;
    diffusion::NoiseSchedule schedule_;
};

struct StepLoss {
    std::size_t step;
    double base;
    double diversity;
    double total;
};

struct TrainOptions {
    std::optional<std::filesystem::path> checkpoint_dir;  // periodic checkpoints land here
    std::optional<std::filesystem::path> loss_csv;        // step,loss_base,loss_div,loss_total
    std::string config_echo;
    std::string config_hash;
    std::optional<data::Normalizer> normalizer;           // stored in the checkpoint
    const Checkpoint* resume = nullptr;                   // continue from this state
    std::function<void(const StepLoss&)> on_step;
};

/// Trains a fresh backbone on (already normalized) normal data with the
/// base loss. Throws DivergenceError naming the step on a non-finite loss.
Checkpoint pretrain(const data::Dataset& normal, const denoiser::DenoiserConfig& model, const ScheduleConfig& schedule,
                    const TrainConfig& cfg, const TrainOptions& options = {});

/// Attaches a fresh adapter to the base checkpoint's backbone and trains
/// only the adapter on (already normalized) fault data with total_loss.
Checkpoint finetune(const data::Dataset& fault, const Checkpoint& base, const adapter::AdapterConfig& adapter,
                    const TrainConfig& cfg, const LossConfig& loss, const TrainOptions& options = {});

/// Checkpoint file name for a periodic save.
std::string checkpoint_file_name(Phase phase, std::size_t step);

} // namespace faultdiff::training
