#include "faultdiff/training.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "faultdiff/ops.hpp"
#include "faultdiff/parallel.hpp"
#include "faultdiff/rng.hpp"

namespace faultdiff::training {

namespace fs = std::filesystem;

std::string phase_name(Phase phase) { return phase == Phase::pretrain ? "pretrain" : "finetune"; }

Phase parse_phase(const std::string& name) {
    if (name == "pretrain") return Phase::pretrain;
    if (name == "finetune") return Phase::finetune;
    throw ContractError("unknown phase '" + name + "'");
}

void TrainConfig::validate() const {
    if (batch_size == 0) throw ContractError("train: batch_size must be positive");
    if (!(learning_rate > 0) || !std::isfinite(learning_rate))
        throw ContractError("train: learning_rate must be finite and positive");
}

double TrainConfig::rate_at(std::size_t step) const {
    if (warmup_steps == 0 || step >= warmup_steps) return learning_rate;
    return learning_rate * double(step + 1) / double(warmup_steps);
}

void Adam::step(ParameterSet<float>& params, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, double(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, double(t_));
    const float b1 = float(config_.beta1), b2 = float(config_.beta2);
    const float step_size = float(lr / c1), inv_c2 = float(1.0 / c2), eps = float(config_.eps);
    for (auto& p : params) {
        if (!p->trainable) continue;
        auto& m = m_[p->name];
        auto& v = v_[p->name];
        if (m.numel() != p->value.numel()) m = TensorF(p->value.shape());
        if (v.numel() != p->value.numel()) v = TensorF(p->value.shape());
        float* w = p->value.data().data();
        const float* g = p->grad.data().data();
        float* mp = m.data().data();
        float* vp = v.data().data();
        for (std::size_t i = 0, n = p->value.numel(); i < n; ++i) {
            mp[i] = b1 * mp[i] + (1.0f - b1) * g[i];
            vp[i] = b2 * vp[i] + (1.0f - b2) * g[i] * g[i];
            w[i] -= step_size * mp[i] / (std::sqrt(vp[i] * inv_c2) + eps);
        }
    }
}

void Adam::restore(std::uint64_t t, std::map<std::string, TensorF> m, std::map<std::string, TensorF> v) {
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
}

// ---------------------------------------------------------------------------

Model::Model(const denoiser::DenoiserConfig& config, const ScheduleConfig& schedule, std::uint64_t seed)
    : backbone_(std::make_unique<denoiser::Denoiser<float>>(config, seed)), schedule_config_(schedule) {
    schedule_ = diffusion::make_schedule(config.steps, schedule.kind, schedule.beta_start, schedule.beta_end);
}

namespace {

void load_group(ParameterSet<float>& params, const Checkpoint& ckpt, const std::string& group) {
    std::size_t seen = 0;
    for (auto& p : params) {
        const auto* t = ckpt.find(p->name, group);
        if (!t) throw CheckpointError("checkpoint lacks parameter '" + p->name + "'");
        if (t->value.shape() != p->value.shape())
            throw CheckpointError("parameter '" + p->name + "' has shape " + shape_str(t->value.shape()) +
                                  " in the checkpoint, model expects " + shape_str(p->value.shape()));
        p->value = t->value;
        ++seen;
    }
    if (ckpt.group(group).size() != seen)
        throw CheckpointError("checkpoint holds " + std::to_string(ckpt.group(group).size()) + " " + group +
                              " tensors, model has " + std::to_string(seen));
}

} // namespace

Model Model::from_checkpoint(const Checkpoint& ckpt) {
    std::optional<Model> m;
    try {
        m.emplace(ckpt.denoiser, ckpt.schedule, 0);
        if (ckpt.adapter) m->add_adapter(*ckpt.adapter, 0);
    } catch (const ContractError& e) {
        throw CheckpointError(std::string("checkpoint describes an invalid model: ") + e.what());
    }
    load_group(m->backbone().params(), ckpt, "backbone");
    if (m->adapter()) load_group(m->adapter()->params(), ckpt, "adapter");
    else if (!ckpt.group("adapter").empty()) throw CheckpointError("checkpoint has adapter tensors but no adapter config");
    m->normalizer = ckpt.normalizer;
    return std::move(*m);
}

void Model::add_adapter(const adapter::AdapterConfig& config, std::uint64_t seed) {
    adapter_ = std::make_unique<adapter::AdapterStack<float>>(config, backbone_->config().dec_layers, seed);
    adapter::attach(*backbone_, *adapter_);
}

void Model::set_alpha(double alpha) {
    if (!adapter_) throw ContractError("set_alpha: model has no adapter");
    adapter_->set_alpha(alpha);
}

Var<float> Model::forward(const Var<float>& x_t, std::span<const std::size_t> steps) {
    if (!adapter_) return backbone_->forward(x_t, steps).eps_hat;
    adapter::ComposedModel<float> composed(*backbone_, *adapter_);
    return composed.forward(x_t, steps).eps_hat;
}

TensorF Model::predict_noise(const TensorF& x, std::span<const std::size_t> steps) const {
    auto* self = const_cast<Model*>(this);  // forward only reads parameters under NoGradGuard
    const std::size_t batch = steps.size();
    const std::size_t workers = std::min(worker_count(), batch);
    if (workers <= 1) {
        NoGradGuard guard;
        return self->forward(Var<float>::constant(x), steps).value();
    }
    // Rows of different samples never interact, so chunking does not change
    // the result.
    const std::size_t per = x.numel() / batch, rows = x.rows() / batch;
    TensorF out(x.shape());
    const std::size_t chunk = (batch + workers - 1) / workers;
    parallel_for(workers, [&](std::size_t w) {
        const std::size_t b0 = w * chunk, b1 = std::min(batch, b0 + chunk);
        if (b0 >= b1) return;
        NoGradGuard guard;
        TensorF part = TensorF::matrix((b1 - b0) * rows, x.cols());
        std::copy(x.data().begin() + b0 * per, x.data().begin() + b1 * per, part.data().begin());
        const auto res = self->forward(Var<float>::constant(std::move(part)), steps.subspan(b0, b1 - b0)).value();
        std::copy(res.data().begin(), res.data().end(), out.data().begin() + b0 * per);
    });
    return out;
}

std::vector<data::TimeSeries> Model::generate(std::size_t n, std::uint64_t seed, std::size_t batch) const {
    diffusion::SampleOptions opt;
    opt.seq_len = backbone_->config().seq_len;
    opt.channels = backbone_->config().channels;
    opt.batch = batch;
    opt.normalizer = normalizer ? &*normalizer : nullptr;
    return diffusion::sample(*this, schedule_, n, seed, opt);
}

void Model::export_params(Checkpoint& ckpt) const {
    for (const auto& p : backbone_->params()) ckpt.tensors.push_back({p->name, "backbone", p->value});
    if (adapter_)
        for (const auto& p : adapter_->params()) ckpt.tensors.push_back({p->name, "adapter", p->value});
}

std::string checkpoint_file_name(Phase phase, std::size_t step) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_step_%06zu.fdck", phase_name(phase).c_str(), step);
    return buf;
}

// ---------------------------------------------------------------------------

namespace {

std::string fmt(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

/// Loss-curve writer; on resume keeps only rows before the resume step so a
/// resumed file matches an uninterrupted one.
class LossCsv {
public:
    LossCsv(const std::optional<fs::path>& path, std::size_t start) {
        if (!path) return;
        std::vector<std::string> keep;
        if (start > 0) {
            std::ifstream in(*path);
            std::string line;
            bool header = true;
            while (std::getline(in, line)) {
                if (header) {
                    header = false;
                    continue;
                }
                if (line.empty()) continue;
                if (std::stoull(line.substr(0, line.find(','))) < start) keep.push_back(line);
            }
        }
        if (path->has_parent_path()) fs::create_directories(path->parent_path());
        out_.open(*path, std::ios::binary | std::ios::trunc);
        if (!out_) throw std::runtime_error("cannot write loss curve " + path->string());
        out_ << "step,loss_base,loss_div,loss_total\n";
        for (const auto& l : keep) out_ << l << '\n';
    }

    void write(const StepLoss& s) {
        if (out_.is_open())
            out_ << s.step << ',' << fmt(s.base) << ',' << fmt(s.diversity) << ',' << fmt(s.total) << '\n';
    }

private:
    std::ofstream out_;
};

struct Batch {
    TensorF x_t;
    TensorF eps;
    std::vector<std::size_t> steps;
};

Batch draw_batch(const data::Dataset& ds, std::size_t batch, const diffusion::NoiseSchedule& schedule, Rng& rng) {
    const std::size_t tau = ds.seq_len(), dim = ds.channels(), per = tau * dim;
    Batch b;
    b.x_t = TensorF::matrix(batch * tau, dim);
    b.eps = TensorF::matrix(batch * tau, dim);
    b.steps.resize(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        const auto& x0 = ds.samples[rng.below(ds.size())].values;
        const std::size_t t = rng.below(schedule.steps());
        b.steps[i] = t;
        const double a = std::sqrt(schedule.alpha_bar[t]), s = std::sqrt(1.0 - schedule.alpha_bar[t]);
        for (std::size_t k = 0; k < per; ++k) {
            const float e = static_cast<float>(rng.normal());
            b.eps[i * per + k] = e;
            b.x_t[i * per + k] = static_cast<float>(a * double(x0[k]) + s * double(e));
        }
    }
    return b;
}

Checkpoint snapshot(const Model& model, const Adam& adam, const Rng& rng, Phase phase, std::size_t step,
                    const TrainOptions& options) {
    Checkpoint c;
    c.phase = phase_name(phase);
    c.step = step;
    c.rng_state = rng.state();
    c.denoiser = model.backbone().config();
    c.schedule = model.schedule_config();
    if (model.adapter()) c.adapter = model.adapter()->config();
    c.normalizer = model.normalizer;
    c.adam_step = adam.steps_taken();
    c.config_echo = options.config_echo;
    c.config_hash = options.config_hash;
    model.export_params(c);
    for (const auto& [name, m] : adam.first_moments()) c.tensors.push_back({name, "adam_m", m});
    for (const auto& [name, v] : adam.second_moments()) c.tensors.push_back({name, "adam_v", v});
    return c;
}

void restore_optimizer(Adam& adam, Rng& rng, const Checkpoint& ckpt) {
    std::map<std::string, TensorF> m, v;
    for (const auto* t : ckpt.group("adam_m")) m[t->name] = t->value;
    for (const auto* t : ckpt.group("adam_v")) v[t->name] = t->value;
    adam.restore(ckpt.adam_step, std::move(m), std::move(v));
    try {
        rng.set_state(ckpt.rng_state);
    } catch (const std::exception&) {
        throw CheckpointError("checkpoint has an invalid RNG state");
    }
}

Checkpoint run_loop(Model& model, ParameterSet<float>& trainable, const data::Dataset& ds, Phase phase,
                    const TrainConfig& cfg, const LossConfig& loss, Rng& rng, Adam& adam, std::size_t start,
                    const TrainOptions& options) {
    LossCsv csv(options.loss_csv, start);
    for (std::size_t step = start; step < cfg.steps; ++step) {
        const Batch b = draw_batch(ds, cfg.batch_size, model.schedule(), rng);
        trainable.zero_grad();
        StepLoss rec{step, 0, 0, 0};
        try {
            const Var<float> eps_hat = model.forward(Var<float>::constant(b.x_t), b.steps);
            const auto parts =
                total_loss(Var<float>::constant(b.eps), eps_hat, cfg.batch_size, loss, derive_seed(cfg.seed, step));
            rec.base = parts.base.value().item();
            rec.diversity = parts.diversity.valid() ? parts.diversity.value().item() : 0.0;
            rec.total = parts.total.value().item();
            if (!std::isfinite(rec.total))
                throw DivergenceError(step, phase_name(phase) + " diverged: non-finite loss at step " +
                                                std::to_string(step));
            backward(parts.total);
        } catch (const ForwardError& e) {
            throw DivergenceError(step, phase_name(phase) + " diverged at step " + std::to_string(step) + ": " +
                                            e.what());
        }
        adam.step(trainable, cfg.rate_at(step));
        csv.write(rec);
        if (options.on_step) options.on_step(rec);
        if (cfg.checkpoint_every && options.checkpoint_dir && (step + 1) % cfg.checkpoint_every == 0 &&
            step + 1 < cfg.steps)
            save_checkpoint(snapshot(model, adam, rng, phase, step + 1, options),
                            *options.checkpoint_dir / checkpoint_file_name(phase, step + 1));
    }
    return snapshot(model, adam, rng, phase, std::max(start, cfg.steps), options);
}

void check_resume(const Checkpoint& ckpt, Phase phase, const TrainConfig& cfg) {
    if (ckpt.phase != phase_name(phase))
        throw CheckpointError("cannot resume " + phase_name(phase) + " from a " + ckpt.phase + " checkpoint");
    if (ckpt.step > cfg.steps)
        throw CheckpointError("resume checkpoint is at step " + std::to_string(ckpt.step) + ", beyond the " +
                              std::to_string(cfg.steps) + " configured steps");
}

} // namespace

Checkpoint pretrain(const data::Dataset& normal, const denoiser::DenoiserConfig& model_cfg,
                    const ScheduleConfig& schedule, const TrainConfig& cfg, const TrainOptions& options) {
    cfg.validate();
    normal.validate();
    if (normal.seq_len() != model_cfg.seq_len || normal.channels() != model_cfg.channels)
        throw ContractError("pretrain: data shape " + std::to_string(normal.seq_len()) + "x" +
                            std::to_string(normal.channels()) + " does not match the model");

    Rng rng(derive_seed(cfg.seed, 3));
    Adam adam;
    std::size_t start = 0;
    std::optional<Model> model;
    if (options.resume) {
        check_resume(*options.resume, Phase::pretrain, cfg);
        if (options.resume->denoiser != model_cfg || !(options.resume->schedule == schedule))
            throw CheckpointError("resume checkpoint was written for a different model configuration");
        model.emplace(Model::from_checkpoint(*options.resume));
        restore_optimizer(adam, rng, *options.resume);
        start = options.resume->step;
    } else {
        model.emplace(model_cfg, schedule, derive_seed(cfg.seed, 1));
    }
    if (options.normalizer) model->normalizer = options.normalizer;

    LossConfig base_only;
    base_only.lambda = 0.0;
    base_only.mode = DiversityMode::off;
    return run_loop(*model, model->backbone().params(), normal, Phase::pretrain, cfg, base_only, rng, adam, start,
                    options);
}

Checkpoint finetune(const data::Dataset& fault, const Checkpoint& base, const adapter::AdapterConfig& adapter_cfg,
                    const TrainConfig& cfg, const LossConfig& loss, const TrainOptions& options) {
    cfg.validate();
    loss.validate();
    fault.validate();
    if (fault.size() < 2) throw ContractError("finetune: need at least 2 fault samples, got " + std::to_string(fault.size()));
    if (loss.mode != DiversityMode::off && cfg.batch_size < 2)
        throw ContractError("finetune: diversity loss needs batch_size >= 2");
    if (fault.seq_len() != base.denoiser.seq_len || fault.channels() != base.denoiser.channels)
        throw CheckpointError("base checkpoint expects " + std::to_string(base.denoiser.seq_len) + "x" +
                              std::to_string(base.denoiser.channels) + " series, fault data is " +
                              std::to_string(fault.seq_len()) + "x" + std::to_string(fault.channels()));

    Rng rng(derive_seed(cfg.seed, 4));
    Adam adam;
    std::size_t start = 0;
    std::optional<Model> model;
    if (options.resume) {
        check_resume(*options.resume, Phase::finetune, cfg);
        if (!options.resume->adapter) throw CheckpointError("finetune resume checkpoint has no adapter");
        model.emplace(Model::from_checkpoint(*options.resume));
        restore_optimizer(adam, rng, *options.resume);
        start = options.resume->step;
    } else {
        model.emplace(Model::from_checkpoint(base));
        if (model->adapter()) throw CheckpointError("base checkpoint already carries an adapter");
        model->add_adapter(adapter_cfg, derive_seed(cfg.seed, 2));
    }
    if (options.normalizer) model->normalizer = options.normalizer;
    return run_loop(*model, model->adapter()->params(), fault, Phase::finetune, cfg, loss, rng, adam, start, options);
}

} // namespace faultdiff::training
