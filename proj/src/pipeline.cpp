#include "faultdiff/pipeline.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "faultdiff/errors.hpp"
#include "faultdiff/rng.hpp"

namespace faultdiff::pipeline {

namespace fs = std::filesystem;
using config::RunConfig;
using training::Checkpoint;
using training::Phase;

namespace {

void emit(const Logger& log, const std::string& msg) {
    if (log) log(msg);
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << text;
        if (!out) throw std::runtime_error("cannot write " + path.string());
    }
    fs::rename(tmp, path);
}

/// Creates the layout, writes config.lock and holds the partial marker
/// until finish() is called.
class Step {
public:
    Step(const RunConfig& cfg, const std::string& verb) : layout_(cfg.out_dir()), verb_(verb) {
        for (const auto& d : {layout_.checkpoints(), layout_.samples(), layout_.reports(), layout_.logs()})
            fs::create_directories(d);
        write_text(layout_.lock(), cfg.canonical_text() + "# hash " + cfg.hash() + "\n");
        write_text(layout_.partial_marker(verb_), verb_ + "\n");
    }
    const Layout& layout() const { return layout_; }
    void finish() { fs::remove(layout_.partial_marker(verb_)); }

private:
    Layout layout_;
    std::string verb_;
};

void stamp(data::Dataset& ds, const RunConfig& cfg) {
    ds.provenance["config_hash"] = cfg.hash();
    ds.provenance["seed"] = std::to_string(cfg.seed());
}

data::Dataset normal_corpus(const RunConfig& cfg) {
    const auto path = cfg.get_path("data.normal_path");
    if (!path.empty()) return data::load_corpus(path);
    auto ds = data::generate_normal(cfg.normal_data());
    stamp(ds, cfg);
    return ds;
}

data::Dataset fault_corpus(const RunConfig& cfg) {
    const auto path = cfg.get_path("data.fault_path");
    if (!path.empty()) return data::load_corpus(path);
    auto ds = data::generate_fault(cfg.fault_base(), cfg.fault_recipe());
    stamp(ds, cfg);
    return ds;
}

/// Held-out real fault samples; seeds continue after the training samples
/// so the two sets never share a base series.
data::Dataset reference_corpus(const RunConfig& cfg) {
    auto base = cfg.fault_base();
    base.seed += base.n_samples;
    base.n_samples = cfg.get_size("evaluate.n_real");
    auto ds = data::generate_fault(base, cfg.fault_recipe());
    ds.id += "_reference";
    stamp(ds, cfg);
    return ds;
}

data::Dataset normalized(const data::Dataset& ds, const std::optional<data::Normalizer>& norm) {
    return norm ? norm->apply(ds) : ds;
}

training::TrainOptions train_options(const RunConfig& cfg, const Layout& layout, const std::string& log_name,
                                     std::size_t total_steps, const Logger& log) {
    training::TrainOptions opt;
    opt.checkpoint_dir = layout.checkpoints();
    opt.loss_csv = layout.logs() / (log_name + "_loss.csv");
    opt.config_echo = cfg.echo_json();
    opt.config_hash = cfg.hash();
    if (log)
        opt.on_step = [log, log_name, total_steps](const training::StepLoss& s) {
            if ((s.step + 1) % 100 == 0 || s.step + 1 == total_steps) {
                char buf[160];
                std::snprintf(buf, sizeof(buf), "%s step %zu/%zu loss %.5f (base %.5f, diversity %.5f)",
                              log_name.c_str(), s.step + 1, total_steps, s.total, s.base, s.diversity);
                log(buf);
            }
        };
    return opt;
}

Checkpoint load_base(const RunConfig& cfg, const Layout& layout) {
    auto path = cfg.get_path("finetune.base");
    if (path.empty()) path = layout.checkpoint("pretrain");
    if (!fs::exists(path)) throw CheckpointError("base checkpoint not found: " + path.string());
    return training::load_checkpoint(path);
}

std::optional<double> alpha_override(const RunConfig& cfg) {
    const auto& v = cfg.get("generate.alpha");
    if (v.empty()) return std::nullopt;
    double a = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), a);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(a))
        throw ConfigError("generate.alpha: '" + v + "' is not a finite number");
    return a;
}

data::Dataset to_dataset(std::vector<data::TimeSeries> series, std::string id, std::string label) {
    data::Dataset ds;
    ds.id = std::move(id);
    ds.label = std::move(label);
    ds.samples = std::move(series);
    return ds;
}

nlohmann::ordered_json scores_json(const metrics::ClassScores& s) {
    return {{"accuracy", s.accuracy}, {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
}

} // namespace

std::string file_hash(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot read " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (!in) break;
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return out;
}

std::vector<data::Dataset> make_data(const RunConfig& cfg, DataKind kind, const Logger& log) {
    std::vector<data::Dataset> out;
    // Build everything before touching the output directory.
    if (kind != DataKind::fault) out.push_back(normal_corpus(cfg));
    if (kind != DataKind::normal) out.push_back(fault_corpus(cfg));

    Step step(cfg, "make-data");
    for (const auto& ds : out) {
        const auto dir = ds.label == "normal" ? step.layout().normal_corpus() : step.layout().fault_corpus();
        data::save_corpus(ds, dir);
        emit(log, "wrote " + ds.id + " (" + std::to_string(ds.size()) + " samples, " + std::to_string(ds.seq_len()) +
                      "x" + std::to_string(ds.channels()) + ", label " + ds.label + ") to " + dir.string());
    }
    step.finish();
    return out;
}

Checkpoint run_pretrain(const RunConfig& cfg, const Logger& log) {
    const auto model = cfg.denoiser();
    const auto schedule = cfg.schedule();
    const auto train = cfg.train(Phase::pretrain);
    train.validate();
    const auto mode = cfg.norm_mode();
    std::optional<Checkpoint> resume;
    if (const auto p = cfg.get_path("pretrain.resume"); !p.empty()) resume = training::load_checkpoint(p);
    const auto normal = normal_corpus(cfg);

    Step step(cfg, "pretrain");
    const auto norm = data::fit_normalizer(normal, mode);
    auto opt = train_options(cfg, step.layout(), "pretrain", train.steps, log);
    opt.normalizer = norm;
    if (resume) opt.resume = &*resume;
    emit(log, "pretraining on " + normal.id + " for " + std::to_string(train.steps) + " steps");
    auto ckpt = training::pretrain(norm.apply(normal), model, schedule, train, opt);
    const auto path = step.layout().checkpoint("pretrain");
    training::save_checkpoint(ckpt, path);
    emit(log, "saved " + path.string());
    step.finish();
    return ckpt;
}

Checkpoint run_finetune(const RunConfig& cfg, const Logger& log) {
    const auto adapter = cfg.adapter();
    const auto train = cfg.train(Phase::finetune);
    train.validate();
    const auto loss = cfg.loss();
    std::optional<Checkpoint> resume;
    if (const auto p = cfg.get_path("finetune.resume"); !p.empty()) resume = training::load_checkpoint(p);
    const auto fault = fault_corpus(cfg);
    const Layout layout(cfg.out_dir());
    const auto base = load_base(cfg, layout);

    Step step(cfg, "finetune");
    auto opt = train_options(cfg, step.layout(), "finetune", train.steps, log);
    if (resume) opt.resume = &*resume;
    emit(log, "fine-tuning adapter on " + fault.id + " (" + std::to_string(fault.size()) + " samples, " +
                  training::diversity_mode_name(loss.mode) + " diversity, lambda " + cfg.get("loss.lambda") + ")");
    auto ckpt = training::finetune(normalized(fault, base.normalizer), base, adapter, train, loss, opt);
    const auto path = step.layout().checkpoint("finetune");
    training::save_checkpoint(ckpt, path);
    emit(log, "saved " + path.string());
    step.finish();
    return ckpt;
}

GenerateResult run_generate(const RunConfig& cfg, const Logger& log) {
    const auto n = cfg.get_size("generate.n");
    const auto batch = cfg.get_size("generate.batch");
    if (n == 0 || batch == 0) throw ConfigError("generate.n and generate.batch must be positive");
    const auto alpha = alpha_override(cfg);
    const auto name = cfg.get("generate.name");
    if (name.empty() || name.find('/') != std::string::npos || name == "." || name == "..")
        throw ConfigError("generate.name must be a plain directory name");
    const Layout layout(cfg.out_dir());
    auto path = cfg.get_path("generate.checkpoint");
    if (path.empty()) path = layout.checkpoint("finetune");
    if (!fs::exists(path)) throw CheckpointError("checkpoint not found: " + path.string());
    const auto ckpt = training::load_checkpoint(path);
    auto model = training::Model::from_checkpoint(ckpt);
    if (alpha) {
        if (model.adapter()) model.set_alpha(*alpha);
        else emit(log, "checkpoint has no adapter; generate.alpha ignored");
    }

    Step step(cfg, "generate");
    GenerateResult result;
    result.checkpoint_hash = file_hash(path);
    const std::uint64_t seed = derive_seed(cfg.seed(), 5);
    emit(log, "generating " + std::to_string(n) + " samples from " + path.filename().string());
    result.corpus = to_dataset(model.generate(n, seed, batch),
                               "synth_" + ckpt.phase + "_n" + std::to_string(n) + "_s" + std::to_string(cfg.seed()),
                               ckpt.adapter ? "fault:" + cfg.get("data.fault_kind") : "normal");
    result.corpus.seed = seed;
    stamp(result.corpus, cfg);
    result.corpus.provenance["checkpoint_hash"] = result.checkpoint_hash;
    result.corpus.provenance["checkpoint_phase"] = ckpt.phase;
    if (model.adapter()) result.corpus.provenance["alpha"] = std::to_string(model.adapter()->config().alpha);
    result.corpus_dir = step.layout().samples() / name;
    data::save_corpus(result.corpus, result.corpus_dir);

    nlohmann::ordered_json j;
    j["config_hash"] = cfg.hash();
    j["seed"] = cfg.seed();
    j["sampling_seed"] = seed;
    j["checkpoint"] = path.filename().string();
    j["checkpoint_hash"] = result.checkpoint_hash;
    j["checkpoint_phase"] = ckpt.phase;
    j["alpha"] = model.adapter() ? nlohmann::ordered_json(model.adapter()->config().alpha) : nullptr;
    j["n"] = n;
    j["corpus"] = result.corpus.id;
    write_text(step.layout().logs() / ("generate_" + name + ".json"), j.dump(2) + "\n");
    emit(log, "wrote " + result.corpus_dir.string());
    step.finish();
    return result;
}

metrics::MetricReport run_evaluate(const RunConfig& cfg, const Logger& log) {
    const auto options = cfg.evaluate_options();
    const Layout layout(cfg.out_dir());
    const auto real_path = cfg.get_path("evaluate.real");
    auto synth_path = cfg.get_path("evaluate.synth");
    if (synth_path.empty()) synth_path = layout.samples() / cfg.get("generate.name");
    const auto real = real_path.empty() ? reference_corpus(cfg) : data::load_corpus(real_path);
    const auto synth = data::load_corpus(synth_path);
    if (real.seq_len() != synth.seq_len() || real.channels() != synth.channels())
        throw DimensionError("evaluate: real corpus is " + std::to_string(real.seq_len()) + "x" +
                             std::to_string(real.channels()) + " but synthetic corpus is " +
                             std::to_string(synth.seq_len()) + "x" + std::to_string(synth.channels()));

    Step step(cfg, "evaluate");
    emit(log, "evaluating " + synth.id + " against " + real.id);
    auto report = metrics::evaluate(real, synth, options);
    metrics::write_report(report, step.layout().reports() / "metrics.json", step.layout().reports() / "metrics.csv");
    for (const auto& m : report.metrics()) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%-15s median %.6g", m.c_str(), *report.median(m));
        emit(log, buf);
    }
    step.finish();
    return report;
}

metrics::Embedding run_embed(const RunConfig& cfg, const Logger& log) {
    metrics::EmbedOptions options;
    const auto method = cfg.get("embed.method");
    if (method == "pca") options.method = metrics::EmbedMethod::pca;
    else if (method == "tsne") options.method = metrics::EmbedMethod::tsne;
    else throw ConfigError("embed.method must be pca or tsne, got '" + method + "'");
    options.perplexity = cfg.get_real("embed.perplexity");
    options.iterations = cfg.get_size("embed.iterations");
    options.seed = cfg.seed();
    const Layout layout(cfg.out_dir());
    std::vector<std::pair<std::string, data::Dataset>> sets{{"normal", normal_corpus(cfg)}, {"real", fault_corpus(cfg)}};
    auto synth_path = cfg.get_path("evaluate.synth");
    if (synth_path.empty()) synth_path = layout.samples() / cfg.get("generate.name");
    if (fs::exists(synth_path / "manifest.json")) sets.emplace_back("synthetic", data::load_corpus(synth_path));
    else emit(log, "no synthetic corpus at " + synth_path.string() + "; embedding real data only");

    Step step(cfg, "embed");
    auto e = metrics::embed_2d(sets, options);
    metrics::write_embedding(e, step.layout().reports() / "embed_points.csv",
                             step.layout().reports() / "embed_kde.csv");
    emit(log, "wrote " + std::to_string(e.points.size()) + " embedded points (" + method + ")");
    step.finish();
    return e;
}

DownstreamResult run_downstream(const RunConfig& cfg, const Logger& log) {
    const auto kinds = cfg.get_list("downstream.kinds");
    if (kinds.size() < 2) throw ConfigError("downstream.kinds needs at least 2 fault kinds");
    const auto n_train = cfg.get_size("downstream.n_train");
    const auto n_test = cfg.get_size("downstream.n_test");
    const auto n_synth = cfg.get_size("downstream.n_synth");
    const bool augment = cfg.get_bool("downstream.augment");
    if (n_train < 2 || n_test < 1) throw ConfigError("downstream needs n_train >= 2 and n_test >= 1");
    std::vector<data::FaultRecipe> recipes;
    for (const auto& k : kinds) {
        auto r = cfg.fault_recipe();
        try {
            r.kind = data::parse_fault_kind(k);
        } catch (const ContractError& e) {
            throw ConfigError(std::string("downstream.kinds: ") + e.what());
        }
        if (r.kind != data::FaultKind::compound) r.components.clear();
        recipes.push_back(r);
    }
    const auto adapter = cfg.adapter();
    const auto train_cfg = cfg.train(Phase::finetune);
    const auto loss = cfg.loss();
    const Layout layout(cfg.out_dir());
    std::optional<Checkpoint> base;
    if (augment && n_synth > 0) base = load_base(cfg, layout);

    Step step(cfg, "downstream");
    const auto fault_seed = static_cast<std::uint64_t>(cfg.get_int("data.fault_seed"));
    std::vector<data::Dataset> train, test, synth;
    for (std::size_t k = 0; k < recipes.size(); ++k) {
        auto gen = cfg.fault_base();
        gen.n_samples = n_train;
        gen.seed = derive_seed(fault_seed, 100 + k);
        train.push_back(data::generate_fault(gen, recipes[k]));
        gen.n_samples = n_test;
        gen.seed = derive_seed(fault_seed, 200 + k);
        test.push_back(data::generate_fault(gen, recipes[k]));
        if (!base) continue;

        const std::string tag = "downstream_" + kinds[k];
        auto opt = train_options(cfg, step.layout(), tag, train_cfg.steps, log);
        opt.checkpoint_dir.reset();
        emit(log, "fine-tuning adapter for class " + train.back().label);
        const auto ckpt = training::finetune(normalized(train.back(), base->normalizer), *base, adapter, train_cfg,
                                             loss, opt);
        training::save_checkpoint(ckpt, step.layout().checkpoint(tag));
        const auto model = training::Model::from_checkpoint(ckpt);
        auto ds = to_dataset(model.generate(n_synth, derive_seed(cfg.seed(), 300 + k)),
                             "synth_" + kinds[k] + "_n" + std::to_string(n_synth), train.back().label);
        stamp(ds, cfg);
        data::save_corpus(ds, step.layout().samples() / tag);
        synth.push_back(std::move(ds));
    }

    DownstreamResult result;
    for (const auto& t : train) result.classes.push_back(t.label);
    result.real_only = metrics::downstream_eval(train, {}, test, cfg.seed());
    if (!synth.empty()) result.augmented = metrics::downstream_eval(train, synth, test, cfg.seed());
    write_text(step.layout().reports() / "downstream.json", downstream_json(result, cfg));
    char buf[160];
    std::snprintf(buf, sizeof(buf), "real-only accuracy %.4f f1 %.4f", result.real_only.accuracy, result.real_only.f1);
    emit(log, buf);
    if (result.augmented) {
        std::snprintf(buf, sizeof(buf), "augmented accuracy %.4f f1 %.4f", result.augmented->accuracy,
                      result.augmented->f1);
        emit(log, buf);
    }
    step.finish();
    return result;
}

std::string downstream_json(const DownstreamResult& result, const RunConfig& cfg) {
    nlohmann::ordered_json j;
    j["config_hash"] = cfg.hash();
    j["seed"] = cfg.seed();
    j["metric_version"] = metrics::kMetricVersion;
    j["classes"] = result.classes;
    j["real_only"] = scores_json(result.real_only);
    j["augmented"] = result.augmented ? scores_json(*result.augmented) : nlohmann::ordered_json(nullptr);
    return j.dump(2) + "\n";
}

} // namespace faultdiff::pipeline
