#include "faultdiff/faultdiff.h"

#include <memory>
#include <sstream>
#include <string>

#include "faultdiff/config.hpp"
#include "faultdiff/errors.hpp"
#include "faultdiff/metrics.hpp"
#include "faultdiff/pipeline.hpp"
#include "faultdiff/training.hpp"

using namespace faultdiff;

struct fd_config {
    config::RunConfig cfg;
    std::string scratch;
};

struct fd_dataset {
    data::Dataset ds;
};

struct fd_model {
    training::Model model;
};

struct fd_report {
    metrics::MetricReport report;
    std::string json;
    std::string csv;
};

namespace {

thread_local std::string last_error;
fd_log_fn log_fn = nullptr;
void* log_user = nullptr;

pipeline::Logger logger() {
    if (!log_fn) return {};
    return [](const std::string& msg) {
        if (log_fn) log_fn(msg.c_str(), log_user);
    };
}

template <typename Fn>
fd_status guard(Fn&& fn) {
    try {
        fn();
        last_error.clear();
        return FD_OK;
    } catch (const CheckpointError& e) {
        last_error = e.what();
        return FD_ERR_CHECKPOINT;
    } catch (const DivergenceError& e) {
        last_error = e.what();
        return FD_ERR_NUMERIC;
    } catch (const SamplingError& e) {
        last_error = e.what();
        return FD_ERR_NUMERIC;
    } catch (const ForwardError& e) {
        last_error = e.what();
        return FD_ERR_NUMERIC;
    } catch (const ConfigError& e) {
        last_error = e.what();
        return FD_ERR_USAGE;
    } catch (const CorpusError& e) {
        last_error = e.what();
        return FD_ERR_USAGE;
    } catch (const ContractError& e) {
        last_error = e.what();
        return FD_ERR_USAGE;
    } catch (const std::exception& e) {
        last_error = e.what();
        return FD_ERR_INTERNAL;
    } catch (...) {
        last_error = "unknown error";
        return FD_ERR_INTERNAL;
    }
}

void require(const void* p, const char* what) {
    if (!p) throw ContractError(std::string(what) + " is NULL");
}

std::string str(const char* s) { return s ? s : ""; }

} // namespace

extern "C" {

const char* fd_version(void) { return "0.1.0"; }
const char* fd_last_error(void) { return last_error.c_str(); }

void fd_set_logger(fd_log_fn fn, void* user) {
    log_fn = fn;
    log_user = user;
}

fd_status fd_config_new(const char* preset, fd_config** out) {
    return guard([&] {
        require(out, "out");
        *out = new fd_config{config::RunConfig(preset ? preset : "desk"), {}};
    });
}

fd_status fd_config_load(const char* path, const char* preset, fd_config** out) {
    return guard([&] {
        require(path, "path");
        require(out, "out");
        *out = new fd_config{config::RunConfig::from_file(path, preset ? preset : "desk"), {}};
    });
}

void fd_config_free(fd_config* cfg) { delete cfg; }

fd_status fd_config_set(fd_config* cfg, const char* key, const char* value) {
    return guard([&] {
        require(cfg, "cfg");
        cfg->cfg.set(str(key), str(value));
    });
}

fd_status fd_config_override(fd_config* cfg, const char* assignment) {
    return guard([&] {
        require(cfg, "cfg");
        cfg->cfg.apply_override(str(assignment));
    });
}

fd_status fd_config_get(const fd_config* cfg, const char* key, const char** value) {
    return guard([&] {
        require(cfg, "cfg");
        require(value, "value");
        *value = cfg->cfg.get(str(key)).c_str();
    });
}

fd_status fd_config_hash(const fd_config* cfg, const char** hash) {
    return guard([&] {
        require(cfg, "cfg");
        require(hash, "hash");
        auto* c = const_cast<fd_config*>(cfg);
        c->scratch = cfg->cfg.hash();
        *hash = c->scratch.c_str();
    });
}

fd_status fd_config_text(const fd_config* cfg, const char** text) {
    return guard([&] {
        require(cfg, "cfg");
        require(text, "text");
        auto* c = const_cast<fd_config*>(cfg);
        c->scratch = cfg->cfg.canonical_text() + "# hash " + cfg->cfg.hash() + "\n";
        *text = c->scratch.c_str();
    });
}

const char* fd_config_keys(void) {
    static const std::string text = [] {
        std::ostringstream out;
        static const char* names[] = {"integer", "real", "text", "path", "boolean", "list"};
        for (const auto& k : config::schema())
            out << k.key << '\t' << names[static_cast<int>(k.type)] << '\t' << k.help << '\n';
        return out.str();
    }();
    return text.c_str();
}

fd_status fd_run_make_data(const fd_config* cfg, const char* which) {
    return guard([&] {
        require(cfg, "cfg");
        const std::string w = which ? which : "both";
        pipeline::DataKind kind;
        if (w == "normal") kind = pipeline::DataKind::normal;
        else if (w == "fault") kind = pipeline::DataKind::fault;
        else if (w == "both") kind = pipeline::DataKind::both;
        else throw ConfigError("data kind must be normal, fault or both, got '" + w + "'");
        pipeline::make_data(cfg->cfg, kind, logger());
    });
}

fd_status fd_run_pretrain(const fd_config* cfg) {
    return guard([&] {
        require(cfg, "cfg");
        pipeline::run_pretrain(cfg->cfg, logger());
    });
}

fd_status fd_run_finetune(const fd_config* cfg) {
    return guard([&] {
        require(cfg, "cfg");
        pipeline::run_finetune(cfg->cfg, logger());
    });
}

fd_status fd_run_generate(const fd_config* cfg, fd_dataset** out) {
    return guard([&] {
        require(cfg, "cfg");
        auto result = pipeline::run_generate(cfg->cfg, logger());
        if (out) *out = new fd_dataset{std::move(result.corpus)};
    });
}

fd_status fd_run_evaluate(const fd_config* cfg, fd_report** out) {
    return guard([&] {
        require(cfg, "cfg");
        auto report = pipeline::run_evaluate(cfg->cfg, logger());
        if (out) {
            auto json = metrics::report_json(report), csv = metrics::report_csv(report);
            *out = new fd_report{std::move(report), std::move(json), std::move(csv)};
        }
    });
}

fd_status fd_run_embed(const fd_config* cfg) {
    return guard([&] {
        require(cfg, "cfg");
        pipeline::run_embed(cfg->cfg, logger());
    });
}

fd_status fd_run_downstream(const fd_config* cfg, const char** json) {
    return guard([&] {
        require(cfg, "cfg");
        const auto result = pipeline::run_downstream(cfg->cfg, logger());
        if (json) {
            auto* c = const_cast<fd_config*>(cfg);
            c->scratch = pipeline::downstream_json(result, cfg->cfg);
            *json = c->scratch.c_str();
        }
    });
}

fd_status fd_dataset_load(const char* dir, fd_dataset** out) {
    return guard([&] {
        require(dir, "dir");
        require(out, "out");
        *out = new fd_dataset{data::load_corpus(dir)};
    });
}

fd_status fd_dataset_save(const fd_dataset* ds, const char* dir) {
    return guard([&] {
        require(ds, "ds");
        require(dir, "dir");
        data::save_corpus(ds->ds, dir);
    });
}

void fd_dataset_free(fd_dataset* ds) { delete ds; }
size_t fd_dataset_size(const fd_dataset* ds) { return ds ? ds->ds.size() : 0; }
size_t fd_dataset_seq_len(const fd_dataset* ds) { return ds ? ds->ds.seq_len() : 0; }
size_t fd_dataset_channels(const fd_dataset* ds) { return ds ? ds->ds.channels() : 0; }
const char* fd_dataset_id(const fd_dataset* ds) { return ds ? ds->ds.id.c_str() : ""; }
const char* fd_dataset_label(const fd_dataset* ds) { return ds ? ds->ds.label.c_str() : ""; }

fd_status fd_dataset_sample(const fd_dataset* ds, size_t i, float* buffer, size_t capacity) {
    return guard([&] {
        require(ds, "ds");
        require(buffer, "buffer");
        if (i >= ds->ds.size()) throw ContractError("sample index out of range");
        const auto& v = ds->ds.samples[i].values.data();
        if (capacity < v.size()) throw ContractError("buffer too small");
        std::copy(v.begin(), v.end(), buffer);
    });
}

fd_status fd_model_load(const char* checkpoint, fd_model** out) {
    return guard([&] {
        require(checkpoint, "checkpoint");
        require(out, "out");
        const auto ckpt = training::load_checkpoint(checkpoint);
        *out = new fd_model{training::Model::from_checkpoint(ckpt)};
    });
}

void fd_model_free(fd_model* model) { delete model; }

fd_status fd_model_set_alpha(fd_model* model, double alpha) {
    return guard([&] {
        require(model, "model");
        if (!model->model.adapter()) throw ContractError("model has no adapter");
        model->model.set_alpha(alpha);
    });
}

fd_status fd_model_generate(const fd_model* model, size_t n, uint64_t seed, fd_dataset** out) {
    return guard([&] {
        require(model, "model");
        require(out, "out");
        data::Dataset ds;
        ds.id = "synth_n" + std::to_string(n) + "_s" + std::to_string(seed);
        ds.label = model->model.adapter() ? "fault" : "normal";
        ds.seed = seed;
        ds.samples = model->model.generate(n, seed);
        *out = new fd_dataset{std::move(ds)};
    });
}

fd_status fd_evaluate(const fd_dataset* real, const fd_dataset* synth, const char* metric_list, const char* seeds,
                      fd_report** out) {
    return guard([&] {
        require(real, "real");
        require(synth, "synth");
        require(out, "out");
        config::RunConfig cfg;
        if (metric_list) cfg.set("evaluate.metrics", metric_list);
        if (seeds) cfg.set("evaluate.seeds", seeds);
        auto options = cfg.evaluate_options();
        options.config_hash.clear();
        auto report = metrics::evaluate(real->ds, synth->ds, options);
        auto json = metrics::report_json(report), csv = metrics::report_csv(report);
        *out = new fd_report{std::move(report), std::move(json), std::move(csv)};
    });
}

void fd_report_free(fd_report* report) { delete report; }

fd_status fd_report_median(const fd_report* report, const char* metric, double* value) {
    return guard([&] {
        require(report, "report");
        require(value, "value");
        const auto m = report->report.median(str(metric));
        if (!m) throw ContractError("metric '" + str(metric) + "' was not evaluated");
        *value = *m;
    });
}

const char* fd_report_json(const fd_report* report) { return report ? report->json.c_str() : ""; }
const char* fd_report_csv(const fd_report* report) { return report ? report->csv.c_str() : ""; }

} // extern "C"
