// Command-line front end. Talks to the library only through faultdiff.h.

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "faultdiff/faultdiff.h"

namespace {

constexpr int kExitUsage = 2;

struct Globals {
    std::string config_path;
    std::optional<std::string> seed;
    std::optional<std::string> out;
    std::string preset = "desk";
    std::vector<std::string> overrides;
};

/// Verb flag -> config key; applied after --config and before --override.
struct FlagMap {
    std::vector<std::pair<std::string, std::string>> entries;  // flag, key
    std::map<std::string, std::string> values;                 // flag -> value
};

void stderr_logger(const char* message, void*) { std::fprintf(stderr, "[faultdiff] %s\n", message); }

int fail(fd_status status, const std::string& context = "") {
    std::fprintf(stderr, "error: %s%s\n", context.c_str(), fd_last_error());
    return static_cast<int>(status);
}

struct ConfigHandle {
    fd_config* ptr = nullptr;
    ~ConfigHandle() { fd_config_free(ptr); }
};

int build_config(const Globals& g, const FlagMap& flags, ConfigHandle& cfg) {
    const char* preset = g.preset.c_str();
    fd_status s = g.config_path.empty() ? fd_config_new(preset, &cfg.ptr)
                                        : fd_config_load(g.config_path.c_str(), preset, &cfg.ptr);
    if (s != FD_OK) return fail(s, g.config_path.empty() ? "--preset: " : "--config: ");
    if (g.seed && (s = fd_config_set(cfg.ptr, "run.seed", g.seed->c_str())) != FD_OK) return fail(s, "--seed: ");
    if (g.out && (s = fd_config_set(cfg.ptr, "run.out", g.out->c_str())) != FD_OK) return fail(s, "--out: ");
    for (const auto& [flag, key] : flags.entries) {
        const auto it = flags.values.find(flag);
        if (it == flags.values.end()) continue;
        const std::string name = flag.substr(flag.find(' ') + 1);
        if ((s = fd_config_set(cfg.ptr, key.c_str(), it->second.c_str())) != FD_OK) return fail(s, name + ": ");
    }
    for (const auto& o : g.overrides)
        if ((s = fd_config_override(cfg.ptr, o.c_str())) != FD_OK) return fail(s, "--override: ");
    return 0;
}

/// Registers a string-valued verb flag that maps onto a config key.
void map_flag(CLI::App* app, FlagMap& flags, const std::string& flag, const std::string& key, const std::string& help) {
    // Entries are keyed by verb so two verbs may share a flag name.
    const std::string id = app->get_name() + " " + flag;
    flags.entries.emplace_back(id, key);
    app->add_option_function<std::string>(
        flag, [&flags, id](const std::string& v) { flags.values[id] = v; }, help + " (" + key + ")");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Few-shot fault time series generation with a diffusion backbone and a difference adapter"};
    app.require_subcommand(0, 1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config_path, "sectioned key = value configuration file");
    app.add_option("--seed", g.seed, "master seed (run.seed)");
    app.add_option("--out", g.out, "output directory (run.out)");
    app.add_option("--preset", g.preset, "desk | paper")->check(CLI::IsMember({"desk", "paper"}));
    app.add_option("--override", g.overrides, "key=value, repeatable")->allow_extra_args(false);
    bool list_keys = false;
    app.add_flag("--list-keys", list_keys, "print every configuration key and exit");

    FlagMap flags;
    std::string data_kind = "both";

    auto* make_data = app.add_subcommand("make-data", "write the normal and/or fault corpus");
    make_data->add_option("--kind", data_kind, "normal | fault | both")->check(CLI::IsMember({"normal", "fault", "both"}));
    std::string count;
    make_data->add_option("--n", count, "sample count of the selected corpus");
    map_flag(make_data, flags, "--tau", "data.seq_len", "series length");
    map_flag(make_data, flags, "--dim", "data.channels", "channel count");
    map_flag(make_data, flags, "--normal-kind", "data.normal_kind", "sine | ar");
    map_flag(make_data, flags, "--fault", "data.fault_kind", "fault kind");
    map_flag(make_data, flags, "--fault-seed", "data.fault_seed", "fault corpus seed");
    map_flag(make_data, flags, "--magnitude", "data.fault_magnitude", "fixed fault magnitude");
    map_flag(make_data, flags, "--onset", "data.fault_onset", "fixed onset");
    map_flag(make_data, flags, "--duration", "data.fault_duration", "fixed duration");
    map_flag(make_data, flags, "--channels", "data.fault_channels", "affected channels, comma separated");
    map_flag(make_data, flags, "--components", "data.fault_components", "compound sub-fault kinds");

    auto* pretrain = app.add_subcommand("pretrain", "train the backbone on normal data");
    map_flag(pretrain, flags, "--steps", "pretrain.steps", "training steps");
    map_flag(pretrain, flags, "--resume", "pretrain.resume", "checkpoint to resume");

    auto* finetune = app.add_subcommand("finetune", "train the adapter on the few-shot fault corpus");
    map_flag(finetune, flags, "--steps", "finetune.steps", "training steps");
    map_flag(finetune, flags, "--base", "finetune.base", "pretrained checkpoint");
    map_flag(finetune, flags, "--resume", "finetune.resume", "checkpoint to resume");
    map_flag(finetune, flags, "--lambda", "loss.lambda", "diversity weight");
    map_flag(finetune, flags, "--diversity-mode", "loss.diversity_mode", "intent | literal | off");

    auto* generate = app.add_subcommand("generate", "sample a corpus from a checkpoint");
    map_flag(generate, flags, "--count", "generate.n", "samples to draw");
    map_flag(generate, flags, "--alpha", "generate.alpha", "adapter scale override");
    map_flag(generate, flags, "--checkpoint", "generate.checkpoint", "checkpoint file");
    map_flag(generate, flags, "--name", "generate.name", "corpus directory under samples/");

    auto* evaluate = app.add_subcommand("evaluate", "score a synthetic corpus against real data");
    map_flag(evaluate, flags, "--real", "evaluate.real", "real corpus directory");
    map_flag(evaluate, flags, "--synth", "evaluate.synth", "synthetic corpus directory");
    map_flag(evaluate, flags, "--metrics", "evaluate.metrics", "metric names or all");
    map_flag(evaluate, flags, "--seeds", "evaluate.seeds", "comma separated seeds");

    auto* embed = app.add_subcommand("embed", "2-D embedding and KDE of normal, real and synthetic corpora");
    map_flag(embed, flags, "--method", "embed.method", "pca | tsne");
    map_flag(embed, flags, "--synth", "evaluate.synth", "synthetic corpus directory");

    auto* downstream = app.add_subcommand("downstream", "fault classification with and without augmentation");
    map_flag(downstream, flags, "--kinds", "downstream.kinds", "fault classes");
    map_flag(downstream, flags, "--augment", "downstream.augment", "true | false");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }
    if (list_keys) {
        std::fputs(fd_config_keys(), stdout);
        return 0;
    }
    if (app.get_subcommands().empty()) {
        std::fprintf(stderr, "%s\nerror: a verb is required\n", app.help().c_str());
        return kExitUsage;
    }

    if (make_data->parsed() && !count.empty()) {
        if (data_kind == "both") {
            std::fprintf(stderr, "error: --n needs --kind normal or --kind fault\n");
            return kExitUsage;
        }
        flags.entries.emplace_back("make-data --n", data_kind == "normal" ? "data.n_normal" : "data.n_fault");
        flags.values["make-data --n"] = count;
    }

    ConfigHandle cfg;
    if (const int rc = build_config(g, flags, cfg)) return rc;
    fd_set_logger(stderr_logger, nullptr);

    const char* hash = nullptr;
    fd_config_hash(cfg.ptr, &hash);
    const char* out_dir = nullptr;
    fd_config_get(cfg.ptr, "run.out", &out_dir);
    std::fprintf(stderr, "[faultdiff] config hash %s, output %s\n", hash, out_dir);

    fd_status s = FD_OK;
    if (make_data->parsed()) {
        s = fd_run_make_data(cfg.ptr, data_kind.c_str());
    } else if (pretrain->parsed()) {
        s = fd_run_pretrain(cfg.ptr);
    } else if (finetune->parsed()) {
        s = fd_run_finetune(cfg.ptr);
    } else if (generate->parsed()) {
        fd_dataset* ds = nullptr;
        s = fd_run_generate(cfg.ptr, &ds);
        if (s == FD_OK)
            std::printf("%s: %zu samples of %zux%zu\n", fd_dataset_id(ds), fd_dataset_size(ds), fd_dataset_seq_len(ds),
                        fd_dataset_channels(ds));
        fd_dataset_free(ds);
    } else if (evaluate->parsed()) {
        fd_report* report = nullptr;
        s = fd_run_evaluate(cfg.ptr, &report);
        if (s == FD_OK) std::fputs(fd_report_csv(report), stdout);
        fd_report_free(report);
    } else if (embed->parsed()) {
        s = fd_run_embed(cfg.ptr);
    } else if (downstream->parsed()) {
        const char* json = nullptr;
        s = fd_run_downstream(cfg.ptr, &json);
        if (s == FD_OK) std::fputs(json, stdout);
    }
    if (s != FD_OK) return fail(s);
    return 0;
}
