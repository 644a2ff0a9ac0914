#include "faultdiff/config.hpp"
#include "faultdiff/errors.hpp"

#include <algorithm>
#include <cmath>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace faultdiff::config {

namespace fs = std::filesystem;

const std::vector<KeyInfo>& schema() {
    using V = ValueType;
    static const std::vector<KeyInfo> keys{
        {"run.seed", V::integer, "0", "0", "master seed"},
        {"run.out", V::path, "runs/desk", "runs/paper", "output directory"},

        {"data.seq_len", V::integer, "24", "24", "series length tau"},
        {"data.channels", V::integer, "2", "2", "channel count d"},
        {"data.normal_kind", V::text, "sine", "sine", "sine | ar"},
        {"data.n_normal", V::integer, "8", "1024", "normal corpus size"},
        {"data.noise_std", V::real, "0.05", "0.05", "observation noise of the sine generator"},
        {"data.n_fault", V::integer, "4", "4", "few-shot fault corpus size"},
        {"data.fault_seed", V::integer, "1000", "1000", "seed of the fault corpus"},
        {"data.fault_kind", V::text, "sudden", "sudden", "one of the 15 fault kinds"},
        {"data.fault_onset", V::text, "", "", "fixed onset (empty = drawn per sample)"},
        {"data.fault_duration", V::text, "", "", "fixed duration (empty = drawn)"},
        {"data.fault_magnitude", V::text, "", "", "fixed magnitude (empty = drawn)"},
        {"data.fault_channels", V::list, "", "", "affected channels (empty = all)"},
        {"data.fault_components", V::list, "", "", "compound sub-fault kinds"},
        {"data.norm", V::text, "minmax", "minmax", "minmax | zscore"},
        {"data.normal_path", V::path, "", "", "existing normal corpus (empty = generate)"},
        {"data.fault_path", V::path, "", "", "existing fault corpus (empty = generate)"},

        {"model.model_dim", V::integer, "64", "64", ""},
        {"model.enc_layers", V::integer, "3", "3", ""},
        {"model.dec_layers", V::integer, "4", "4", ""},
        {"model.heads", V::integer, "4", "4", ""},
        {"model.ff_dim", V::integer, "128", "128", ""},
        {"model.fourier_pairs", V::integer, "4", "4", ""},

        {"diffusion.steps", V::integer, "100", "1000", "diffusion steps T"},
        {"diffusion.schedule", V::text, "linear", "linear", "linear | cosine"},
        {"diffusion.beta_start", V::real, "0.001", "0.0001", ""},
        {"diffusion.beta_end", V::real, "0.2", "0.02", ""},

        {"adapter.window", V::integer, "5", "5", "odd attention window W"},
        {"adapter.heads", V::integer, "4", "4", ""},
        {"adapter.alpha", V::real, "1", "1", "adapter scale"},

        {"pretrain.steps", V::integer, "2000", "25000", ""},
        {"pretrain.batch_size", V::integer, "8", "64", ""},
        {"pretrain.learning_rate", V::real, "0.001", "1e-05", ""},
        {"pretrain.warmup_steps", V::integer, "0", "500", ""},
        {"pretrain.checkpoint_every", V::integer, "500", "5000", ""},
        {"pretrain.resume", V::path, "", "", "checkpoint to resume from"},

        {"finetune.steps", V::integer, "500", "5000", ""},
        {"finetune.batch_size", V::integer, "8", "64", ""},
        {"finetune.learning_rate", V::real, "0.0001", "1e-06", ""},
        {"finetune.warmup_steps", V::integer, "0", "500", ""},
        {"finetune.checkpoint_every", V::integer, "100", "1000", ""},
        {"finetune.base", V::path, "", "", "pretrained checkpoint (empty = run output)"},
        {"finetune.resume", V::path, "", "", "checkpoint to resume from"},

        {"loss.lambda", V::real, "0.1", "0.1", "diversity weight"},
        {"loss.margin", V::real, "1", "1", "distance clamp"},
        {"loss.pair_count", V::integer, "16", "16", "pairs per batch"},
        {"loss.diversity_mode", V::text, "intent", "intent", "intent | literal | off"},

        {"generate.n", V::integer, "64", "64", "samples to draw"},
        {"generate.batch", V::integer, "64", "64", "sampling batch"},
        {"generate.alpha", V::text, "", "", "adapter scale override (empty = checkpoint value)"},
        {"generate.name", V::text, "generated", "generated", "corpus directory under samples/"},
        {"generate.checkpoint", V::path, "", "", "checkpoint (empty = finetune output)"},

        {"evaluate.metrics", V::list, "all", "all", "metric names or all"},
        {"evaluate.seeds", V::list, "1,2,3", "1,2,3", ""},
        {"evaluate.max_lag", V::integer, "8", "8", "ACF lags for the diversity score"},
        {"evaluate.n_real", V::integer, "64", "64", "reference fault samples drawn when evaluate.real is empty"},
        {"evaluate.real", V::path, "", "", "real corpus (empty = fault corpus)"},
        {"evaluate.synth", V::path, "", "", "synthetic corpus (empty = generate output)"},

        {"embed.method", V::text, "pca", "pca", "pca | tsne"},
        {"embed.perplexity", V::real, "30", "30", ""},
        {"embed.iterations", V::integer, "1000", "1000", ""},

        {"downstream.kinds", V::list, "sudden,offset,periodic", "sudden,offset,periodic", "fault classes"},
        {"downstream.n_train", V::integer, "4", "4", "real training samples per class"},
        {"downstream.n_test", V::integer, "32", "32", "real test samples per class"},
        {"downstream.n_synth", V::integer, "32", "32", "generated samples per class"},
        {"downstream.augment", V::boolean, "true", "true", "add generated samples to training"},
    };
    return keys;
}

std::vector<std::string> preset_names() { return {"desk", "paper"}; }

namespace {

const KeyInfo* find_key(const std::string& key) {
    for (const auto& k : schema())
        if (k.key == key) return &k;
    return nullptr;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!trim(item).empty()) out.push_back(trim(item));
    return out;
}

std::string fmt_real(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

// Parses and re-formats a value so equal settings hash equally.
std::string canonical(const KeyInfo& info, const std::string& raw) {
    const std::string v = trim(raw);
    auto bad = [&](const char* what) {
        return ConfigError("config key '" + info.key + "': '" + v + "' is not " + what);
    };
    switch (info.type) {
    case ValueType::integer: {
        long long n = 0;
        auto res = std::from_chars(v.data(), v.data() + v.size(), n);
        if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size()) throw bad("an integer");
        return std::to_string(n);
    }
    case ValueType::real: {
        double d = 0;
        auto res = std::from_chars(v.data(), v.data() + v.size(), d);
        if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(d))
            throw bad("a finite number");
        return fmt_real(d);
    }
    case ValueType::boolean:
        if (v == "true" || v == "1" || v == "yes" || v == "on") return "true";
        if (v == "false" || v == "0" || v == "no" || v == "off") return "false";
        throw bad("a boolean");
    case ValueType::list: {
        std::string out;
        for (const auto& item : split_list(v)) out += (out.empty() ? "" : ",") + item;
        return out;
    }
    case ValueType::text:
    case ValueType::path:
        return v;
    }
    return v;
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Keys with a closed set of values are checked when set, so a bad value
// fails before any output is written.
void check_choice(const std::string& key, const std::string& value) {
    static const std::map<std::string, std::vector<std::string>> choices{
        {"data.normal_kind", {"sine", "ar"}},
        {"data.norm", {"minmax", "zscore"}},
        {"diffusion.schedule", {"linear", "cosine"}},
        {"loss.diversity_mode", {"intent", "literal", "off"}},
        {"embed.method", {"pca", "tsne"}},
    };
    try {
        if (key == "data.fault_kind") {
            data::parse_fault_kind(value);
            return;
        }
        if (key == "data.fault_components" || key == "downstream.kinds") {
            for (const auto& k : split_list(value)) data::parse_fault_kind(k);
            return;
        }
    } catch (const ContractError& e) {
        throw ConfigError("config key '" + key + "': " + e.what());
    }
    const auto it = choices.find(key);
    if (it == choices.end()) return;
    if (std::find(it->second.begin(), it->second.end(), value) != it->second.end()) return;
    std::string allowed;
    for (const auto& c : it->second) allowed += (allowed.empty() ? "" : " | ") + c;
    throw ConfigError("config key '" + key + "': '" + value + "' is not one of " + allowed);
}

} // namespace

RunConfig::RunConfig(const std::string& preset) { reset(preset); }

void RunConfig::reset(const std::string& preset) {
    const auto names = preset_names();
    if (std::find(names.begin(), names.end(), preset) == names.end())
        throw ConfigError("unknown preset '" + preset + "' (expected desk or paper)");
    preset_ = preset;
    values_.clear();
    for (const auto& k : schema()) values_[k.key] = canonical(k, preset == "desk" ? k.desk : k.paper);
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const auto* info = find_key(key);
    if (!info) throw ConfigError("unknown config key '" + key + "'");
    const auto v = canonical(*info, value);
    check_choice(key, v);
    values_[key] = v;
}

void RunConfig::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
    set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

RunConfig RunConfig::from_text(const std::string& text, const std::string& preset) {
    std::vector<std::pair<std::string, std::string>> entries;
    std::string section, chosen = preset;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find_first_of("#;");
        line = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        if (!section.empty()) key = section + "." + key;
        const std::string value = trim(line.substr(eq + 1));
        if (key == "run.preset") chosen = value;
        else entries.emplace_back(key, value);
    }
    RunConfig cfg(chosen);
    for (const auto& [k, v] : entries) cfg.set(k, v);
    return cfg;
}

RunConfig RunConfig::from_file(const fs::path& path, const std::string& preset) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return from_text(ss.str(), preset);
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

const std::string& RunConfig::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

std::int64_t RunConfig::get_int(const std::string& key) const { return std::stoll(get(key)); }

std::size_t RunConfig::get_size(const std::string& key) const {
    const auto v = get_int(key);
    if (v < 0) throw ConfigError("config key '" + key + "' must not be negative");
    return static_cast<std::size_t>(v);
}

double RunConfig::get_real(const std::string& key) const { return std::stod(get(key)); }
bool RunConfig::get_bool(const std::string& key) const { return get(key) == "true"; }
std::vector<std::string> RunConfig::get_list(const std::string& key) const { return split_list(get(key)); }
fs::path RunConfig::get_path(const std::string& key) const { return fs::path(get(key)); }

std::string RunConfig::canonical_text() const {
    std::string out = "run.preset = " + preset_ + "\n";
    std::string section;
    for (const auto& [key, value] : values_) {
        const auto dot = key.find('.');
        if (key.substr(0, dot) != section) {
            section = key.substr(0, dot);
            out += "[" + section + "]\n";
        }
        out += key.substr(dot + 1) + " = " + value + "\n";
    }
    return out;
}

std::string RunConfig::hash() const {
    std::string lines;
    for (const auto& [key, value] : values_)  // std::map iterates sorted
        if (find_key(key)->type != ValueType::path) lines += key + "=" + value + "\n";
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(lines)));
    return buf;
}

std::string RunConfig::echo_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [key, value] : values_)
        if (find_key(key)->type != ValueType::path) j[key] = value;
    return j.dump();
}

denoiser::DenoiserConfig RunConfig::denoiser() const {
    denoiser::DenoiserConfig c;
    c.model_dim = get_size("model.model_dim");
    c.enc_layers = get_size("model.enc_layers");
    c.dec_layers = get_size("model.dec_layers");
    c.heads = get_size("model.heads");
    c.ff_dim = get_size("model.ff_dim");
    c.fourier_pairs = get_size("model.fourier_pairs");
    c.seq_len = get_size("data.seq_len");
    c.channels = get_size("data.channels");
    c.steps = get_size("diffusion.steps");
    try {
        c.validate();
    } catch (const ContractError& e) {
        throw ConfigError(e.what());
    }
    return c;
}

training::ScheduleConfig RunConfig::schedule() const {
    training::ScheduleConfig s;
    try {
        s.kind = diffusion::parse_schedule_kind(get("diffusion.schedule"));
    } catch (const ContractError& e) {
        throw ConfigError(e.what());
    }
    s.beta_start = get_real("diffusion.beta_start");
    s.beta_end = get_real("diffusion.beta_end");
    return s;
}

adapter::AdapterConfig RunConfig::adapter() const {
    adapter::AdapterConfig a;
    a.window = get_size("adapter.window");
    a.heads = get_size("adapter.heads");
    a.model_dim = get_size("model.model_dim");
    a.alpha = get_real("adapter.alpha");
    try {
        a.validate(get_size("data.seq_len"));
    } catch (const ContractError& e) {
        throw ConfigError(e.what());
    }
    return a;
}

training::TrainConfig RunConfig::train(training::Phase phase) const {
    const std::string p = training::phase_name(phase) + ".";
    training::TrainConfig t;
    t.phase = phase;
    t.steps = get_size(p + "steps");
    t.batch_size = get_size(p + "batch_size");
    t.learning_rate = get_real(p + "learning_rate");
    t.warmup_steps = get_size(p + "warmup_steps");
    t.checkpoint_every = get_size(p + "checkpoint_every");
    t.seed = seed();
    return t;
}

training::LossConfig RunConfig::loss() const {
    training::LossConfig l;
    l.lambda = get_real("loss.lambda");
    l.margin = get_real("loss.margin");
    l.pair_count = get_size("loss.pair_count");
    try {
        l.mode = training::parse_diversity_mode(get("loss.diversity_mode"));
        l.validate();
    } catch (const ContractError& e) {
        throw ConfigError(e.what());
    }
    return l;
}

data::NormalConfig RunConfig::normal_data() const {
    data::NormalConfig n;
    n.seq_len = get_size("data.seq_len");
    n.channels = get_size("data.channels");
    n.n_samples = get_size("data.n_normal");
    n.noise_std = get_real("data.noise_std");
    n.seed = seed();
    const std::string kind = get("data.normal_kind");
    if (kind == "sine") n.kind = data::BaseKind::sine_mixture;
    else if (kind == "ar") n.kind = data::BaseKind::ar_process;
    else throw ConfigError("data.normal_kind must be sine or ar, got '" + kind + "'");
    return n;
}

data::NormalConfig RunConfig::fault_base() const {
    data::NormalConfig n = normal_data();
    n.n_samples = get_size("data.n_fault");
    n.seed = static_cast<std::uint64_t>(get_int("data.fault_seed"));
    n.structure_seed = seed();  // same process as the normal corpus
    return n;
}

data::FaultRecipe RunConfig::fault_recipe() const {
    data::FaultRecipe r;
    try {
        r.kind = data::parse_fault_kind(get("data.fault_kind"));
        for (const auto& k : get_list("data.fault_components")) r.components.push_back(data::parse_fault_kind(k));
    } catch (const ContractError& e) {
        throw ConfigError(e.what());
    }
    auto opt_size = [&](const std::string& key) -> std::optional<std::size_t> {
        const auto& v = get(key);
        if (v.empty()) return std::nullopt;
        std::size_t n = 0;
        auto res = std::from_chars(v.data(), v.data() + v.size(), n);
        if (res.ec != std::errc() || res.ptr != v.data() + v.size())
            throw ConfigError("config key '" + key + "': '" + v + "' is not a non-negative integer");
        return n;
    };
    r.onset = opt_size("data.fault_onset");
    r.duration = opt_size("data.fault_duration");
    if (!get("data.fault_magnitude").empty()) {
        const auto& v = get("data.fault_magnitude");
        double m = 0;
        auto res = std::from_chars(v.data(), v.data() + v.size(), m);
        if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(m))
            throw ConfigError("config key 'data.fault_magnitude': '" + v + "' is not a finite number");
        r.magnitude = m;
    }
    for (const auto& c : get_list("data.fault_channels")) {
        std::size_t ch = 0;
        auto res = std::from_chars(c.data(), c.data() + c.size(), ch);
        if (res.ec != std::errc() || res.ptr != c.data() + c.size())
            throw ConfigError("config key 'data.fault_channels': '" + c + "' is not a channel index");
        r.channels.push_back(ch);
    }
    return r;
}

data::NormMode RunConfig::norm_mode() const {
    const auto& v = get("data.norm");
    if (v == "minmax") return data::NormMode::minmax;
    if (v == "zscore") return data::NormMode::zscore;
    throw ConfigError("data.norm must be minmax or zscore, got '" + v + "'");
}

metrics::EvaluateOptions RunConfig::evaluate_options() const {
    metrics::EvaluateOptions o;
    const auto names = get_list("evaluate.metrics");
    if (!(names.size() == 1 && names[0] == "all")) {
        o.metrics.clear();
        for (const auto& n : names) {
            if (std::find(metrics::all_metric_names().begin(), metrics::all_metric_names().end(), n) ==
                metrics::all_metric_names().end())
                throw ConfigError("unknown metric '" + n + "'");
            o.metrics.push_back(n);
        }
    }
    o.seeds.clear();
    for (const auto& s : get_list("evaluate.seeds")) {
        std::uint64_t v = 0;
        auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size())
            throw ConfigError("evaluate.seeds: '" + s + "' is not a seed");
        o.seeds.push_back(v);
    }
    if (o.seeds.empty()) throw ConfigError("evaluate.seeds is empty");
    o.max_lag = get_size("evaluate.max_lag");
    o.config_hash = hash();
    return o;
}

} // namespace faultdiff::config
