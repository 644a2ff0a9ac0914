#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "faultdiff/training.hpp"

namespace faultdiff::training {

namespace fs = std::filesystem;
using nlohmann::json;

const NamedTensor* Checkpoint::find(const std::string& name, const std::string& grp) const {
    for (const auto& t : tensors)
        if (t.name == name && t.group == grp) return &t;
    return nullptr;
}

std::vector<const NamedTensor*> Checkpoint::group(const std::string& grp) const {
    std::vector<const NamedTensor*> out;
    for (const auto& t : tensors)
        if (t.group == grp) out.push_back(&t);
    return out;
}

namespace {

constexpr char kMagic[4] = {'F', 'D', 'C', 'K'};

std::uint64_t fnv1a(const std::uint8_t* p, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(const std::uint8_t* p, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= std::uint64_t(p[i]) << (8 * i);
    return v;
}

json denoiser_json(const denoiser::DenoiserConfig& c) {
    return {{"model_dim", c.model_dim}, {"enc_layers", c.enc_layers}, {"dec_layers", c.dec_layers},
            {"heads", c.heads},         {"ff_dim", c.ff_dim},         {"fourier_pairs", c.fourier_pairs},
            {"seq_len", c.seq_len},     {"channels", c.channels},     {"steps", c.steps}};
}

denoiser::DenoiserConfig denoiser_from(const json& j) {
    denoiser::DenoiserConfig c;
    c.model_dim = j.at("model_dim");
    c.enc_layers = j.at("enc_layers");
    c.dec_layers = j.at("dec_layers");
    c.heads = j.at("heads");
    c.ff_dim = j.at("ff_dim");
    c.fourier_pairs = j.at("fourier_pairs");
    c.seq_len = j.at("seq_len");
    c.channels = j.at("channels");
    c.steps = j.at("steps");
    return c;
}

json adapter_json(const adapter::AdapterConfig& c) {
    return {{"window", c.window}, {"heads", c.heads}, {"model_dim", c.model_dim}, {"alpha", c.alpha}};
}

adapter::AdapterConfig adapter_from(const json& j) {
    adapter::AdapterConfig c;
    c.window = j.at("window");
    c.heads = j.at("heads");
    c.model_dim = j.at("model_dim");
    c.alpha = j.at("alpha");
    return c;
}

json normalizer_json(const data::Normalizer& n) {
    return {{"mode", n.mode == data::NormMode::minmax ? "minmax" : "zscore"}, {"lo", n.lo}, {"hi", n.hi}};
}

data::Normalizer normalizer_from(const json& j) {
    data::Normalizer n;
    const std::string mode = j.at("mode");
    if (mode == "minmax") n.mode = data::NormMode::minmax;
    else if (mode == "zscore") n.mode = data::NormMode::zscore;
    else throw std::runtime_error("unknown normalizer mode '" + mode + "'");
    n.lo = j.at("lo").get<std::vector<double>>();
    n.hi = j.at("hi").get<std::vector<double>>();
    if (n.lo.size() != n.hi.size()) throw std::runtime_error("normalizer lo/hi length mismatch");
    return n;
}

} // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    std::vector<std::uint8_t> payload;
    json tensors = json::array();
    for (const auto& t : ckpt.tensors) {
        tensors.push_back({{"name", t.name}, {"group", t.group}, {"shape", t.value.shape()}, {"offset", payload.size()}});
        for (float v : t.value.data()) put_le(payload, std::bit_cast<std::uint32_t>(v), 4);
    }

    json header;
    header["phase"] = ckpt.phase;
    header["step"] = ckpt.step;
    header["rng_state"] = ckpt.rng_state;
    header["adam_step"] = ckpt.adam_step;
    header["denoiser"] = denoiser_json(ckpt.denoiser);
    header["schedule"] = {{"kind", diffusion::schedule_kind_name(ckpt.schedule.kind)},
                          {"beta_start", ckpt.schedule.beta_start},
                          {"beta_end", ckpt.schedule.beta_end}};
    header["adapter"] = ckpt.adapter ? adapter_json(*ckpt.adapter) : json(nullptr);
    header["normalizer"] = ckpt.normalizer ? normalizer_json(*ckpt.normalizer) : json(nullptr);
    header["config_echo"] = ckpt.config_echo.empty() ? json(nullptr) : json::parse(ckpt.config_echo);
    header["config_hash"] = ckpt.config_hash;
    header["payload_bytes"] = payload.size();
    header["checksum"] = hex64(fnv1a(payload.data(), payload.size()));
    header["tensors"] = std::move(tensors);
    const std::string text = header.dump();

    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    put_le(out, Checkpoint::kVersion, 2);
    put_le(out, text.size(), 4);
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
    auto fail = [&](const std::string& why) { return CheckpointError("checkpoint " + origin + ": " + why); };
    if (bytes.size() < 10) throw fail("truncated (" + std::to_string(bytes.size()) + " bytes)");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw fail("bad magic, not a checkpoint file");
    const auto version = get_le(bytes.data() + 4, 2);
    if (version != Checkpoint::kVersion)
        throw fail("unsupported format version " + std::to_string(version) + " (expected " +
                   std::to_string(Checkpoint::kVersion) + ")");
    const std::size_t header_len = get_le(bytes.data() + 6, 4);
    if (10 + header_len > bytes.size()) throw fail("truncated header");

    json header;
    try {
        header = json::parse(bytes.begin() + 10, bytes.begin() + 10 + static_cast<std::ptrdiff_t>(header_len));
    } catch (const std::exception& e) {
        throw fail(std::string("malformed header: ") + e.what());
    }

    const std::uint8_t* payload = bytes.data() + 10 + header_len;
    const std::size_t payload_size = bytes.size() - 10 - header_len;
    Checkpoint ckpt;
    try {
        const std::size_t declared = header.at("payload_bytes");
        if (declared != payload_size)
            throw fail("payload is " + std::to_string(payload_size) + " bytes, header declares " +
                       std::to_string(declared) + (payload_size < declared ? " (truncated)" : ""));
        if (header.at("checksum").get<std::string>() != hex64(fnv1a(payload, payload_size)))
            throw fail("payload checksum mismatch (corrupted data)");

        ckpt.phase = header.at("phase");
        ckpt.step = header.at("step");
        ckpt.rng_state = header.at("rng_state");
        ckpt.adam_step = header.at("adam_step");
        ckpt.denoiser = denoiser_from(header.at("denoiser"));
        const json& s = header.at("schedule");
        ckpt.schedule.kind = diffusion::parse_schedule_kind(s.at("kind"));
        ckpt.schedule.beta_start = s.at("beta_start");
        ckpt.schedule.beta_end = s.at("beta_end");
        if (!header.at("adapter").is_null()) ckpt.adapter = adapter_from(header["adapter"]);
        if (!header.at("normalizer").is_null()) ckpt.normalizer = normalizer_from(header["normalizer"]);
        if (!header.at("config_echo").is_null()) ckpt.config_echo = header["config_echo"].dump();
        ckpt.config_hash = header.at("config_hash");

        std::size_t expected_offset = 0;
        for (const auto& t : header.at("tensors")) {
            NamedTensor nt;
            nt.name = t.at("name");
            nt.group = t.at("group");
            const Shape shape = t.at("shape").get<Shape>();
            const std::size_t offset = t.at("offset");
            const std::size_t n = shape_numel(shape);
            if (offset != expected_offset || offset + 4 * n > payload_size)
                throw fail("tensor '" + nt.name + "' lies outside the payload");
            nt.value = TensorF(shape);
            for (std::size_t i = 0; i < n; ++i)
                nt.value[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(payload + offset + 4 * i, 4)));
            expected_offset = offset + 4 * n;
            ckpt.tensors.push_back(std::move(nt));
        }
        if (expected_offset != payload_size) throw fail("trailing bytes after the last tensor");
    } catch (const CheckpointError&) {
        throw;
    } catch (const std::exception& e) {
        throw fail(std::string("malformed header: ") + e.what());
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
    const auto bytes = encode_checkpoint(ckpt);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw CheckpointError("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes, path.string());
}

} // namespace faultdiff::training
