#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "faultdiff/data.hpp"
#include "serialize.hpp"

namespace faultdiff::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_float(float v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace {

std::string sample_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample_%05zu.csv", i);
    return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

} // namespace

void save_corpus(const Dataset& ds, const fs::path& dir) {
    ds.validate();
    fs::create_directories(dir);
    const fs::path marker = dir / ".partial";
    std::ofstream(marker).put('\n');
    // Stale samples from an earlier, larger corpus would break the count check.
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (name.rfind("sample_", 0) == 0 && entry.path().extension() == ".csv") fs::remove(entry.path());
    }

    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& s = ds.samples[i];
        std::ofstream out(dir / sample_name(i), std::ios::binary);
        if (!out) throw CorpusError("cannot write " + (dir / sample_name(i)).string());
        for (std::size_t c = 0; c < s.channels(); ++c) out << (c ? "," : "") << s.channel_names[c];
        out << '\n';
        for (std::size_t t = 0; t < s.seq_len(); ++t) {
            for (std::size_t c = 0; c < s.channels(); ++c) out << (c ? "," : "") << format_float(s.at(t, c));
            out << '\n';
        }
    }

    json manifest;
    manifest["id"] = ds.id;
    manifest["label"] = ds.label;
    manifest["tau"] = ds.seq_len();
    manifest["dim"] = ds.channels();
    manifest["n"] = ds.size();
    manifest["seed"] = ds.seed ? json(*ds.seed) : json(nullptr);
    if (ds.fault_recipe || !ds.sample_faults.empty()) {
        json spec = json::object();
        if (ds.fault_recipe) spec["recipe"] = recipe_to_json(*ds.fault_recipe);
        if (!ds.sample_faults.empty()) {
            spec["samples"] = json::array();
            for (const auto& f : ds.sample_faults) spec["samples"].push_back(fault_to_json(f));
        }
        manifest["fault_spec"] = spec;
    }
    if (!ds.provenance.empty()) manifest["provenance"] = ds.provenance;
    std::ofstream(dir / "manifest.json", std::ios::binary) << manifest.dump(2) << '\n';
    fs::remove(marker);
}

Dataset load_corpus(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw CorpusError("corpus directory not found: " + dir.string());
    if (fs::exists(dir / ".partial")) throw CorpusError("corpus is incomplete (.partial marker present): " + dir.string());
    const fs::path manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw CorpusError("missing manifest: " + manifest_path.string());

    Dataset ds;
    std::size_t tau = 0, dim = 0, n = 0;
    try {
        const json m = json::parse(in);
        ds.id = m.at("id").get<std::string>();
        ds.label = m.at("label").get<std::string>();
        tau = m.at("tau").get<std::size_t>();
        dim = m.at("dim").get<std::size_t>();
        n = m.at("n").get<std::size_t>();
        if (m.contains("seed") && !m["seed"].is_null()) ds.seed = m["seed"].get<std::uint64_t>();
        if (m.contains("fault_spec")) {
            const json& spec = m["fault_spec"];
            if (spec.contains("recipe")) ds.fault_recipe = recipe_from_json(spec["recipe"]);
            if (spec.contains("samples"))
                for (const auto& f : spec["samples"]) ds.sample_faults.push_back(fault_from_json(f));
        }
        if (m.contains("provenance")) ds.provenance = m["provenance"].get<std::map<std::string, std::string>>();
    } catch (const std::exception& e) {
        throw CorpusError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }
    if (n == 0 || tau < 2 || dim == 0) throw CorpusError("manifest " + manifest_path.string() + " declares an empty shape");

    std::size_t present = 0;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (name.rfind("sample_", 0) == 0 && entry.path().extension() == ".csv") ++present;
    }
    if (present != n)
        throw CorpusError("manifest " + manifest_path.string() + " declares " + std::to_string(n) + " samples but " +
                          std::to_string(present) + " sample files are present");

    ds.samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const fs::path file = dir / sample_name(i);
        std::ifstream f(file);
        if (!f) throw CorpusError("missing sample file " + file.string());
        std::string line;
        if (!std::getline(f, line)) throw CorpusError(file.string() + ": empty file");
        auto names = split(line, ',');
        if (names.size() != dim)
            throw CorpusError(file.string() + ": header has " + std::to_string(names.size()) + " channels, manifest says " +
                              std::to_string(dim));
        TensorF values = TensorF::matrix(tau, dim);
        std::size_t row = 0;
        while (std::getline(f, line)) {
            if (line.empty() || line == "\r") continue;
            if (row >= tau) throw CorpusError(file.string() + ": more than " + std::to_string(tau) + " rows");
            const auto cells = split(line, ',');
            if (cells.size() != dim)
                throw CorpusError(file.string() + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                                  " columns, expected " + std::to_string(dim));
            for (std::size_t c = 0; c < dim; ++c) {
                float v = 0;
                const auto& cell = cells[c];
                auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
                if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
                    throw CorpusError(file.string() + ": unparsable value '" + cell + "' at row " + std::to_string(row) +
                                      ", column " + std::to_string(c));
                if (!std::isfinite(v))
                    throw CorpusError(file.string() + ": non-finite value at row " + std::to_string(row) + ", column " +
                                      std::to_string(c));
                values.at(row, c) = v;
            }
            ++row;
        }
        if (row != tau)
            throw CorpusError(file.string() + ": " + std::to_string(row) + " rows, manifest says " + std::to_string(tau));
        ds.samples.emplace_back(std::move(values), std::move(names));
    }
    return ds;
}

} // namespace faultdiff::data
