#include "serialize.hpp"

namespace faultdiff::data {

using nlohmann::json;

json fault_to_json(const FaultSpec& spec) {
    json j;
    j["kind"] = std::string(fault_kind_name(spec.kind));
    j["onset"] = spec.onset;
    j["duration"] = spec.duration;
    j["magnitude"] = spec.magnitude;
    j["channels"] = spec.channels;
    j["extra"] = spec.extra;
    if (!spec.components.empty()) {
        j["components"] = json::array();
        for (const auto& c : spec.components) j["components"].push_back(fault_to_json(c));
    }
    return j;
}

FaultSpec fault_from_json(const json& j) {
    FaultSpec spec;
    spec.kind = parse_fault_kind(j.at("kind").get<std::string>());
    spec.onset = j.at("onset").get<std::size_t>();
    spec.duration = j.at("duration").get<std::size_t>();
    spec.magnitude = j.at("magnitude").get<double>();
    spec.channels = j.value("channels", std::vector<std::size_t>{});
    spec.extra = j.value("extra", std::map<std::string, double>{});
    if (j.contains("components"))
        for (const auto& c : j["components"]) spec.components.push_back(fault_from_json(c));
    return spec;
}

json recipe_to_json(const FaultRecipe& recipe) {
    json j;
    j["kind"] = std::string(fault_kind_name(recipe.kind));
    j["onset"] = recipe.onset ? json(*recipe.onset) : json(nullptr);
    j["duration"] = recipe.duration ? json(*recipe.duration) : json(nullptr);
    j["magnitude"] = recipe.magnitude ? json(*recipe.magnitude) : json(nullptr);
    j["channels"] = recipe.channels;
    j["extra"] = recipe.extra;
    std::vector<std::string> comps;
    for (FaultKind k : recipe.components) comps.emplace_back(fault_kind_name(k));
    j["components"] = comps;
    return j;
}

FaultRecipe recipe_from_json(const json& j) {
    FaultRecipe r;
    r.kind = parse_fault_kind(j.at("kind").get<std::string>());
    if (j.contains("onset") && !j["onset"].is_null()) r.onset = j["onset"].get<std::size_t>();
    if (j.contains("duration") && !j["duration"].is_null()) r.duration = j["duration"].get<std::size_t>();
    if (j.contains("magnitude") && !j["magnitude"].is_null()) r.magnitude = j["magnitude"].get<double>();
    r.channels = j.value("channels", std::vector<std::size_t>{});
    r.extra = j.value("extra", std::map<std::string, double>{});
    for (const auto& name : j.value("components", std::vector<std::string>{})) r.components.push_back(parse_fault_kind(name));
    return r;
}

} // namespace faultdiff::data
