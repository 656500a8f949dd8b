#include "bppn/manifest.hpp"

#include <json.hpp>

#include "bppn/io.hpp"

namespace bppn {

std::string manifest_json(const RunManifest& m) {
    nlohmann::ordered_json j;
    j["command"] = m.command;
    nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
    for (const auto& [k, v] : m.config) cfg[k] = v;
    j["config"] = cfg;
    j["seed"] = m.seed;
    j["artifacts"] = m.artifacts;
    j["tool_version"] = m.tool_version;
    j["duration_seconds"] = m.duration_seconds;
    return j.dump(2) + "\n";
}

void write_manifest(const RunManifest& m, const std::filesystem::path& path) {
    atomic_write_file(path, manifest_json(m));
}

}  // namespace bppn
