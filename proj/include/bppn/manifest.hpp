#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace bppn {

inline constexpr const char* kToolVersion = "0.1.0";

/// Record of one CLI run: the fully resolved config is enough to reproduce
/// the outputs bit-for-bit in single-worker mode. Written atomically when the
/// run finishes.
struct RunManifest {
    std::string command;
    std::vector<std::pair<std::string, std::string>> config;  // every knob, defaults included
    std::uint64_t seed = 0;
    std::vector<std::string> artifacts;
    std::string tool_version = kToolVersion;
    double duration_seconds = 0.0;
};

std::string manifest_json(const RunManifest& m);
void write_manifest(const RunManifest& m, const std::filesystem::path& path);

}  // namespace bppn
