#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace bppn {

// Writes via a sibling temp file then renames, so consumers never see a
// partially written artifact.
void atomic_write_file(const std::filesystem::path& path, const std::string& bytes);

std::string read_file_bytes(const std::filesystem::path& path);

// key=value lines; '#' starts a comment; keys kept in insertion order.
std::vector<std::pair<std::string, std::string>> read_kv_file(
    const std::filesystem::path& path);
std::string format_kv(const std::vector<std::pair<std::string, std::string>>& kv);

std::string format_float(double v);  // shortest form with round-trip precision

}  // namespace bppn
