#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace lipsub {

inline constexpr const char* kToolVersion = "0.1.0";

// FNV-1a, stable across platforms and runs.
std::uint64_t fnv1a64(const void* data, std::size_t size);
std::uint64_t fnv1a64(const std::string& s);
std::uint64_t fnv1a64_file(const std::string& path);
std::string hash_hex(std::uint64_t h);

// Run-directory manifest: config hash, seeds and produced files. Contains no
// timestamps so reruns are byte-identical.
void write_manifest(const std::string& dir, const std::string& subcommand,
                    const std::string& config_path, std::uint64_t seed,
                    const std::vector<std::string>& outputs,
                    const nlohmann::json& extra = nlohmann::json::object());

}  // namespace lipsub
