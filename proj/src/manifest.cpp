#include "lipsub/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace lipsub {

std::uint64_t fnv1a64(const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("hash: cannot open '" + path + "'");
    std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return fnv1a64(contents);
}

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

void write_manifest(const std::string& dir, const std::string& subcommand,
                    const std::string& config_path, std::uint64_t seed,
                    const std::vector<std::string>& outputs, const nlohmann::json& extra) {
    nlohmann::json m;
    m["tool"] = "lipsub";
    m["version"] = kToolVersion;
    m["subcommand"] = subcommand;
    m["config"] = config_path;
    m["config_hash"] = hash_hex(fnv1a64_file(config_path));
    m["seed"] = seed;
    m["outputs"] = outputs;
    if (!extra.empty()) m["extra"] = extra;
    std::filesystem::create_directories(dir);
    std::ofstream out(std::filesystem::path(dir) / "manifest.json");
    if (!out) throw std::runtime_error("manifest: cannot write under '" + dir + "'");
    out << m.dump(2) << "\n";
}

}  // namespace lipsub
