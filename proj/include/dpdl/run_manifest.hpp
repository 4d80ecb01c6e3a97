#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace dpdl::run {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kManifestName = "run_manifest.json";

/// SHA-1 of "blob <size>\0" followed by the file bytes (the id git gives the file).
std::string git_blob_sha1(const std::filesystem::path& file);

struct InputRecord {
    std::string role;
    std::string path;  // relative to the role's root for directories
    std::string sha1;
};

/// Provenance of one command invocation. Everything except the wall-clock
/// fields is a function of the command line and the input bytes.
class RunManifest {
public:
    RunManifest(std::string command, std::vector<std::string> argv);

    void set_seed(std::uint64_t seed) { seed_ = seed; }
    void set_output(const std::filesystem::path& out) { output_ = out.string(); }
    void add_config(const std::filesystem::path& file);
    /// A file, or every regular file below a directory (sorted, run manifests skipped).
    void add_input(const std::string& role, const std::filesystem::path& path);

    /// SHA-1 over "role/path sha1\n" lines in insertion order.
    std::string inputs_hash() const;
    nlohmann::json to_json() const;
    void write(const std::filesystem::path& file) const;

private:
    std::string command_;
    std::vector<std::string> argv_;
    std::vector<std::string> configs_;
    std::optional<std::uint64_t> seed_;
    std::string output_;
    std::vector<InputRecord> inputs_;
    std::chrono::system_clock::time_point started_;
    std::chrono::steady_clock::time_point start_tick_;
};

}  // namespace dpdl::run
