#include "dpdl/run_manifest.hpp"

#include <Eigen/Core>
#include <openssl/evp.h>

#include <algorithm>
#include <ctime>
#include <fstream>
#include <iterator>

#include "dpdl/errors.hpp"
#include "dpdl/parallel.hpp"

namespace dpdl::run {

namespace {

class Sha1 {
public:
    Sha1() : ctx_(EVP_MD_CTX_new()) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha1(), nullptr) != 1) throw std::runtime_error("SHA-1 unavailable");
    }
    ~Sha1() { EVP_MD_CTX_free(ctx_); }
    Sha1(const Sha1&) = delete;
    Sha1& operator=(const Sha1&) = delete;

    void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }
    void update(const std::string& s) { update(s.data(), s.size()); }

    std::string hex() {
        unsigned char md[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_, md, &len);
        static const char* digits = "0123456789abcdef";
        std::string out;
        for (unsigned int i = 0; i < len; ++i) {
            out += digits[md[i] >> 4];
            out += digits[md[i] & 15];
        }
        return out;
    }

private:
    EVP_MD_CTX* ctx_;
};

std::string utc_iso(std::chrono::system_clock::time_point t) {
    const std::time_t tt = std::chrono::system_clock::to_time_t(t);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

std::string git_blob_sha1(const std::filesystem::path& file) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw IoError("cannot read " + file.string());
    const std::string bytes{std::istreambuf_iterator<char>(is), {}};
    Sha1 h;
    const std::string header = "blob " + std::to_string(bytes.size());
    h.update(header.c_str(), header.size() + 1);  // includes the NUL
    h.update(bytes);
    return h.hex();
}

RunManifest::RunManifest(std::string command, std::vector<std::string> argv)
    : command_(std::move(command)),
      argv_(std::move(argv)),
      started_(std::chrono::system_clock::now()),
      start_tick_(std::chrono::steady_clock::now()) {}

void RunManifest::add_config(const std::filesystem::path& file) {
    configs_.push_back(file.string());
    add_input("config", file);
}

void RunManifest::add_input(const std::string& role, const std::filesystem::path& path) {
    if (std::filesystem::is_directory(path)) {
        std::vector<std::filesystem::path> files;
        for (const auto& e : std::filesystem::recursive_directory_iterator(path))
            if (e.is_regular_file() && e.path().filename() != kManifestName) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files)
            inputs_.push_back({role, std::filesystem::relative(f, path).generic_string(), git_blob_sha1(f)});
    } else {
        inputs_.push_back({role, path.filename().generic_string(), git_blob_sha1(path)});
    }
}

std::string RunManifest::inputs_hash() const {
    Sha1 h;
    for (const auto& in : inputs_) h.update(in.role + "/" + in.path + " " + in.sha1 + "\n");
    return h.hex();
}

nlohmann::json RunManifest::to_json() const {
    nlohmann::json inputs = nlohmann::json::array();
    for (const auto& in : inputs_) inputs.push_back({{"role", in.role}, {"path", in.path}, {"sha1", in.sha1}});
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_tick_).count();
    return {{"command", command_},
            {"argv", argv_},
            {"config_paths", configs_},
            {"seed", seed_ ? nlohmann::json(*seed_) : nlohmann::json(nullptr)},
            {"versions",
             {{"dpdl", kVersion},
              {"compiler", __VERSION__},
              {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)}}},
            {"threads", worker_count()},
            {"output", output_},
            {"inputs", inputs},
            {"inputs_hash", inputs_hash()},
            {"wall_clock", {{"started_utc", utc_iso(started_)}, {"seconds", seconds}}}};
}

void RunManifest::write(const std::filesystem::path& file) const {
    std::ofstream os(file);
    os << to_json().dump(2) << "\n";
    if (!os) throw IoError("cannot write " + file.string());
}

}  // namespace dpdl::run
