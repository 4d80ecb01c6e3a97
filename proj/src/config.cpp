#include "dpdl/config.hpp"

#include <fstream>
#include <set>

#include "dpdl/errors.hpp"

namespace dpdl::config {

namespace {

using nlohmann::json;

// Reads known keys off one JSON object and rejects the rest.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("config " + (path_.empty() ? "root" : "'" + path_ + "'") + " must be an object");
    }

    std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json* find(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void number(const std::string& key, double& out) {
        if (auto* v = find(key)) {
            if (!v->is_number()) wrong(key, "a number");
            out = v->get<double>();
        }
    }
    void integer(const std::string& key, int& out) {
        if (auto* v = find(key)) {
            if (!v->is_number_integer()) wrong(key, "an integer");
            out = v->get<int>();
        }
    }
    void unsigned_integer(const std::string& key, std::uint64_t& out) {
        if (auto* v = find(key)) {
            if (!v->is_number_unsigned()) wrong(key, "a non-negative integer");
            out = v->get<std::uint64_t>();
        }
    }
    void boolean(const std::string& key, bool& out) {
        if (auto* v = find(key)) {
            if (!v->is_boolean()) wrong(key, "true or false");
            out = v->get<bool>();
        }
    }
    template <std::size_t N>
    void int_array(const std::string& key, std::array<int, N>& out) {
        if (auto* v = find(key)) {
            if (!v->is_array() || v->size() != N) wrong(key, "an array of " + std::to_string(N) + " integers");
            for (std::size_t i = 0; i < N; ++i) {
                if (!(*v)[i].is_number_integer()) wrong(key, "an array of " + std::to_string(N) + " integers");
                out[i] = (*v)[i].get<int>();
            }
        }
    }
    void number_array(const std::string& key, std::vector<double>& out) {
        if (auto* v = find(key)) {
            if (!v->is_array()) wrong(key, "an array of numbers");
            out.clear();
            for (const auto& e : *v) {
                if (!e.is_number()) wrong(key, "an array of numbers");
                out.push_back(e.get<double>());
            }
        }
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw ConfigError("unknown config key '" + key_path(k) + "'");
    }

private:
    [[noreturn]] void wrong(const std::string& key, const std::string& expected) const {
        throw ConfigError("config key '" + key_path(key) + "' must be " + expected);
    }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

}  // namespace

json to_json(const mccnet::NetworkConfig& c) {
    return {{"stem_channels", c.stem_channels},
            {"block_channels", c.block_channels},
            {"decoder_channels", c.decoder_channels},
            {"width_scale", c.width_scale},
            {"use_cross_correlation", c.use_cross_correlation},
            {"use_multiscale_fusion", c.use_multiscale_fusion},
            {"use_msfe", c.use_msfe},
            {"leaky_slope", c.leaky_slope},
            {"tie_qk", c.tie_qk},
            {"residual_output", c.residual_output},
            {"cc_memory_cap_bytes", c.cc_memory_cap_bytes}};
}

json to_json(const losses::LossConfig& c) {
    return {{"epsilon", c.epsilon},
            {"msssim_scales", c.msssim_scales},
            {"msssim_weights", c.msssim_weights},
            {"mix_alpha", c.mix_alpha}};
}

json to_json(const train::TrainConfig& c) {
    return {{"lr0", c.lr0},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"adam_eps", c.adam_eps},
            {"epochs", c.epochs},
            {"lr_half_period", c.lr_half_period},
            {"patch", c.patch},
            {"batch", c.batch},
            {"seed", c.seed},
            {"network", to_json(c.network)},
            {"loss", to_json(c.loss)}};
}

mccnet::NetworkConfig network_from_json(const json& j, const std::string& path) {
    mccnet::NetworkConfig c;
    Reader r(j, path);
    r.integer("stem_channels", c.stem_channels);
    r.int_array("block_channels", c.block_channels);
    r.int_array("decoder_channels", c.decoder_channels);
    r.number("width_scale", c.width_scale);
    r.boolean("use_cross_correlation", c.use_cross_correlation);
    r.boolean("use_multiscale_fusion", c.use_multiscale_fusion);
    r.boolean("use_msfe", c.use_msfe);
    r.number("leaky_slope", c.leaky_slope);
    r.boolean("tie_qk", c.tie_qk);
    r.boolean("residual_output", c.residual_output);
    r.unsigned_integer("cc_memory_cap_bytes", c.cc_memory_cap_bytes);
    r.finish();
    c.validate();
    return c;
}

losses::LossConfig loss_from_json(const json& j, const std::string& path) {
    losses::LossConfig c;
    Reader r(j, path);
    r.number("epsilon", c.epsilon);
    r.integer("msssim_scales", c.msssim_scales);
    r.number_array("msssim_weights", c.msssim_weights);
    r.number("mix_alpha", c.mix_alpha);
    r.finish();
    c.validate();
    return c;
}

train::TrainConfig train_from_json(const json& j, const std::string& path) {
    train::TrainConfig c;
    Reader r(j, path);
    r.number("lr0", c.lr0);
    r.number("beta1", c.beta1);
    r.number("beta2", c.beta2);
    r.number("adam_eps", c.adam_eps);
    r.integer("epochs", c.epochs);
    r.integer("lr_half_period", c.lr_half_period);
    r.integer("patch", c.patch);
    r.integer("batch", c.batch);
    r.unsigned_integer("seed", c.seed);
    if (auto* n = r.find("network")) c.network = network_from_json(*n, r.key_path("network"));
    if (auto* l = r.find("loss")) c.loss = loss_from_json(*l, r.key_path("loss"));
    r.finish();
    c.validate();
    return c;
}

train::TrainConfig load_train_config(const std::filesystem::path& file) {
    std::ifstream is(file);
    if (!is) throw ConfigError("cannot read config " + file.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError("malformed JSON in " + file.string() + ": " + e.what());
    }
    return train_from_json(j);
}

}  // namespace dpdl::config
