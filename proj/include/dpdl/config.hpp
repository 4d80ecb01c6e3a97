#pragma once

#include <filesystem>
#include <string>

#include "dpdl/losses.hpp"
#include "dpdl/mccnet.hpp"
#include "dpdl/trainer.hpp"
#include "json.hpp"

namespace dpdl::config {

// JSON forms of the configuration structs. Readers are strict: an unknown key
// or a value of the wrong type throws ConfigError naming the key path; absent
// keys keep their defaults.

nlohmann::json to_json(const mccnet::NetworkConfig& c);
nlohmann::json to_json(const losses::LossConfig& c);
nlohmann::json to_json(const train::TrainConfig& c);

mccnet::NetworkConfig network_from_json(const nlohmann::json& j, const std::string& path = "network");
losses::LossConfig loss_from_json(const nlohmann::json& j, const std::string& path = "loss");
train::TrainConfig train_from_json(const nlohmann::json& j, const std::string& path = "");

/// Parses a TrainConfig file; throws ConfigError on malformed JSON.
train::TrainConfig load_train_config(const std::filesystem::path& file);

}  // namespace dpdl::config
