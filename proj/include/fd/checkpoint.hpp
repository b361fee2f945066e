// Checkpoint file format "FDCK" and canonical config JSON.
#pragma once

#include <string>

#include <json.hpp>

#include "fd/trainer.hpp"

namespace fd::training {

nlohmann::json to_json(const denoiser::DenoiserConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json to_json(const ScheduleSpec& spec);
nlohmann::json to_json(const perception::PerceptionConfig& cfg);

denoiser::DenoiserConfig denoiser_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
ScheduleSpec schedule_spec_from_json(const nlohmann::json& j);
perception::PerceptionConfig perception_config_from_json(const nlohmann::json& j);

// Every config of a checkpoint in one canonical object (no parameters).
nlohmann::json config_json(const PolicyCheckpoint& ckpt);

// 64-bit FNV-1a over a canonical JSON dump, as a hex string.
std::string fingerprint(const nlohmann::json& j);

void save_checkpoint(const std::string& path, const PolicyCheckpoint& ckpt);
PolicyCheckpoint load_checkpoint(const std::string& path);

}  // namespace fd::training
