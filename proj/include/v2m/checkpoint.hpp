#pragma once

// Self-describing binary container for model parameters.
//
//   bytes 0..7   magic "V2MCKPT\0"
//   u32 LE       format version
//   u64 LE       header length N
//   N bytes      JSON header: kind, config, meta, tensor directory
//   payload      each tensor's rows*cols IEEE-754 doubles, little endian,
//                row-major, in directory order
//
// Values are stored as raw bits so save/load is exact.

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "v2m/amt.hpp"
#include "v2m/autograd.hpp"

namespace v2m::ckpt {

inline constexpr std::uint32_t kFormatVersion = 1;

struct Checkpoint {
  std::string kind;
  nlohmann::json config;
  nlohmann::json meta;
  nn::ParamStore tensors;
};

void save(const std::filesystem::path& path, const std::string& kind, const nlohmann::json& config,
          const nlohmann::json& meta, const nn::ParamStore& tensors, const nn::ParamStore* extra = nullptr);
Checkpoint load(const std::filesystem::path& path);

nlohmann::json to_json(const amt::ModelConfig& c);
amt::ModelConfig model_config_from_json(const nlohmann::json& j);

// Tensors whose names start with `prefix` moved into their own store (prefix stripped).
nn::ParamStore take_prefixed(nn::ParamStore& from, const std::string& prefix);

void save_model(const std::filesystem::path& path, const amt::AmtModel& model, const nlohmann::json& meta = {},
                const nn::ParamStore* optimizer_state = nullptr);

struct LoadedModel {
  amt::AmtModel model;
  nlohmann::json meta;
  nn::ParamStore optimizer_state;
};
LoadedModel load_model(const std::filesystem::path& path);

}  // namespace v2m::ckpt
