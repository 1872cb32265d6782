#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "spgim/caption.hpp"
#include "spgim/spd.hpp"
#include "spgim/spgm.hpp"

namespace spgim {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// On disk: "SPGIMCKP" | u32 version | u64 header length | header JSON |
/// tensor payload (little-endian f64, header order) | u32 crc32 of all prior bytes.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string kind;         // "captioner", "spd" or "spgm"
  std::string config_text;  // training config echo
  nlohmann::json model = nlohmann::json::object();
  long step = 0;
  nlohmann::json metadata = nlohmann::json::object();
  NamedTensors tensors;
};

/// Writes to a sibling temp file, then renames over `path`.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

NamedTensors snapshot(const ParamStore& store);
/// Every parameter must be present with the same shape; extra tensors are errors too.
void restore(ParamStore& store, const NamedTensors& tensors);

struct ParameterCount {
  std::map<std::string, std::size_t> per_module;
  std::size_t total = 0;
};
/// Grouped by the first dotted component of each tensor name.
ParameterCount count_parameters(const NamedTensors& tensors);
ParameterCount count_parameters(const Checkpoint& ckpt);
/// "12.3" (millions, one decimal)
std::string millions(std::size_t count);

// model descriptions stored in Checkpoint::model
nlohmann::json to_json(const VisualBackboneConfig& c);
VisualBackboneConfig backbone_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SpdConfig& c);
SpdConfig spd_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SpgmConfig& c);
SpgmConfig spgm_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CaptionerConfig& c, const Tokenizer& tokenizer);

Checkpoint make_checkpoint(const SpdNetwork& net, const std::string& config_text, long step);
Checkpoint make_checkpoint(const SpgmNetwork& net, const std::string& config_text, long step);
Checkpoint make_checkpoint(const Captioner& model, const std::string& config_text, long step);

SpdNetwork load_spd(const Checkpoint& ckpt);
SpgmNetwork load_spgm(const Checkpoint& ckpt);
Captioner load_captioner(const Checkpoint& ckpt);

/// Names of model fields that make an SPGM checkpoint incompatible with an SPD
/// checkpoint (empty when they fit together).
std::vector<std::string> pairing_mismatches(const Checkpoint& spd, const Checkpoint& spgm);

/// Hex SHA-256 of a byte buffer / file.
std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace spgim
