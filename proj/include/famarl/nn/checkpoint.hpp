#pragma once

// Checkpoint container: a JSON header (metadata, network specs, tensor
// directory) followed by raw little-endian float64 tensor payloads. The byte
// layout is documented in docs/checkpoint_format.md.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "famarl/nn/network.hpp"

namespace famarl::nn {

nlohmann::json to_json(const NetworkSpec& spec);
NetworkSpec network_spec_from_json(const nlohmann::json& j);

struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  // Networks by name; their parameters are stored as tensors "<name>/<tensor>".
  std::map<std::string, Network> networks;

  void write(const std::filesystem::path& path) const;
  static Checkpoint read(const std::filesystem::path& path);

  std::vector<std::uint8_t> serialize() const;
  static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);
};

/// 64-bit FNV-1a over a byte buffer, rendered as 16 hex digits.
std::string fnv1a_digest(const std::vector<std::uint8_t>& bytes);
std::string file_digest(const std::filesystem::path& path);

}  // namespace famarl::nn
