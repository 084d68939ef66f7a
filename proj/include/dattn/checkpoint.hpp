#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dattn/config.hpp"
#include "dattn/model.hpp"

namespace dattn {

inline constexpr char kCheckpointMagic[8] = {'D', 'A', 'T', 'T', 'N', 'L', 'A', 'B'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: the 8-byte magic, a little-endian u32 version, a little-endian
/// u64 manifest length, the JSON manifest, then every parameter as
/// little-endian f64 values in manifest order. The manifest holds the model
/// config, lambdas, seed, caller metadata and a name/shape/offset index.
std::vector<std::uint8_t> encode_checkpoint(const Classifier& model, std::uint64_t seed, const json& metadata = json::object());

struct LoadedCheckpoint {
  Classifier model;
  std::uint64_t seed = 0;
  json manifest;
};

/// Throws FormatError on a bad magic, version, index or truncation.
LoadedCheckpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Classifier& model, std::uint64_t seed,
                     const json& metadata = json::object());
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dattn
