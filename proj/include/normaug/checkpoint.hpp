#pragma once

#include <filesystem>
#include <string>

#include "normaug/config.hpp"
#include "normaug/model.hpp"

namespace naug {

// Binary layout, all integers and floats little-endian:
//   "NAUG" | u32 version | u64 n | n bytes key=value text
//   u32 count | count x (u32 n | name | u32 rank | u64 dims... | f64 data...)
// The text block holds the model config plus caller metadata (train config,
// epoch, RNG state). Update counters are stored as one-element arrays.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(Model &model, const KeyValues &meta);
void save_checkpoint(Model &model, const KeyValues &meta, const std::filesystem::path &path);

struct LoadedCheckpoint {
  Model model;
  KeyValues meta;  // text block without the model config keys
};

LoadedCheckpoint deserialize_checkpoint(const std::string &bytes);
LoadedCheckpoint load_checkpoint(const std::filesystem::path &path);

// Independent deep copy with bit-identical state.
Model clone_model(Model &model);

}  // namespace naug
