#pragma once

#include <filesystem>

#include "oneframe/model.hpp"
#include "oneframe/tokenizer.hpp"

namespace oneframe {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout: "OFCK", uint32 version, uint64 header length, JSON header
// (config, vocabulary, parameter names, shapes, decay flags and offsets),
// then every parameter as row-major little-endian float64.
void save_checkpoint(const std::filesystem::path& path, const Model& model, const Tokenizer& tokenizer);

struct LoadedCheckpoint {
  Model model;
  Tokenizer tokenizer;
};

// Throws FormatError on a missing, truncated or foreign file.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace oneframe
