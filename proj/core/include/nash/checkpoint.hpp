#pragma once

#include <filesystem>
#include <optional>

#include "nash/gates.hpp"
#include "nash/model.hpp"

namespace nash::io {

// Checkpoint directory layout:
//   config.json    schema-versioned model configuration (per-layer structure
//                  included, so compacted models round-trip exactly)
//   weights.bin    flat little-endian 64-bit floats
//   manifest.json  tensor name -> byte offset / shape
//   gates.json     optional; per-structure {name, alpha, deterministic_z}
void save_checkpoint(const std::filesystem::path& dir, const model::Seq2SeqModel& m,
                     const gates::GateSet* gates = nullptr);

model::Seq2SeqModel load_checkpoint(const std::filesystem::path& dir);

std::optional<gates::GateSet> load_gates(const std::filesystem::path& dir);

bool checkpoint_exists(const std::filesystem::path& dir);

}  // namespace nash::io
