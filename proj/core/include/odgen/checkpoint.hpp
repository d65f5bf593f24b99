#pragma once

#include "odgen/diffusion.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace odgen {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Deterministic FNV-1a fingerprint of a training corpus (area ids, region
/// counts, flow totals), recorded in the checkpoint manifest so a checkpoint
/// can be traced back to its corpus.
std::string corpus_fingerprint(const std::vector<LoadedArea>& areas);

/// Checkpoint directory layout:
///   manifest.json  model/schedule/training configuration, scaler statistics,
///                  seed, corpus hash
///   params.bin     named-tensor archive: magic "ODGN", format version,
///                  tensor count, then per tensor (name, rows, cols,
///                  row-major float64 little-endian payload)
void save_checkpoint(const std::filesystem::path& dir, const TrainedModel& trained,
                     const std::string& corpus_hash);

/// Rebuilds the full model bundle; throws CheckpointError on missing files,
/// malformed archives, or name/shape mismatches against the manifest config.
TrainedModel load_checkpoint(const std::filesystem::path& dir);

}  // namespace odgen
