#pragma once

#include <filesystem>
#include <string>

#include "boxrec/encoder.hpp"
#include "boxrec/geometry.hpp"

namespace boxrec {

struct LoadedModel {
  EncoderConfig config;
  geometry::DistanceParams distance;
  EncoderParams<float> params;
  std::uint64_t seed = 0;  // training seed, carried for report provenance
};

// Little-endian container: magic "BOXREC01", u32 header fields
// (d, L, N, M, mode tag, item count), then one record per tensor:
// u32 name length, name bytes, u32 rank, u32 extents, float32 payload,
// u64 FNV-1a checksum of the payload bytes. Scalar run settings (gamma,
// pooling, ...) ride along as reserved "config.*" tensors so a checkpoint is
// self-contained for scoring.
void save_checkpoint(const std::filesystem::path& path, const EncoderConfig& config,
                     const geometry::DistanceParams& distance, const EncoderParams<float>& params,
                     std::uint64_t seed = 0);

// Rejects bad magic, truncated records, and checksum mismatches.
LoadedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace boxrec
