#pragma once

#include <cstdint>
#include <string>

#include "cryoquery/adam.hpp"
#include "cryoquery/params.hpp"

// Versioned binary container of named parameter blobs (plus optional Adam
// moments). Round-trip is bitwise lossless; loading validates names, shapes
// and the stored config hash when the caller provides one.

namespace cq::ckpt {

struct CheckpointInfo {
    std::uint32_t version = 1;
    std::uint64_t config_hash = 0;
    std::int32_t epoch = 0;
    std::int32_t stage = 0;  // 0 init, 1 pose pre-training, 2 main training
};

void save_checkpoint(const ad::ParamStore& store, const ad::AdamOptimizer* opt,
                     const CheckpointInfo& info, const std::string& path);

// Loads into an already-built store (same model config). Throws
// ValidationError on name/shape mismatch, CorruptFileError on bad files.
CheckpointInfo load_checkpoint(ad::ParamStore& store, ad::AdamOptimizer* opt,
                               const std::string& path);

// Reads just the header.
CheckpointInfo peek_checkpoint(const std::string& path);

}  // namespace cq::ckpt
