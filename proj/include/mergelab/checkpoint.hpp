#pragma once

#include <filesystem>
#include <string>

#include "mergelab/model.hpp"

namespace mergelab::harness {

struct IntegrityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct VersionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Versioned binary checkpoint: magic "MRGL", u32 version, model config,
// training-phase metadata, tensor manifest (name/shape/offset), FNV-1a hash of
// all payload bytes, then f64 little-endian payloads. Save/load roundtrips are
// byte-identical; the hash is verified on load.
constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    model::ModelConfig config;
    std::string phase;  // e.g. "pretrain", "finetune:math:step=400"
    model::ModelRef model;
    uint64_t content_hash = 0;
};

void save_checkpoint(const model::TransformerModel& m, const std::string& phase,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// write-temp-then-rename
void atomic_write(const std::filesystem::path& path, const std::string& bytes);

}  // namespace mergelab::harness
