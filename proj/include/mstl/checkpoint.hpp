#pragma once

#include <string>
#include <vector>

#include "mstl/graph.hpp"

namespace mstl {

struct CheckpointMeta {
    std::string stage;
    int epoch = -1;
    double val_accuracy = 0.0;
    uint64_t seed = 0;
    std::string config_hash;
    std::string rng_algorithm = Rng::kAlgorithm;
};

// Everything needed to rebuild a model bit-exactly: architecture + head
// config, named parameter tensors with trainable flags, optional optimizer
// velocity, and run metadata.
//
// File layout (all integers little-endian):
//   "MSTL" magic, u32 format version,
//   u32 length + graph-spec JSON,
//   per parameter (declaration order): raw float32 values,
//   u8 has_velocity, then velocity blobs in the same order,
//   u32 length + metadata JSON.
struct Checkpoint {
    static constexpr uint32_t kFormatVersion = 1;

    ArchitectureSpec arch;
    HeadConfig head;
    std::vector<std::string> param_names;
    std::vector<Shape> param_shapes;
    std::vector<uint8_t> trainable;
    std::vector<std::vector<float>> values;
    std::vector<std::vector<float>> velocity; // empty when not saved
    CheckpointMeta meta;
};

Checkpoint make_checkpoint(const ModelGraph& g, const std::vector<std::vector<float>>* velocity,
                           const CheckpointMeta& meta);

// Rebuilds the graph from the stored architecture + head config, then loads
// parameter values and trainable flags. Throws FormatError if the stored
// parameter list does not match the rebuilt structure.
ModelGraph restore_graph(const Checkpoint& ckpt);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Serialized bytes (identical to the file save_checkpoint writes).
std::vector<uint8_t> checkpoint_bytes(const Checkpoint& ckpt);

// FNV-1a hex digest of a file's bytes; provenance for reports.
std::string file_hash_hex(const std::string& path);

} // namespace mstl
