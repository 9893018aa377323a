#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mstl/tensor.hpp"

namespace mstl {

enum class Split { train, val, test, unassigned };

const char* split_name(Split s);
Split split_from_name(const std::string& s);

struct ManifestEntry {
    std::string ref;  // image path (relative to base_dir) or self-describing "synth:" id
    int label = -1;   // -1 when absent
    Split split = Split::unassigned;
};

// Line-oriented dataset description; see save_manifest for the on-disk
// layout. `base_dir` is where relative refs resolve from and is not
// serialized.
struct DatasetManifest {
    std::string name;
    std::vector<std::string> classes;
    std::vector<ManifestEntry> entries;
    std::array<double, 3> ratios = {0.0, 0.0, 0.0}; // train, val, test
    uint64_t seed = 0;
    std::vector<std::string> notes;
    std::string base_dir;

    int64_t count(Split s) const;
};

void validate_manifest(const DatasetManifest& m);

DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& m, const std::string& path);

// FNV-1a over the canonical serialized form; used in report provenance.
std::string manifest_hash(const DatasetManifest& m);

// Checks that every file-backed ref exists. Throws DataError naming the
// first missing ref.
void verify_refs(const DatasetManifest& m);

// Seeded shuffle, then proportional assignment with floor counts and the
// remainder going to train. Stratified assignment runs per class and
// requires labels everywhere.
void split_manifest(DatasetManifest& m, std::array<double, 3> ratios, uint64_t seed, bool stratified);

// One decoded split held in memory, ready for batching.
struct SampleSet {
    Shape sample_shape;        // C,H,W
    std::vector<float> images; // count * C*H*W, row-major per sample
    std::vector<int> labels;
    int64_t count = 0;

    TensorPtr batch(const std::vector<int64_t>& indices) const;
    TensorPtr all() const;
};

// Decodes every entry of `split` at the requested shape. Image loading is
// parallel across samples with results ordered by entry index.
SampleSet load_split(const DatasetManifest& m, Split split, const Shape& chw);

// Decoded image for a single manifest entry (dispatches synth: refs to the
// generator, everything else to the image codecs).
std::vector<float> load_entry(const DatasetManifest& m, const ManifestEntry& e, const Shape& chw);

} // namespace mstl
