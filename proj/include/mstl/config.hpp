#pragma once

#include <map>
#include <optional>
#include <string>

#include "mstl/synth.hpp"
#include "mstl/transfer.hpp"

namespace mstl {

// Parsed experiment configuration. The JSON document is strict: unknown keys
// anywhere are rejected with the offending key path.
struct ExperimentConfig {
    uint64_t seed = 0;
    std::string output_dir;
    std::optional<SyntheticDomainConfig> synthetic;
    std::string synthetic_dir = "data";           // under the run dir
    std::map<std::string, std::string> manifests; // dataset name -> manifest path
    ArchitectureSpec arch;
    int head_hidden = 64;
    TransferPlan plan;

    std::string config_hash; // FNV-1a of the raw config bytes
    std::string base_dir;    // directory of the config file (for relative paths)
};

ExperimentConfig parse_config(const std::string& json_text, const std::string& origin);
ExperimentConfig load_config(const std::string& path);

// Structural validation plus cross-reference resolution: every stage
// dataset must name a synthetic domain or a manifest entry, manifest files
// and init checkpoints must exist.
void validate_config(const ExperimentConfig& cfg);

// Materializes the datasets: loads manifest files and either generates
// synthetic domains in memory or persists them as PNG trees under
// <run_dir>/<synthetic_dir>.
std::map<std::string, DatasetManifest> resolve_datasets(const ExperimentConfig& cfg,
                                                        bool persist_synthetic,
                                                        const std::string& run_dir);

} // namespace mstl
