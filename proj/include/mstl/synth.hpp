#pragma once

#include <string>
#include <vector>

#include "mstl/data.hpp"

namespace mstl {

// One generated domain: a point on the style-shift axis. shift = 0
// reproduces the target distribution; larger shifts drift the background
// level, add a diagonal grating and reduce blob contrast, leaving the
// class geometry untouched.
struct DomainSpec {
    std::string name;
    double shift = 0.0;
    int samples_per_class = -1; // -1: use the config default
};

struct SyntheticDomainConfig {
    int n_classes = 2;
    int samples_per_class = 32;
    int image_size = 16;
    // class-pattern parameters
    double blob_amplitude = 0.85;
    double blob_radius_frac = 0.16; // gaussian sigma as a fraction of image size
    double ring_radius_frac = 0.30; // class centers sit on this ring
    double noise_sigma = 0.03;
    uint64_t seed = 0;
    std::vector<DomainSpec> domains = {{"source", 1.0, -1}, {"transition", 0.5, -1}, {"target", 0.0, -1}};
};

void validate_synth_config(const SyntheticDomainConfig& cfg);

// Renders one grayscale sample (image_size x image_size floats in [0,1]).
std::vector<float> render_sample(const SyntheticDomainConfig& cfg, int domain_index, int cls, int sample);

// Self-describing in-memory sample reference understood by load_entry.
std::string synth_ref(const SyntheticDomainConfig& cfg, int domain_index, int cls, int sample);
bool is_synth_ref(const std::string& ref);
std::vector<float> render_synth_ref(const std::string& ref, const Shape& target_chw);

// Generates one manifest per configured domain with in-memory synth refs.
std::vector<DatasetManifest> gen_synthetic_domains(const SyntheticDomainConfig& cfg);

// Same, but persists every sample as an 8-bit PNG plus a manifest file
// under out_dir/<domain>/ so downstream stages exercise real image I/O.
std::vector<DatasetManifest> gen_synthetic_domains_to_dir(const SyntheticDomainConfig& cfg,
                                                          const std::string& out_dir);

} // namespace mstl
