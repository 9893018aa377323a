#pragma once

#include "mstl/data.hpp"
#include "mstl/graph.hpp"
#include "mstl/kmeans.hpp"

namespace mstl {

// Eval-mode forward of the convolutional base over every sample, final
// pre-head feature map flattened row-major. Parallel across samples.
FeatureMatrix extract_features(const ModelGraph& base, const SampleSet& samples);

// Same, over every entry of a manifest (all splits), sample_ids = refs.
FeatureMatrix extract_features(const ModelGraph& base, const DatasetManifest& m, const Shape& chw);

struct SoftLabelResult {
    SoftLabelSet labels;
    ClusteringModel model;
    KSelection selection;
};

// The unsupervised label pipeline: extract -> select k by cross-validated
// grid search -> fit k-means at k_best -> label every sample by nearest
// centroid.
SoftLabelResult make_soft_labels(const FeatureMatrix& features, const std::vector<int>& grid,
                                 int folds, uint64_t seed, const std::string& extractor_id);

// Derived manifest whose classes are the clusters and whose labels are the
// soft labels; split assignments are cleared for the consuming stage to
// re-split. Provenance lands in the notes.
DatasetManifest apply_soft_labels(const DatasetManifest& src, const SoftLabelSet& labels);

} // namespace mstl
