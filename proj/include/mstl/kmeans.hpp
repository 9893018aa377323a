#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mstl/error.hpp"
#include "mstl/rng.hpp"

namespace mstl {

// Row-major matrix of flattened per-sample feature vectors.
struct FeatureMatrix {
    int64_t rows = 0;
    int dim = 0;
    std::vector<float> data;             // rows * dim
    std::vector<std::string> sample_ids; // aligned with the source manifest (optional)

    const float* row(int64_t i) const { return data.data() + i * dim; }
};

void validate_features(const FeatureMatrix& X);
FeatureMatrix gather_rows(const FeatureMatrix& X, const std::vector<int64_t>& rows);

struct KmeansOptions {
    int max_iter = 300;
    double tol = 1e-4; // max centroid shift (Euclidean) for convergence
    int restarts = 10; // k-means++ restarts, best inertia kept
};

struct ClusteringModel {
    int k = 0;
    int dim = 0;
    std::vector<float> centroids; // k * dim
    double inertia = 0.0;
    int iterations_run = 0;
    uint64_t seed = 0;
    std::vector<double> inertia_history; // per Lloyd iteration, non-increasing
};

// k-means++ seeding + Lloyd iterations. Empty clusters are repaired by
// moving the centroid onto the point farthest from its assignment. The
// point-assignment scan is OpenMP-parallel; accumulation is serial so runs
// are bit-deterministic.
ClusteringModel kmeans_fit(const FeatureMatrix& X, int k, uint64_t seed,
                           const KmeansOptions& opts = {});

// Nearest-centroid labels (squared Euclidean, ties to the lowest index).
std::vector<int> assign_clusters(const ClusteringModel& model, const FeatureMatrix& X);

// Recomputes sum of squared distances to nearest centroids.
double compute_inertia(const ClusteringModel& model, const FeatureMatrix& X);

// Mean silhouette coefficient of the given held-out rows, with cluster
// membership assigned by the training-fit centroids. The label-free
// cross-validation score used by select_k.
double heldout_silhouette(const FeatureMatrix& X, const std::vector<int64_t>& rows,
                          const ClusteringModel& model);

using ClusterScoreFn = double (*)(const FeatureMatrix&, const std::vector<int64_t>&,
                                  const ClusteringModel&);

struct KSelection {
    int k_best = 0;
    std::vector<std::pair<int, double>> scores; // (k, mean held-out score)
    int folds = 0;
    uint64_t seed = 0;
    std::string criterion;
};

// Cross-validated grid search: per k and fold, fit on the training portion
// and score the held-out portion; highest mean score wins, ties to the
// smaller k.
KSelection select_k(const FeatureMatrix& X, const std::vector<int>& grid, int folds, uint64_t seed,
                    const KmeansOptions& opts = {}, ClusterScoreFn score = heldout_silhouette,
                    const std::string& score_name = "heldout-silhouette");

struct SoftLabelProvenance {
    std::string extractor_id; // checkpoint hash or path of the feature extractor
    uint64_t clustering_seed = 0;
    KSelection selection;
};

struct SoftLabelSet {
    std::vector<int> labels;
    int k = 0;
    SoftLabelProvenance provenance;
};

SoftLabelSet assign_soft_labels(const ClusteringModel& model, const FeatureMatrix& X);

// Agreement between two labelings, chance-corrected (1 = identical
// partitions). Used to validate soft labels against generator ground truth.
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

} // namespace mstl
