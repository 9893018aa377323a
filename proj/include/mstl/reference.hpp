#pragma once

#include <cstdint>
#include <vector>

namespace mstl::reference {

// Serial reference kernels: direct nested-loop implementations, accumulated
// in double precision. They are the oracle the parallel kernels are tested
// against and the baseline for the kernel benchmark. The main library never
// calls into this file.

// x: N,C,H,W  k: O,C,KH,KW  b: O  ->  N,O,HO,WO (cross-correlation).
std::vector<float> conv2d(const std::vector<float>& x, int N, int C, int H, int W,
                          const std::vector<float>& k, int O, int KH, int KW,
                          const std::vector<float>& b, int stride, int padding);

// x: N,F  w: F,U  b: U  ->  N,U.
std::vector<float> dense(const std::vector<float>& x, int N, int F,
                         const std::vector<float>& w, int U, const std::vector<float>& b);

std::vector<float> pool_avg2d(const std::vector<float>& x, int N, int C, int H, int W,
                              int window, int stride);

std::vector<float> pool_global_avg(const std::vector<float>& x, int N, int C, int H, int W);

// Mean of per-sample -log likelihood, probabilities clamped to [eps, 1-eps].
double bce(const std::vector<float>& prob, const std::vector<float>& label, float eps);
double sparse_ce(const std::vector<float>& prob, int N, int K, const std::vector<int>& labels, float eps);

// Index of the nearest centroid by squared Euclidean distance; ties resolve
// to the lowest index.
int nearest_centroid(const float* point, const std::vector<float>& centroids, int k, int dim);

// Sum of squared distances of every row to its nearest centroid.
double inertia(const std::vector<float>& rows, int64_t n, int dim, const std::vector<float>& centroids, int k);

// AUC as the fraction of (positive, negative) pairs where the positive
// scores higher, ties counted 1/2.
double auc_pairwise(const std::vector<float>& scores, const std::vector<int>& labels);

} // namespace mstl::reference
