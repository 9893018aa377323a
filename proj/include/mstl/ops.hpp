#pragma once

#include "mstl/tensor.hpp"

namespace mstl {

// Forward operations over NCHW float tensors. Each op validates shapes,
// checks outputs for NaN/Inf, and (when grad recording is enabled and an
// input needs gradients) registers a backward node on the tape.
//
// Parallelism: the heavy kernels (conv2d, dense and their backwards) use
// OpenMP with one thread owning each output cell or slice, so results are
// bit-identical regardless of thread count. Scalar reductions stay serial.

// input N,C,H,W * kernel O,I,KH,KW (+ bias O) -> N,O,H',W'.
// Cross-correlation, zero padding.
TensorPtr conv2d(const TensorPtr& input, const TensorPtr& kernel, const TensorPtr& bias,
                 int stride, int padding);

// input N,F * weight F,U + bias U -> N,U.
TensorPtr dense(const TensorPtr& input, const TensorPtr& weight, const TensorPtr& bias);

// Mean over window x window patches, stride steps.
TensorPtr pool_avg2d(const TensorPtr& input, int window, int stride);

// Per-channel mean over all spatial positions: N,C,H,W -> N,C.
TensorPtr pool_global_avg(const TensorPtr& input);

TensorPtr relu(const TensorPtr& x);
TensorPtr sigmoid(const TensorPtr& x);

// Row-wise softmax with max subtraction; input must be 2-D.
TensorPtr softmax(const TensorPtr& x);

// Mean binary cross entropy over the batch. prob and label are N x 1,
// labels in {0,1}; probabilities clamped to [eps, 1-eps], eps = 1e-7.
TensorPtr bce(const TensorPtr& prob, const TensorPtr& label);

// Mean negative log likelihood of softmax probabilities (N x K) at integer
// class labels. Probabilities clamped as in bce.
TensorPtr sparse_ce(const TensorPtr& prob, const std::vector<int>& labels);

TensorPtr residual_add(const TensorPtr& a, const TensorPtr& b);

// Concatenate along the channel axis; all inputs share N,H,W.
TensorPtr concat_channels(const std::vector<TensorPtr>& xs);

// Inverted dropout: scales kept activations by 1/(1-rate) at train time.
// Identity when training is false.
TensorPtr dropout(const TensorPtr& x, float rate, Rng& rng, bool training);

// N,C,H,W -> N,C*H*W (row-major).
TensorPtr flatten(const TensorPtr& x);

// Scalar sum(x * w) / numel(x). Test/probe scalarization helper.
TensorPtr scaled_sum(const TensorPtr& x, const std::vector<float>& weights);

constexpr float kProbEps = 1e-7f;

} // namespace mstl
