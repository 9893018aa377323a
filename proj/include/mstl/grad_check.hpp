#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mstl/tensor.hpp"

namespace mstl {

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_coordinate; // "<param or input index>[flat index]"
};

// Compares the taped analytic gradient of a scalar-valued forward function
// against central finite differences. `fn` must be a deterministic pure
// function of the current values of `wrt` (dropout disabled, no RNG).
// Per-coordinate error is |analytic - numeric| / max(1, |numeric|); the
// difference quotient is formed in double from float32 forward evaluations.
GradCheckResult grad_check(const std::function<TensorPtr()>& fn,
                           const std::vector<TensorPtr>& wrt,
                           double step = 1e-3);

} // namespace mstl

#include "mstl/graph.hpp"

namespace mstl {

// Full-graph variant: analytic gradients of the task loss w.r.t. every
// parameter with requires_grad, compared against central differences of an
// independent double-precision re-evaluation of the graph (step 1e-5 on
// float64). Dropout nodes are evaluated as identity on both routes.
GradCheckResult grad_check_graph(const ModelGraph& g, const TensorPtr& input, TaskKind task,
                                 const std::vector<int>& labels, double step = 1e-5);

} // namespace mstl
