#include "mstl/tensor.hpp"

#include <cmath>
#include <unordered_set>

namespace mstl {

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimensionError("tensor dimension must be positive, got " + std::to_string(d));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    s += ")";
    return s;
}

const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::Conv2d: return "conv2d";
        case OpKind::Dense: return "dense";
        case OpKind::PoolAvg2d: return "pool_avg2d";
        case OpKind::PoolGlobalAvg: return "pool_global_avg";
        case OpKind::Relu: return "relu";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::Softmax: return "softmax";
        case OpKind::Bce: return "bce";
        case OpKind::SparseCe: return "sparse_ce";
        case OpKind::ResidualAdd: return "residual_add";
        case OpKind::ConcatChannels: return "concat_channels";
        case OpKind::Dropout: return "dropout";
        case OpKind::Flatten: return "flatten";
        case OpKind::ScaledSum: return "scaled_sum";
    }
    return "unknown";
}

Tensor::Tensor(Shape s, std::vector<float> v) : shape(std::move(s)), values(std::move(v)) {
    if (numel(shape) != static_cast<int64_t>(values.size()))
        throw DimensionError("tensor shape " + shape_str(shape) + " does not match value count " +
                             std::to_string(values.size()));
}

TensorPtr make_tensor(Shape shape, std::vector<float> values) {
    return std::make_shared<Tensor>(std::move(shape), std::move(values));
}

TensorPtr zeros(Shape shape) {
    const auto n = numel(shape);
    return std::make_shared<Tensor>(std::move(shape), std::vector<float>(static_cast<size_t>(n), 0.0f));
}

TensorPtr full(Shape shape, float value) {
    const auto n = numel(shape);
    return std::make_shared<Tensor>(std::move(shape), std::vector<float>(static_cast<size_t>(n), value));
}

TensorPtr random_normal(Shape shape, Rng& rng, float mean, float stddev) {
    auto t = zeros(std::move(shape));
    for (auto& v : t->values) v = rng.normal(mean, stddev);
    return t;
}

TensorPtr random_uniform(Shape shape, Rng& rng, float lo, float hi) {
    auto t = zeros(std::move(shape));
    for (auto& v : t->values) v = rng.uniform(lo, hi);
    return t;
}

TensorPtr clone_values(const Tensor& t) {
    return make_tensor(t.shape, t.values);
}

namespace {
thread_local bool g_grad_enabled = true;
} // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const TensorPtr& root) {
    if (!root) throw InputError("backward: null root");
    if (root->size() != 1) throw InputError("backward: root must be a scalar, got shape " + shape_str(root->shape));

    // Iterative post-order DFS over producer nodes.
    std::vector<TensorPtr> order;
    std::unordered_set<const Tensor*> visited;
    std::vector<std::pair<TensorPtr, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [t, next] = stack.back();
        if (t->node && next < t->node->inputs.size()) {
            TensorPtr child = t->node->inputs[next++];
            if (visited.insert(child.get()).second) stack.emplace_back(std::move(child), 0);
        } else {
            order.push_back(t);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] = 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const TensorPtr& t = *it;
        if (t->node && !t->grad.empty()) t->node->backward(*t);
    }
}

void check_finite(const Tensor& t, const char* op) {
    for (size_t i = 0; i < t.values.size(); ++i) {
        if (!std::isfinite(t.values[i]))
            throw NumericError(std::string(op) + ": non-finite output at flat index " + std::to_string(i));
    }
}

} // namespace mstl
