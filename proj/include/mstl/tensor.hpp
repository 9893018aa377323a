#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mstl/error.hpp"
#include "mstl/rng.hpp"

namespace mstl {

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Operation tags for the reverse-mode tape.
enum class OpKind {
    Conv2d,
    Dense,
    PoolAvg2d,
    PoolGlobalAvg,
    Relu,
    Sigmoid,
    Softmax,
    Bce,
    SparseCe,
    ResidualAdd,
    ConcatChannels,
    Dropout,
    Flatten,
    ScaledSum,
};

const char* op_name(OpKind kind);

// One recorded forward application. backward() reads the output tensor's
// grad and accumulates into the inputs; it is only valid after the forward
// that created the node (construction and forward are the same event here).
struct OpNode {
    OpKind kind;
    std::vector<TensorPtr> inputs;
    std::function<void(const Tensor& out)> backward;
};

// Dense row-major float32 array. `grad` is empty until a backward pass (or
// ensure_grad) allocates it, and always matches values.size() afterwards.
struct Tensor {
    Shape shape;
    std::vector<float> values;
    std::vector<float> grad;
    bool requires_grad = false;
    std::shared_ptr<OpNode> node; // producer; null for leaves

    Tensor() = default;
    Tensor(Shape s, std::vector<float> v);

    int64_t size() const { return static_cast<int64_t>(values.size()); }

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0f);
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0f);
    }
    // True when a backward pass must deliver a gradient here.
    bool needs_grad() const { return requires_grad || node != nullptr; }
};

TensorPtr make_tensor(Shape shape, std::vector<float> values);
TensorPtr zeros(Shape shape);
TensorPtr full(Shape shape, float value);
TensorPtr random_normal(Shape shape, Rng& rng, float mean = 0.0f, float stddev = 1.0f);
TensorPtr random_uniform(Shape shape, Rng& rng, float lo, float hi);
TensorPtr clone_values(const Tensor& t);

// Thread-local switch for tape recording. Eval-mode forwards run under a
// NoGradGuard so concurrent inference never touches shared autograd state.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Reverse pass from a scalar root: topologically orders the tape and calls
// each node's backward exactly once. Leaf tensors with requires_grad receive
// accumulated gradients.
void backward(const TensorPtr& root);

// Throws NumericError naming `op` if any value is NaN/Inf.
void check_finite(const Tensor& t, const char* op);

} // namespace mstl
