#pragma once

#include <string>
#include <vector>

#include "mstl/ops.hpp"
#include "mstl/tensor.hpp"

namespace mstl {

enum class Family { residual, dense_block };
enum class TaskKind { none, binary, multiclass };
enum class NodeKind { Input, Conv, Dense, Relu, Sigmoid, Softmax, AvgPool, GlobalAvgPool, Flatten, Add, Concat, Dropout };
enum class Mode { train, eval };

const char* family_name(Family f);
Family family_from_name(const std::string& s);
const char* task_name(TaskKind t);
TaskKind task_from_name(const std::string& s);

struct ArchitectureSpec {
    Family family = Family::residual;
    int stem_channels = 4;
    std::vector<int> blocks_per_stage = {1};
    int growth_or_width = 4;           // growth rate (dense_block) or stage width base (residual)
    float compression_theta = 1.0f;    // dense_block transitions
    Shape input_shape = {1, 32, 32};   // C,H,W
};

// Throws ConfigError on invariant violations (empty stages, theta out of
// (0,1], non-positive dims).
void validate_spec(const ArchitectureSpec& spec);

struct LayerNode {
    std::string name;
    NodeKind kind = NodeKind::Input;
    std::vector<int> in;                // producer node indices
    int stride = 1;
    int padding = 0;
    int window = 2;
    float rate = 0.0f;                  // dropout
    std::vector<std::string> params;    // conv/dense: {weights, bias}
};

struct NamedParam {
    std::string name;
    TensorPtr tensor;
    bool trainable = true;
    bool head = false;
};

struct HeadConfig {
    TaskKind task = TaskKind::none;
    int classes = 0;        // output nodes: 1 for binary, k for multiclass
    int hidden_units = 64;
    float dropout_rate = 0.0f;
};

struct FreezePolicy {
    float fraction_shallowest_frozen = 0.0f; // of conv layers, by conv_layer_order
};

struct ModelGraph {
    ArchitectureSpec spec;
    std::vector<LayerNode> nodes;            // topological order; nodes[0] is the input
    std::vector<NamedParam> params;          // declaration order (checkpoint blob order)
    std::vector<std::string> conv_layer_order; // shallow to deep, includes 1x1 projections/transitions
    std::vector<std::string> head_nodes;     // suffix of `nodes`
    HeadConfig head;

    bool has_head() const { return head.task != TaskKind::none; }
    int param_index(const std::string& name) const;
    const NamedParam& param(const std::string& name) const;
    NamedParam& param(const std::string& name);
    // Index of the last node that is not part of the head.
    int base_output_node() const;
};

struct ParamCounts {
    int64_t total = 0;
    int64_t trainable = 0;
    int64_t frozen = 0;
};

ModelGraph build_micro_resnet(const ArchitectureSpec& spec, uint64_t seed);
ModelGraph build_micro_densenet(const ArchitectureSpec& spec, uint64_t seed);
ModelGraph build_model(const ArchitectureSpec& spec, uint64_t seed);

// Replaces any existing head. Binary heads end in sigmoid over one node,
// multiclass heads in softmax over `classes` nodes. dropout_rate > 0 inserts
// an inverted-dropout node before the output layer.
void attach_head(ModelGraph& g, TaskKind task, int classes, int hidden_units, float dropout_rate,
                 uint64_t seed);

// Resamples every head parameter; base parameters are untouched.
void reinit_head(ModelGraph& g, uint64_t seed);

// Swaps the output layer + activation to match a new task; hidden head
// layers keep their weights. No-op when the task already matches.
void adapt_task(ModelGraph& g, TaskKind to_task, int classes, uint64_t seed);

ParamCounts count_params(const ModelGraph& g);

// Marks the first floor(fraction * count) conv layers (kernels and biases)
// non-trainable; everything else becomes trainable.
void apply_freeze(ModelGraph& g, const FreezePolicy& policy);

// Per-sample output shapes for every node (batch dim omitted).
std::vector<Shape> infer_shapes(const ModelGraph& g);

// Forward pass to the output node. Mode::eval disables tape recording and
// dropout and is safe to call concurrently on a const graph. rng is required
// only when mode == train and the graph contains dropout.
TensorPtr forward(const ModelGraph& g, const TensorPtr& input, Mode mode, Rng* rng = nullptr);

// Forward pass stopping at the last non-head node (the convolutional base).
TensorPtr forward_base(const ModelGraph& g, const TensorPtr& input);

// Forward pass up to (and including) an arbitrary node index.
TensorPtr forward_upto(const ModelGraph& g, const TensorPtr& input, int last_node, Mode mode,
                       Rng* rng);

// Structural invariants: single input/output, acyclic indices, params
// resolvable and owned by exactly one node. Throws ConfigError.
void validate_graph(const ModelGraph& g);

// fan-in scaled normal (std = sqrt(2/fan_in)) for weights, zero for biases.
void init_param(NamedParam& p, Rng& rng);

} // namespace mstl
