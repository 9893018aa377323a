#include "mstl/graph.hpp"

#include <algorithm>
#include <cmath>

namespace mstl {

const char* family_name(Family f) { return f == Family::residual ? "residual" : "dense_block"; }

Family family_from_name(const std::string& s) {
    if (s == "residual") return Family::residual;
    if (s == "dense_block") return Family::dense_block;
    throw ConfigError("unknown model family '" + s + "'");
}

const char* task_name(TaskKind t) {
    switch (t) {
        case TaskKind::none: return "none";
        case TaskKind::binary: return "binary";
        case TaskKind::multiclass: return "multiclass";
    }
    return "none";
}

TaskKind task_from_name(const std::string& s) {
    if (s == "none") return TaskKind::none;
    if (s == "binary") return TaskKind::binary;
    if (s == "multiclass") return TaskKind::multiclass;
    throw ConfigError("unknown task '" + s + "'");
}

void validate_spec(const ArchitectureSpec& spec) {
    if (spec.stem_channels <= 0) throw ConfigError("architecture: stem_channels must be positive");
    if (spec.blocks_per_stage.empty()) throw ConfigError("architecture: blocks_per_stage must not be empty");
    for (int b : spec.blocks_per_stage)
        if (b < 1) throw ConfigError("architecture: every stage needs at least one block");
    if (spec.growth_or_width <= 0) throw ConfigError("architecture: growth_or_width must be positive");
    if (spec.family == Family::dense_block &&
        (spec.compression_theta <= 0.0f || spec.compression_theta > 1.0f))
        throw ConfigError("architecture: compression_theta must be in (0,1]");
    if (spec.input_shape.size() != 3)
        throw ConfigError("architecture: input_shape must be C,H,W");
    for (int d : spec.input_shape)
        if (d <= 0) throw ConfigError("architecture: input_shape dims must be positive");
}

int ModelGraph::param_index(const std::string& name) const {
    for (size_t i = 0; i < params.size(); ++i)
        if (params[i].name == name) return static_cast<int>(i);
    return -1;
}

const NamedParam& ModelGraph::param(const std::string& name) const {
    const int i = param_index(name);
    if (i < 0) throw ConfigError("graph: unknown parameter '" + name + "'");
    return params[static_cast<size_t>(i)];
}

NamedParam& ModelGraph::param(const std::string& name) {
    const int i = param_index(name);
    if (i < 0) throw ConfigError("graph: unknown parameter '" + name + "'");
    return params[static_cast<size_t>(i)];
}

int ModelGraph::base_output_node() const {
    int last = -1;
    for (size_t i = 0; i < nodes.size(); ++i) {
        const bool in_head =
            std::find(head_nodes.begin(), head_nodes.end(), nodes[i].name) != head_nodes.end();
        if (!in_head) last = static_cast<int>(i);
    }
    if (last < 0) throw ConfigError("graph: no base nodes");
    return last;
}

void init_param(NamedParam& p, Rng& rng) {
    const Shape& s = p.tensor->shape;
    if (s.size() == 1) { // bias
        std::fill(p.tensor->values.begin(), p.tensor->values.end(), 0.0f);
        return;
    }
    int64_t fan_in = 1;
    if (s.size() == 4) fan_in = static_cast<int64_t>(s[1]) * s[2] * s[3];
    else if (s.size() == 2) fan_in = s[0];
    const float stddev = std::sqrt(2.0f / static_cast<float>(fan_in));
    for (auto& v : p.tensor->values) v = rng.normal(0.0f, stddev);
}

namespace {

struct Builder {
    ModelGraph& g;
    Rng rng;

    Builder(ModelGraph& graph, uint64_t seed) : g(graph), rng(seed) {}

    int add_node(LayerNode node) {
        g.nodes.push_back(std::move(node));
        return static_cast<int>(g.nodes.size()) - 1;
    }

    TensorPtr new_param(const std::string& name, Shape shape, bool head) {
        NamedParam p;
        p.name = name;
        p.tensor = zeros(std::move(shape));
        p.tensor->requires_grad = true;
        p.head = head;
        init_param(p, rng);
        g.params.push_back(std::move(p));
        return g.params.back().tensor;
    }

    int conv(const std::string& name, int input, int in_ch, int out_ch, int ksize, int stride,
             int padding, bool head = false) {
        new_param(name + ".kernel", {out_ch, in_ch, ksize, ksize}, head);
        new_param(name + ".bias", {out_ch}, head);
        LayerNode node;
        node.name = name;
        node.kind = NodeKind::Conv;
        node.in = {input};
        node.stride = stride;
        node.padding = padding;
        node.params = {name + ".kernel", name + ".bias"};
        const int id = add_node(std::move(node));
        if (head) g.head_nodes.push_back(name);
        else g.conv_layer_order.push_back(name);
        return id;
    }

    int dense_layer(const std::string& name, int input, int in_f, int out_u, bool head) {
        new_param(name + ".weight", {in_f, out_u}, head);
        new_param(name + ".bias", {out_u}, head);
        LayerNode node;
        node.name = name;
        node.kind = NodeKind::Dense;
        node.in = {input};
        node.params = {name + ".weight", name + ".bias"};
        const int id = add_node(std::move(node));
        if (head) g.head_nodes.push_back(name);
        return id;
    }

    int simple(const std::string& name, NodeKind kind, std::vector<int> inputs, bool head = false) {
        LayerNode node;
        node.name = name;
        node.kind = kind;
        node.in = std::move(inputs);
        const int id = add_node(std::move(node));
        if (head) g.head_nodes.push_back(name);
        return id;
    }
};

} // namespace

ModelGraph build_micro_resnet(const ArchitectureSpec& spec, uint64_t seed) {
    validate_spec(spec);
    if (spec.family != Family::residual)
        throw ConfigError("build_micro_resnet: spec family is " + std::string(family_name(spec.family)));

    ModelGraph g;
    g.spec = spec;
    Builder b(g, seed);
    LayerNode input_node;
    input_node.name = "input";
    input_node.kind = NodeKind::Input;
    int x = b.add_node(std::move(input_node));

    int channels = spec.input_shape[0];
    x = b.conv("stem", x, channels, spec.stem_channels, 3, 1, 1);
    channels = spec.stem_channels;

    // Pre-activation residual blocks: relu-conv-relu-conv plus identity skip,
    // with a 1x1 projection only when the shape changes. Stage s doubles the
    // width base and halves the spatial dims (for s > 0).
    for (size_t s = 0; s < spec.blocks_per_stage.size(); ++s) {
        const int width = spec.growth_or_width << s;
        for (int blk = 0; blk < spec.blocks_per_stage[s]; ++blk) {
            const std::string prefix = "s" + std::to_string(s) + "b" + std::to_string(blk);
            const int stride = (s > 0 && blk == 0) ? 2 : 1;
            const int entry = x;
            int skip = entry;
            if (channels != width || stride != 1)
                skip = b.conv(prefix + ".proj", entry, channels, width, 1, stride, 0);
            int y = b.simple(prefix + ".relu1", NodeKind::Relu, {entry});
            y = b.conv(prefix + ".conv1", y, channels, width, 3, stride, 1);
            y = b.simple(prefix + ".relu2", NodeKind::Relu, {y});
            y = b.conv(prefix + ".conv2", y, width, width, 3, 1, 1);
            x = b.simple(prefix + ".add", NodeKind::Add, {y, skip});
            channels = width;
        }
    }
    return g;
}

ModelGraph build_micro_densenet(const ArchitectureSpec& spec, uint64_t seed) {
    validate_spec(spec);
    if (spec.family != Family::dense_block)
        throw ConfigError("build_micro_densenet: spec family is " + std::string(family_name(spec.family)));

    ModelGraph g;
    g.spec = spec;
    Builder b(g, seed);
    LayerNode input_node;
    input_node.name = "input";
    input_node.kind = NodeKind::Input;
    int x = b.add_node(std::move(input_node));

    int channels = spec.input_shape[0];
    x = b.conv("stem", x, channels, spec.stem_channels, 3, 1, 1);
    channels = spec.stem_channels;

    // Dense blocks: layer n consumes the channel-concat of the block entry
    // and all previous layer outputs. Transitions compress channels by theta
    // with a 1x1 conv, then halve the spatial dims with 2x2 average pooling.
    for (size_t blk = 0; blk < spec.blocks_per_stage.size(); ++blk) {
        std::vector<int> feats = {x};
        int cat_channels = channels;
        for (int layer = 0; layer < spec.blocks_per_stage[blk]; ++layer) {
            const std::string prefix = "d" + std::to_string(blk) + "l" + std::to_string(layer);
            int cat = feats.size() == 1 ? feats[0]
                                        : b.simple(prefix + ".concat", NodeKind::Concat, feats);
            int y = b.simple(prefix + ".relu", NodeKind::Relu, {cat});
            y = b.conv(prefix + ".conv", y, cat_channels, spec.growth_or_width, 3, 1, 1);
            feats.push_back(y);
            cat_channels += spec.growth_or_width;
        }
        x = b.simple("d" + std::to_string(blk) + ".out", NodeKind::Concat, feats);
        channels = cat_channels;
        if (blk + 1 < spec.blocks_per_stage.size()) {
            const std::string prefix = "t" + std::to_string(blk);
            const int compressed =
                std::max(1, static_cast<int>(std::floor(spec.compression_theta * channels)));
            x = b.conv(prefix + ".conv", x, channels, compressed, 1, 1, 0);
            LayerNode pool;
            pool.name = prefix + ".pool";
            pool.kind = NodeKind::AvgPool;
            pool.in = {x};
            pool.window = 2;
            pool.stride = 2;
            x = b.add_node(std::move(pool));
            channels = compressed;
        }
    }
    return g;
}

ModelGraph build_model(const ArchitectureSpec& spec, uint64_t seed) {
    return spec.family == Family::residual ? build_micro_resnet(spec, seed)
                                           : build_micro_densenet(spec, seed);
}

std::vector<Shape> infer_shapes(const ModelGraph& g) {
    std::vector<Shape> shapes(g.nodes.size());
    for (size_t i = 0; i < g.nodes.size(); ++i) {
        const LayerNode& node = g.nodes[i];
        switch (node.kind) {
            case NodeKind::Input:
                shapes[i] = g.spec.input_shape;
                break;
            case NodeKind::Conv: {
                const Shape& in = shapes[static_cast<size_t>(node.in[0])];
                const Shape& k = g.param(node.params[0]).tensor->shape;
                const int ho = (in[1] + 2 * node.padding - k[2]) / node.stride + 1;
                const int wo = (in[2] + 2 * node.padding - k[3]) / node.stride + 1;
                shapes[i] = {k[0], ho, wo};
                break;
            }
            case NodeKind::Dense: {
                const Shape& w = g.param(node.params[0]).tensor->shape;
                shapes[i] = {w[1]};
                break;
            }
            case NodeKind::AvgPool: {
                const Shape& in = shapes[static_cast<size_t>(node.in[0])];
                shapes[i] = {in[0], (in[1] - node.window) / node.stride + 1,
                             (in[2] - node.window) / node.stride + 1};
                break;
            }
            case NodeKind::GlobalAvgPool: {
                shapes[i] = {shapes[static_cast<size_t>(node.in[0])][0]};
                break;
            }
            case NodeKind::Flatten: {
                const Shape& in = shapes[static_cast<size_t>(node.in[0])];
                shapes[i] = {in[0] * in[1] * in[2]};
                break;
            }
            case NodeKind::Concat: {
                Shape s = shapes[static_cast<size_t>(node.in[0])];
                int c = 0;
                for (int idx : node.in) c += shapes[static_cast<size_t>(idx)][0];
                s[0] = c;
                shapes[i] = s;
                break;
            }
            default:
                shapes[i] = shapes[static_cast<size_t>(node.in[0])];
                break;
        }
    }
    return shapes;
}

namespace {

void remove_head(ModelGraph& g) {
    if (g.head_nodes.empty()) return;
    const int base_last = g.base_output_node();
    g.nodes.resize(static_cast<size_t>(base_last) + 1);
    g.params.erase(std::remove_if(g.params.begin(), g.params.end(),
                                  [](const NamedParam& p) { return p.head; }),
                   g.params.end());
    g.head_nodes.clear();
    g.head = HeadConfig{};
}

} // namespace

void attach_head(ModelGraph& g, TaskKind task, int classes, int hidden_units, float dropout_rate,
                 uint64_t seed) {
    if (task == TaskKind::none) throw ConfigError("attach_head: task must be binary or multiclass");
    if (task == TaskKind::binary) classes = 1;
    if (task == TaskKind::multiclass && classes < 2)
        throw ConfigError("attach_head: multiclass head needs at least 2 classes");
    if (hidden_units <= 0) throw ConfigError("attach_head: hidden_units must be positive");
    if (dropout_rate < 0.0f || dropout_rate >= 1.0f)
        throw ConfigError("attach_head: dropout rate must be in [0,1)");

    remove_head(g);
    const std::vector<Shape> shapes = infer_shapes(g);
    const int base = g.base_output_node();
    const Shape& base_shape = shapes[static_cast<size_t>(base)];

    Builder b(g, seed);
    int x = base;
    int features = 0;
    if (g.spec.family == Family::residual) {
        // avg-pool -> flatten -> dense(hidden) -> output
        const int window = std::min({2, base_shape[1], base_shape[2]});
        LayerNode pool;
        pool.name = "head.pool";
        pool.kind = NodeKind::AvgPool;
        pool.in = {x};
        pool.window = window;
        pool.stride = window;
        x = b.add_node(std::move(pool));
        g.head_nodes.push_back("head.pool");
        x = b.simple("head.flatten", NodeKind::Flatten, {x}, true);
        features = base_shape[0] * (base_shape[1] / window) * (base_shape[2] / window);
    } else {
        // global-avg-pool -> dense(hidden) -> output
        x = b.simple("head.pool", NodeKind::GlobalAvgPool, {x}, true);
        features = base_shape[0];
    }
    x = b.dense_layer("head.fc", x, features, hidden_units, true);
    if (dropout_rate > 0.0f) {
        LayerNode drop;
        drop.name = "head.dropout";
        drop.kind = NodeKind::Dropout;
        drop.in = {x};
        drop.rate = dropout_rate;
        x = b.add_node(std::move(drop));
        g.head_nodes.push_back("head.dropout");
    }
    x = b.dense_layer("head.out", x, hidden_units, classes, true);
    if (task == TaskKind::binary) {
        b.simple("head.sigmoid", NodeKind::Sigmoid, {x}, true);
    } else {
        b.simple("head.softmax", NodeKind::Softmax, {x}, true);
    }

    g.head.task = task;
    g.head.classes = classes;
    g.head.hidden_units = hidden_units;
    g.head.dropout_rate = dropout_rate;
}

void reinit_head(ModelGraph& g, uint64_t seed) {
    if (!g.has_head()) throw ConfigError("reinit_head: graph has no head");
    Rng rng(seed);
    for (auto& p : g.params)
        if (p.head) init_param(p, rng);
}

void adapt_task(ModelGraph& g, TaskKind to_task, int classes, uint64_t seed) {
    if (!g.has_head()) throw ConfigError("adapt_task: graph has no head");
    if (to_task == TaskKind::none) throw ConfigError("adapt_task: target task must not be none");
    const int want_classes = to_task == TaskKind::binary ? 1 : classes;
    if (g.head.task == to_task && g.head.classes == want_classes) return;

    // Keep hidden head weights, rebuild the output layer and activation.
    std::vector<std::pair<std::string, std::vector<float>>> kept;
    for (const auto& p : g.params)
        if (p.head && p.name.rfind("head.out", 0) != 0) kept.emplace_back(p.name, p.tensor->values);

    attach_head(g, to_task, classes, g.head.hidden_units, g.head.dropout_rate, seed);
    for (const auto& [name, values] : kept) {
        const int idx = g.param_index(name);
        if (idx >= 0 && g.params[static_cast<size_t>(idx)].tensor->values.size() == values.size())
            g.params[static_cast<size_t>(idx)].tensor->values = values;
    }
}

ParamCounts count_params(const ModelGraph& g) {
    ParamCounts c;
    for (const auto& p : g.params) {
        c.total += p.tensor->size();
        (p.trainable ? c.trainable : c.frozen) += p.tensor->size();
    }
    return c;
}

void apply_freeze(ModelGraph& g, const FreezePolicy& policy) {
    if (policy.fraction_shallowest_frozen < 0.0f || policy.fraction_shallowest_frozen > 1.0f)
        throw ConfigError("freeze: fraction must be in [0,1]");
    if (g.conv_layer_order.empty()) throw ConfigError("freeze: graph has no conv layers");
    const int frozen_count = static_cast<int>(std::floor(
        policy.fraction_shallowest_frozen * static_cast<float>(g.conv_layer_order.size())));
    for (auto& p : g.params) p.trainable = true;
    for (int i = 0; i < frozen_count; ++i) {
        const std::string& layer = g.conv_layer_order[static_cast<size_t>(i)];
        g.param(layer + ".kernel").trainable = false;
        g.param(layer + ".bias").trainable = false;
    }
    for (auto& p : g.params) p.tensor->requires_grad = p.trainable;
}

TensorPtr forward_upto(const ModelGraph& g, const TensorPtr& input, int last_node, Mode mode,
                       Rng* rng) {
    if (input->shape.size() != 4 || Shape{input->shape[1], input->shape[2], input->shape[3]} != g.spec.input_shape)
        throw DimensionError("forward: input " + shape_str(input->shape) + " does not match model input " +
                             shape_str(g.spec.input_shape));
    if (last_node < 0 || last_node >= static_cast<int>(g.nodes.size()))
        throw InputError("forward: node index out of range");

    std::unique_ptr<NoGradGuard> guard;
    if (mode == Mode::eval) guard = std::make_unique<NoGradGuard>();

    std::vector<TensorPtr> act(static_cast<size_t>(last_node) + 1);
    for (int i = 0; i <= last_node; ++i) {
        const LayerNode& node = g.nodes[static_cast<size_t>(i)];
        switch (node.kind) {
            case NodeKind::Input:
                act[static_cast<size_t>(i)] = input;
                break;
            case NodeKind::Conv:
                act[static_cast<size_t>(i)] =
                    conv2d(act[static_cast<size_t>(node.in[0])], g.param(node.params[0]).tensor,
                           g.param(node.params[1]).tensor, node.stride, node.padding);
                break;
            case NodeKind::Dense:
                act[static_cast<size_t>(i)] = dense(act[static_cast<size_t>(node.in[0])],
                                                    g.param(node.params[0]).tensor,
                                                    g.param(node.params[1]).tensor);
                break;
            case NodeKind::Relu:
                act[static_cast<size_t>(i)] = relu(act[static_cast<size_t>(node.in[0])]);
                break;
            case NodeKind::Sigmoid:
                act[static_cast<size_t>(i)] = sigmoid(act[static_cast<size_t>(node.in[0])]);
                break;
            case NodeKind::Softmax:
                act[static_cast<size_t>(i)] = softmax(act[static_cast<size_t>(node.in[0])]);
                break;
            case NodeKind::AvgPool:
                act[static_cast<size_t>(i)] =
                    pool_avg2d(act[static_cast<size_t>(node.in[0])], node.window, node.stride);
                break;
            case NodeKind::GlobalAvgPool:
                act[static_cast<size_t>(i)] = pool_global_avg(act[static_cast<size_t>(node.in[0])]);
                break;
            case NodeKind::Flatten:
                act[static_cast<size_t>(i)] = flatten(act[static_cast<size_t>(node.in[0])]);
                break;
            case NodeKind::Add:
                act[static_cast<size_t>(i)] = residual_add(act[static_cast<size_t>(node.in[0])],
                                                           act[static_cast<size_t>(node.in[1])]);
                break;
            case NodeKind::Concat: {
                std::vector<TensorPtr> inputs;
                inputs.reserve(node.in.size());
                for (int idx : node.in) inputs.push_back(act[static_cast<size_t>(idx)]);
                act[static_cast<size_t>(i)] = concat_channels(inputs);
                break;
            }
            case NodeKind::Dropout: {
                const bool training = mode == Mode::train && node.rate > 0.0f;
                if (training && rng == nullptr)
                    throw InputError("forward: training dropout needs an rng");
                static Rng dummy(0);
                act[static_cast<size_t>(i)] = dropout(act[static_cast<size_t>(node.in[0])], node.rate,
                                                      training ? *rng : dummy, training);
                break;
            }
        }
    }
    return act[static_cast<size_t>(last_node)];
}

TensorPtr forward(const ModelGraph& g, const TensorPtr& input, Mode mode, Rng* rng) {
    return forward_upto(g, input, static_cast<int>(g.nodes.size()) - 1, mode, rng);
}

TensorPtr forward_base(const ModelGraph& g, const TensorPtr& input) {
    return forward_upto(g, input, g.base_output_node(), Mode::eval, nullptr);
}

void validate_graph(const ModelGraph& g) {
    if (g.nodes.empty() || g.nodes[0].kind != NodeKind::Input)
        throw ConfigError("graph: first node must be the input");
    for (size_t i = 1; i < g.nodes.size(); ++i) {
        if (g.nodes[i].kind == NodeKind::Input) throw ConfigError("graph: multiple input nodes");
        if (g.nodes[i].in.empty()) throw ConfigError("graph: node '" + g.nodes[i].name + "' has no inputs");
        for (int idx : g.nodes[i].in)
            if (idx < 0 || idx >= static_cast<int>(i))
                throw ConfigError("graph: node '" + g.nodes[i].name + "' references a later node");
        for (const auto& pname : g.nodes[i].params)
            if (g.param_index(pname) < 0)
                throw ConfigError("graph: node '" + g.nodes[i].name + "' references missing param '" + pname + "'");
    }
    // Exactly one output: only the last node may be unconsumed.
    std::vector<bool> consumed(g.nodes.size(), false);
    for (const auto& node : g.nodes)
        for (int idx : node.in) consumed[static_cast<size_t>(idx)] = true;
    for (size_t i = 0; i + 1 < g.nodes.size(); ++i)
        if (!consumed[i]) throw ConfigError("graph: node '" + g.nodes[i].name + "' is dangling");
    // Every param owned by exactly one node.
    std::vector<int> owners(g.params.size(), 0);
    for (const auto& node : g.nodes)
        for (const auto& pname : node.params) owners[static_cast<size_t>(g.param_index(pname))]++;
    for (size_t i = 0; i < owners.size(); ++i)
        if (owners[i] != 1)
            throw ConfigError("graph: param '" + g.params[i].name + "' owned by " + std::to_string(owners[i]) +
                              " nodes");
}

} // namespace mstl
