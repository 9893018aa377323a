#include <doctest.h>

#include <cstring>

#include "mstl/grad_check.hpp"
#include "mstl/graph.hpp"
#include "mstl/ops.hpp"

using namespace mstl;

namespace {

ArchitectureSpec tiny_resnet_spec() {
    ArchitectureSpec spec;
    spec.family = Family::residual;
    spec.stem_channels = 4;
    spec.blocks_per_stage = {1};
    spec.growth_or_width = 4;
    spec.input_shape = {1, 16, 16};
    return spec;
}

ArchitectureSpec tiny_densenet_spec() {
    ArchitectureSpec spec;
    spec.family = Family::dense_block;
    spec.stem_channels = 4;
    spec.blocks_per_stage = {3, 2};
    spec.growth_or_width = 2;
    spec.compression_theta = 0.5f;
    spec.input_shape = {1, 16, 16};
    return spec;
}

} // namespace

TEST_CASE("micro resnet shapes and identity path") {
    auto g = build_micro_resnet(tiny_resnet_spec(), 7);
    validate_graph(g);

    // 1 stage x 1 block, width 4, 16x16 input: output is 4x16x16.
    auto shapes = infer_shapes(g);
    CHECK(shapes.back() == Shape{4, 16, 16});
    Rng rng(3);
    auto x = random_uniform({2, 1, 16, 16}, rng, 0.0f, 1.0f);
    auto y = forward(g, x, Mode::eval);
    CHECK(y->shape == Shape{2, 4, 16, 16});

    // Zeroing the conv kernels of a block turns it into an identity map on
    // the skip path (stem output flows straight through).
    for (auto& p : g.params) {
        if (p.name.rfind("s0b0.", 0) == 0)
            std::fill(p.tensor->values.begin(), p.tensor->values.end(), 0.0f);
    }
    // The block must not have a projection for this to hold bit-exactly.
    for (const auto& node : g.nodes) CHECK(node.name != "s0b0.proj");
    auto stem_only = forward(g, x, Mode::eval);
    // Build a stem-only reference: conv with same params.
    auto stem = conv2d(x, g.param("stem.kernel").tensor, g.param("stem.bias").tensor, 1, 1);
    CHECK(stem_only->values == stem->values);
}

TEST_CASE("conv parameter count hand case") {
    // A single 3x3 conv, 1 -> 4 channels with bias: 1*4*3*3 + 4 = 40.
    ArchitectureSpec spec = tiny_resnet_spec();
    auto g = build_micro_resnet(spec, 0);
    const auto& k = g.param("stem.kernel").tensor;
    const auto& b = g.param("stem.bias").tensor;
    CHECK(k->size() + b->size() == 40);
}

TEST_CASE("micro densenet channel accounting") {
    auto spec = tiny_densenet_spec();
    auto g = build_micro_densenet(spec, 7);
    validate_graph(g);
    auto shapes = infer_shapes(g);

    // Block of 3 layers, growth 2, entry channels 4 -> 4 + 3*2 = 10.
    int block_out = -1;
    for (size_t i = 0; i < g.nodes.size(); ++i)
        if (g.nodes[i].name == "d0.out") block_out = static_cast<int>(i);
    REQUIRE(block_out >= 0);
    CHECK(shapes[static_cast<size_t>(block_out)][0] == 10);

    // Transition with theta = 0.5 on 10 channels: 5 channels, spatial halved.
    int pool = -1;
    for (size_t i = 0; i < g.nodes.size(); ++i)
        if (g.nodes[i].name == "t0.pool") pool = static_cast<int>(i);
    REQUIRE(pool >= 0);
    CHECK(shapes[static_cast<size_t>(pool)] == Shape{5, 8, 8});

    // theta = 1.0 keeps the channel count through the transition conv.
    auto spec1 = spec;
    spec1.compression_theta = 1.0f;
    auto g1 = build_micro_densenet(spec1, 7);
    auto shapes1 = infer_shapes(g1);
    int t0 = -1;
    for (size_t i = 0; i < g1.nodes.size(); ++i)
        if (g1.nodes[i].name == "t0.conv") t0 = static_cast<int>(i);
    REQUIRE(t0 >= 0);
    CHECK(shapes1[static_cast<size_t>(t0)][0] == 10);

    // C_out = C_in + n_layers * growth across random specs.
    Rng rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        ArchitectureSpec s;
        s.family = Family::dense_block;
        s.stem_channels = 1 + static_cast<int>(rng.below(4));
        s.blocks_per_stage = {1 + static_cast<int>(rng.below(4))};
        s.growth_or_width = 1 + static_cast<int>(rng.below(4));
        s.compression_theta = 1.0f;
        s.input_shape = {1, 8, 8};
        auto gg = build_micro_densenet(s, trial);
        auto ss = infer_shapes(gg);
        CHECK(ss.back()[0] == s.stem_channels + s.blocks_per_stage[0] * s.growth_or_width);
    }
}

TEST_CASE("attach_head behavior") {
    auto g = build_micro_resnet(tiny_resnet_spec(), 7);
    attach_head(g, TaskKind::binary, 0, 32, 0.0f, 11);
    validate_graph(g);

    Rng rng(5);
    auto x = random_uniform({3, 1, 16, 16}, rng, 0.0f, 1.0f);
    auto y = forward(g, x, Mode::eval);
    CHECK(y->shape == Shape{3, 1});
    for (float v : y->values) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }

    // Multiclass rows sum to one.
    auto gd = build_micro_densenet(tiny_densenet_spec(), 7);
    attach_head(gd, TaskKind::multiclass, 16, 32, 0.0f, 11);
    auto yd = forward(gd, x, Mode::eval);
    CHECK(yd->shape == Shape{3, 16});
    for (int n = 0; n < 3; ++n) {
        double sum = 0.0;
        for (int k = 0; k < 16; ++k) sum += yd->values[static_cast<size_t>(n) * 16 + k];
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }

    // Attaching twice replaces, never stacks.
    const size_t nodes_before = g.nodes.size();
    const size_t params_before = g.params.size();
    attach_head(g, TaskKind::binary, 0, 32, 0.0f, 12);
    CHECK(g.nodes.size() == nodes_before);
    CHECK(g.params.size() == params_before);

    CHECK_THROWS_AS(attach_head(g, TaskKind::none, 0, 32, 0.0f, 1), ConfigError);
}

TEST_CASE("count_params and freezing") {
    // dense F=7, U=3 with bias: 24 params.
    ModelGraph tiny;
    tiny.spec = tiny_resnet_spec();
    NamedParam w{"d.weight", zeros({7, 3}), true, false};
    NamedParam b{"d.bias", zeros({3}), true, false};
    tiny.params = {w, b};
    CHECK(count_params(tiny).total == 24);

    ModelGraph empty;
    CHECK(count_params(empty).total == 0);

    // 8 conv layers, fraction 0.5: exactly layers 1..4 frozen.
    ArchitectureSpec spec = tiny_resnet_spec();
    spec.blocks_per_stage = {2, 2}; // stem + 2*(conv1,conv2) + 2*(conv1,conv2) + proj = 10 convs
    auto g = build_micro_resnet(spec, 7);
    attach_head(g, TaskKind::binary, 0, 16, 0.0f, 3);
    const auto before = count_params(g);

    apply_freeze(g, FreezePolicy{0.5f});
    const auto after = count_params(g);
    CHECK(after.total == before.total);
    CHECK(after.trainable + after.frozen == after.total);

    const int expected_frozen = static_cast<int>(g.conv_layer_order.size()) / 2;
    int frozen_layers = 0;
    for (size_t i = 0; i < g.conv_layer_order.size(); ++i) {
        const bool frozen = !g.param(g.conv_layer_order[i] + ".kernel").trainable;
        if (frozen) {
            ++frozen_layers;
            CHECK(i < static_cast<size_t>(expected_frozen)); // shallow prefix only
        }
    }
    CHECK(frozen_layers == expected_frozen);

    apply_freeze(g, FreezePolicy{0.0f});
    CHECK(count_params(g).frozen == 0);

    // fraction 1 with 5 conv layers freezes all 5.
    ArchitectureSpec s5 = tiny_resnet_spec();
    s5.blocks_per_stage = {2}; // stem + 2*2 convs = 5
    auto g5 = build_micro_resnet(s5, 1);
    CHECK(g5.conv_layer_order.size() == 5);
    apply_freeze(g5, FreezePolicy{1.0f});
    for (const auto& layer : g5.conv_layer_order) CHECK_FALSE(g5.param(layer + ".kernel").trainable);
}

TEST_CASE("reinit_head determinism and base preservation") {
    auto g = build_micro_resnet(tiny_resnet_spec(), 7);
    attach_head(g, TaskKind::binary, 0, 32, 0.0f, 11);

    std::vector<std::vector<float>> base_before, head_before;
    for (const auto& p : g.params) (p.head ? head_before : base_before).push_back(p.tensor->values);

    reinit_head(g, 99);
    std::vector<std::vector<float>> base_after, head_after;
    for (const auto& p : g.params) (p.head ? head_after : base_after).push_back(p.tensor->values);

    CHECK(base_before == base_after);
    bool any_diff = false;
    for (size_t i = 0; i < head_before.size(); ++i)
        if (head_before[i] != head_after[i]) any_diff = true;
    CHECK(any_diff);

    // Same seed twice gives identical head values.
    reinit_head(g, 1234);
    std::vector<std::vector<float>> first;
    for (const auto& p : g.params)
        if (p.head) first.push_back(p.tensor->values);
    reinit_head(g, 1234);
    std::vector<std::vector<float>> second;
    for (const auto& p : g.params)
        if (p.head) second.push_back(p.tensor->values);
    CHECK(first == second);

    ModelGraph headless = build_micro_resnet(tiny_resnet_spec(), 7);
    CHECK_THROWS_AS(reinit_head(headless, 1), ConfigError);
}

TEST_CASE("full-graph gradient check on 2-block instances") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        ArchitectureSpec rs;
        rs.family = Family::residual;
        rs.stem_channels = 3;
        rs.blocks_per_stage = {2};
        rs.growth_or_width = 3;
        rs.input_shape = {1, 8, 8};
        auto gr = build_micro_resnet(rs, 100 + seed);
        attach_head(gr, TaskKind::binary, 0, 8, 0.0f, 7 + seed);

        Rng rng(55 + seed);
        auto x = random_uniform({2, 1, 8, 8}, rng, 0.0f, 1.0f);
        std::vector<int> labels = {1, 0};
        auto res = grad_check_graph(gr, x, TaskKind::binary, labels);
        CHECK(res.max_rel_err < 1e-3);

        ArchitectureSpec ds;
        ds.family = Family::dense_block;
        ds.stem_channels = 3;
        ds.blocks_per_stage = {2};
        ds.growth_or_width = 2;
        ds.compression_theta = 0.5f;
        ds.input_shape = {1, 8, 8};
        auto gd = build_micro_densenet(ds, 200 + seed);
        attach_head(gd, TaskKind::multiclass, 3, 8, 0.0f, 9 + seed);
        std::vector<int> labels_d = {2, 0};
        auto res_d = grad_check_graph(gd, x, TaskKind::multiclass, labels_d);
        CHECK(res_d.max_rel_err < 1e-3);
    }
}

TEST_CASE("adapt_task restructures only the output layer") {
    auto g = build_micro_densenet(tiny_densenet_spec(), 7);
    attach_head(g, TaskKind::multiclass, 16, 32, 0.0f, 11);
    const auto fc_before = g.param("head.fc.weight").tensor->values;
    const auto base_before = g.param("stem.kernel").tensor->values;

    adapt_task(g, TaskKind::binary, 0, 21);
    CHECK(g.head.task == TaskKind::binary);
    CHECK(g.param("head.out.weight").tensor->shape == Shape{32, 1});
    CHECK(g.param("head.fc.weight").tensor->values == fc_before);
    CHECK(g.param("stem.kernel").tensor->values == base_before);

    // binary -> binary is a structural no-op.
    const auto out_before = g.param("head.out.weight").tensor->values;
    adapt_task(g, TaskKind::binary, 0, 22);
    CHECK(g.param("head.out.weight").tensor->values == out_before);

    Rng rng(5);
    auto x = random_uniform({2, 1, 16, 16}, rng, 0.0f, 1.0f);
    auto y = forward(g, x, Mode::eval);
    CHECK(y->shape == Shape{2, 1});
    for (float v : y->values) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
}
