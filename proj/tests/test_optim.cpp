#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mstl/optim.hpp"
#include "mstl/synth.hpp"

using namespace mstl;

namespace {

NamedParam scalar_param(const std::string& name, float value, float grad) {
    NamedParam p{name, make_tensor({1}, {value}), true, false};
    p.tensor->ensure_grad();
    p.tensor->grad[0] = grad;
    return p;
}

// Two linearly separable pixel-space blobs rendered by the generator.
SyntheticDomainConfig separable_config(uint64_t seed) {
    SyntheticDomainConfig cfg;
    cfg.n_classes = 2;
    cfg.samples_per_class = 24;
    cfg.image_size = 12;
    cfg.noise_sigma = 0.02;
    cfg.seed = seed;
    cfg.domains = {{"only", 0.0, -1}};
    return cfg;
}

std::filesystem::path temp_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() / ("mstl_test_" + tag);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("sgd_step hand cases") {
    { // momentum 0, lr 0.1, g=1, p=0 -> p=-0.1
        std::vector<NamedParam> params = {scalar_param("p", 0.0f, 1.0f)};
        std::vector<std::vector<float>> vel;
        sgd_step(params, vel, 0.1f, 0.0f);
        CHECK(params[0].tensor->values[0] == doctest::Approx(-0.1f));
    }
    { // g=0 everywhere, v=0: fixed point
        std::vector<NamedParam> params = {scalar_param("p", 0.5f, 0.0f)};
        std::vector<std::vector<float>> vel;
        sgd_step(params, vel, 0.1f, 0.9f);
        CHECK(params[0].tensor->values[0] == 0.5f);
    }
    { // two steps, momentum 0.9, lr 0.1, constant g=1: p = -0.1 + (-0.19) = -0.29
        std::vector<NamedParam> params = {scalar_param("p", 0.0f, 1.0f)};
        std::vector<std::vector<float>> vel;
        sgd_step(params, vel, 0.1f, 0.9f);
        params[0].tensor->grad[0] = 1.0f;
        sgd_step(params, vel, 0.1f, 0.9f);
        CHECK(params[0].tensor->values[0] == doctest::Approx(-0.29f));
    }
    { // frozen params never move
        std::vector<NamedParam> params = {scalar_param("p", 1.0f, 5.0f)};
        params[0].trainable = false;
        std::vector<std::vector<float>> vel;
        sgd_step(params, vel, 0.1f, 0.9f);
        CHECK(params[0].tensor->values[0] == 1.0f);
    }
}

TEST_CASE("sgd_step matches closed-form two-step iteration on random triples") {
    Rng rng(77);
    for (int trial = 0; trial < 100; ++trial) {
        const float lr = rng.uniform(0.001f, 0.5f);
        const float mom = rng.uniform(0.0f, 0.99f);
        const float g = rng.uniform(-2.0f, 2.0f);
        std::vector<NamedParam> params = {scalar_param("p", 0.0f, g)};
        std::vector<std::vector<float>> vel;
        sgd_step(params, vel, lr, mom);
        params[0].tensor->grad[0] = g;
        sgd_step(params, vel, lr, mom);
        const float v1 = -lr * g;
        const float p_expected = v1 + (mom * v1 - lr * g);
        CHECK(params[0].tensor->values[0] == doctest::Approx(p_expected).epsilon(1e-6));
    }
}

TEST_CASE("train_stage reaches perfect accuracy on separable data") {
    auto manifests = gen_synthetic_domains(separable_config(4242));
    auto& m = manifests[0];
    split_manifest(m, {0.6, 0.4, 0.0}, 9, true);
    auto train = load_split(m, Split::train, {1, 12, 12});
    auto val = load_split(m, Split::val, {1, 12, 12});

    ArchitectureSpec spec;
    spec.family = Family::residual;
    spec.stem_channels = 4;
    spec.blocks_per_stage = {1};
    spec.growth_or_width = 4;
    spec.input_shape = {1, 12, 12};
    auto g = build_micro_resnet(spec, 31);
    attach_head(g, TaskKind::binary, 0, 16, 0.0f, 32);

    Hyperparams hyper;
    hyper.learning_rate = 0.05f;
    hyper.momentum = 0.9f;
    hyper.batch_size = 8;
    hyper.epochs = 20;
    hyper.seed = 5;
    auto out = train_stage(g, train, val, TaskKind::binary, hyper, []{ CheckpointMeta m; m.stage = "t"; return m; }());
    CHECK(out.log.best_val_accuracy() == doctest::Approx(1.0));

    // Reported best accuracy equals the max over the log.
    double max_acc = 0.0;
    for (const auto& e : out.log.epochs) max_acc = std::max(max_acc, e.val_acc);
    CHECK(out.log.best_val_accuracy() == doctest::Approx(max_acc));
    CHECK(out.best.meta.epoch == out.log.best_epoch);
}

TEST_CASE("train_stage batching boundary and determinism") {
    auto manifests = gen_synthetic_domains(separable_config(777));
    auto& m = manifests[0];
    split_manifest(m, {0.6, 0.4, 0.0}, 3, true);
    auto train = load_split(m, Split::train, {1, 12, 12});
    auto val = load_split(m, Split::val, {1, 12, 12});

    ArchitectureSpec spec;
    spec.family = Family::residual;
    spec.stem_channels = 2;
    spec.blocks_per_stage = {1};
    spec.growth_or_width = 2;
    spec.input_shape = {1, 12, 12};

    Hyperparams hyper;
    hyper.learning_rate = 0.01f;
    hyper.momentum = 0.9f;
    hyper.batch_size = 4096; // larger than the dataset: exactly one step per epoch
    hyper.epochs = 1;
    hyper.seed = 21;

    auto g1 = build_micro_resnet(spec, 8);
    attach_head(g1, TaskKind::binary, 0, 8, 0.0f, 9);
    auto g2 = build_micro_resnet(spec, 8);
    attach_head(g2, TaskKind::binary, 0, 8, 0.0f, 9);

    auto o1 = train_stage(g1, train, val, TaskKind::binary, hyper, []{ CheckpointMeta m; m.stage = "a"; return m; }());
    auto o2 = train_stage(g2, train, val, TaskKind::binary, hyper, []{ CheckpointMeta m; m.stage = "a"; return m; }());
    REQUIRE(o1.log.epochs.size() == 1);
    CHECK(o1.log.epochs[0].train_loss == o2.log.epochs[0].train_loss);
    CHECK(o1.log.epochs[0].val_acc == o2.log.epochs[0].val_acc);
    for (size_t i = 0; i < g1.params.size(); ++i)
        CHECK(g1.params[i].tensor->values == g2.params[i].tensor->values);

    // One optimizer step: params moved exactly once from the same start, so
    // a manual replay with batch_size >= n gives identical values (checked
    // via bit-equality of the two runs above) and the log has one epoch.
    SampleSet empty;
    CHECK_THROWS_AS(train_stage(g1, empty, val, TaskKind::binary, hyper, CheckpointMeta{}), DataError);
}

TEST_CASE("frozen parameters are bit-identical through training") {
    auto manifests = gen_synthetic_domains(separable_config(99));
    auto& m = manifests[0];
    split_manifest(m, {0.6, 0.4, 0.0}, 5, true);
    auto train = load_split(m, Split::train, {1, 12, 12});
    auto val = load_split(m, Split::val, {1, 12, 12});

    ArchitectureSpec spec;
    spec.family = Family::residual;
    spec.stem_channels = 3;
    spec.blocks_per_stage = {2};
    spec.growth_or_width = 3;
    spec.input_shape = {1, 12, 12};
    auto g = build_micro_resnet(spec, 13);
    attach_head(g, TaskKind::binary, 0, 8, 0.0f, 14);
    apply_freeze(g, FreezePolicy{0.5f});

    std::vector<std::pair<std::string, std::vector<float>>> frozen_before;
    std::vector<std::pair<std::string, std::vector<float>>> trainable_before;
    for (const auto& p : g.params)
        (p.trainable ? trainable_before : frozen_before).emplace_back(p.name, p.tensor->values);
    REQUIRE(!frozen_before.empty());

    Hyperparams hyper;
    hyper.learning_rate = 0.05f;
    hyper.momentum = 0.9f;
    hyper.batch_size = 8;
    hyper.epochs = 3;
    hyper.seed = 17;
    train_stage(g, train, val, TaskKind::binary, hyper, []{ CheckpointMeta m; m.stage = "s"; return m; }());

    for (const auto& [name, before] : frozen_before) CHECK(g.param(name).tensor->values == before);
    bool any_moved = false;
    for (const auto& [name, before] : trainable_before)
        if (g.param(name).tensor->values != before) any_moved = true;
    CHECK(any_moved);
}

TEST_CASE("checkpoint round-trip") {
    auto dir = temp_dir("ckpt");

    ArchitectureSpec spec;
    spec.family = Family::dense_block;
    spec.stem_channels = 4;
    spec.blocks_per_stage = {2};
    spec.growth_or_width = 2;
    spec.compression_theta = 0.5f;
    spec.input_shape = {1, 12, 12};
    auto g = build_micro_densenet(spec, 41);
    attach_head(g, TaskKind::multiclass, 4, 16, 0.5f, 42);
    apply_freeze(g, FreezePolicy{0.5f});

    CheckpointMeta meta;
    meta.stage = "transition";
    meta.epoch = 7;
    meta.val_accuracy = 0.875;
    meta.seed = 1234;
    meta.config_hash = "deadbeef";
    std::vector<std::vector<float>> vel(g.params.size());
    for (size_t i = 0; i < vel.size(); ++i) vel[i].assign(g.params[i].tensor->values.size(), 0.25f);
    auto ckpt = make_checkpoint(g, &vel, meta);

    const auto path = (dir / "model.ckpt").string();
    save_checkpoint(ckpt, path);
    auto loaded = load_checkpoint(path);

    // serialize -> deserialize -> serialize is byte-identical.
    CHECK(checkpoint_bytes(ckpt) == checkpoint_bytes(loaded));
    CHECK(loaded.meta.stage == "transition");
    CHECK(loaded.meta.epoch == 7);
    CHECK(loaded.meta.val_accuracy == 0.875);
    CHECK(loaded.meta.rng_algorithm == std::string(Rng::kAlgorithm));
    CHECK(loaded.velocity.size() == g.params.size());

    // save -> load -> forward is bit-identical on a fixed batch.
    auto restored = restore_graph(loaded);
    Rng rng(3);
    auto x = random_uniform({2, 1, 12, 12}, rng, 0.0f, 1.0f);
    auto y0 = forward(g, x, Mode::eval);
    auto y1 = forward(restored, x, Mode::eval);
    CHECK(y0->values == y1->values);
    for (size_t i = 0; i < g.params.size(); ++i) {
        CHECK(restored.params[i].name == g.params[i].name);
        CHECK(restored.params[i].trainable == g.params[i].trainable);
    }

    // Velocity-free checkpoint for evaluation loads fine, metadata intact.
    auto eval_ckpt = make_checkpoint(g, nullptr, meta);
    const auto eval_path = (dir / "eval.ckpt").string();
    save_checkpoint(eval_ckpt, eval_path);
    auto eval_loaded = load_checkpoint(eval_path);
    CHECK(eval_loaded.velocity.empty());
    CHECK(eval_loaded.meta.config_hash == "deadbeef");

    // Truncated file: format error, no partial model.
    std::vector<uint8_t> bytes = checkpoint_bytes(ckpt);
    bytes.resize(bytes.size() / 2);
    const auto trunc_path = (dir / "trunc.ckpt").string();
    std::ofstream out(trunc_path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.close();
    CHECK_THROWS_AS(load_checkpoint(trunc_path), FormatError);

    // Corrupt magic.
    bytes = checkpoint_bytes(ckpt);
    bytes[0] = 'X';
    const auto bad_path = (dir / "bad.ckpt").string();
    std::ofstream out2(bad_path, std::ios::binary);
    out2.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out2.close();
    CHECK_THROWS_AS(load_checkpoint(bad_path), FormatError);

    std::filesystem::remove_all(dir);
}
