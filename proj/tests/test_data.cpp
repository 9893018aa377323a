#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "mstl/data.hpp"
#include "mstl/image_io.hpp"
#include "mstl/synth.hpp"

using namespace mstl;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() / ("mstl_data_" + tag);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

DatasetManifest synthetic_manifest(int per_class, int classes = 2, uint64_t seed = 7) {
    SyntheticDomainConfig cfg;
    cfg.n_classes = classes;
    cfg.samples_per_class = per_class;
    cfg.image_size = 8;
    cfg.seed = seed;
    cfg.domains = {{"d", 0.0, -1}};
    return gen_synthetic_domains(cfg)[0];
}

} // namespace

TEST_CASE("bilinear resize hand case") {
    // 2x2 checkerboard [a b; c d] upsampled to 4x4 with pixel-center
    // sampling: source coords for outputs are -0.25, 0.25, 0.75, 1.25
    // clamped to [0, 1].
    const std::vector<float> src = {1.0f, 0.0f, 0.0f, 1.0f};
    auto out = resize_bilinear_chw(src, 1, 2, 2, 4, 4);
    REQUIRE(out.size() == 16);
    // Row sample positions after clamping: y in {0, 0.25, 0.75, 1}.
    // Hand-computed grid:
    const float e = 1.0f;
    const std::vector<float> expected = {
        e * 1.00f, 0.75f, 0.25f, 0.00f,
        0.75f, 0.625f, 0.375f, 0.25f,
        0.25f, 0.375f, 0.625f, 0.75f,
        0.00f, 0.25f, 0.75f, 1.00f,
    };
    for (size_t i = 0; i < 16; ++i) CHECK(out[i] == doctest::Approx(expected[i]).epsilon(1e-6));
}

TEST_CASE("png round trip and load_image") {
    auto dir = temp_dir("png");

    // Solid mid-gray image: loaded values are 0.5 within 1/255.
    RawImage gray;
    gray.channels = 1;
    gray.height = 6;
    gray.width = 6;
    gray.pixels.assign(36, 128);
    const auto gray_path = (dir / "gray.png").string();
    write_png(gray_path, gray);
    auto t = load_image(gray_path, {1, 6, 6});
    for (float v : t->values) CHECK(std::abs(v - 0.5f) <= 1.0f / 255.0f);

    // Identity resize: decode round-trip preserves values exactly.
    Rng rng(3);
    RawImage rgb;
    rgb.channels = 3;
    rgb.height = 5;
    rgb.width = 7;
    rgb.pixels.resize(3 * 5 * 7);
    for (auto& p : rgb.pixels) p = static_cast<uint8_t>(rng.below(256));
    const auto rgb_path = (dir / "rgb.png").string();
    write_png(rgb_path, rgb);
    auto t2 = load_image(rgb_path, {3, 5, 7});
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 7; ++x)
            for (int c = 0; c < 3; ++c) {
                const float expected = static_cast<float>(rgb.pixels[(y * 7 + x) * 3 + c]) / 255.0f;
                CHECK(t2->values[static_cast<size_t>(c) * 35 + static_cast<size_t>(y) * 7 + x] ==
                      doctest::Approx(expected));
            }

    // Channel adaptation: RGB -> gray averages, gray -> RGB replicates.
    auto t3 = load_image(rgb_path, {1, 5, 7});
    CHECK(t3->shape == Shape{1, 1, 5, 7});
    auto t4 = load_image(gray_path, {3, 6, 6});
    for (size_t i = 0; i < 36; ++i) CHECK(t4->values[i] == t4->values[36 + i]);

    CHECK_THROWS_AS(load_image((dir / "missing.png").string(), {1, 4, 4}), DataError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("split_manifest ratios") {
    { // 100 samples at 60:15:25 -> 60/15/25
        auto m = synthetic_manifest(50); // 2 classes x 50
        split_manifest(m, {0.6, 0.15, 0.25}, 11, false);
        CHECK(m.count(Split::train) == 60);
        CHECK(m.count(Split::val) == 15);
        CHECK(m.count(Split::test) == 25);
    }
    { // 101 samples: remainder goes to train (61/15/25)
        auto m = synthetic_manifest(101, 2, 5);
        m.entries.resize(101); // 101 entries, all class 0 of the first class block
        for (auto& e : m.entries) e.label = 0;
        m.classes = {"only"};
        split_manifest(m, {0.6, 0.15, 0.25}, 11, false);
        CHECK(m.count(Split::train) == 61);
        CHECK(m.count(Split::val) == 15);
        CHECK(m.count(Split::test) == 25);
    }
    { // stratified 2-class 50/50 stays balanced within each split
        auto m = synthetic_manifest(50);
        split_manifest(m, {0.6, 0.15, 0.25}, 3, true);
        for (Split s : {Split::train, Split::val, Split::test}) {
            int64_t per_class[2] = {0, 0};
            for (const auto& e : m.entries)
                if (e.split == s) ++per_class[e.label];
            CHECK(std::abs(per_class[0] - per_class[1]) <= 1);
        }
    }
    { // exact partition, no loss or overlap
        auto m = synthetic_manifest(17, 3, 9);
        split_manifest(m, {0.5, 0.25, 0.25}, 21, true);
        CHECK(m.count(Split::train) + m.count(Split::val) + m.count(Split::test) ==
              static_cast<int64_t>(m.entries.size()));
        CHECK(m.count(Split::unassigned) == 0);
    }
    { // class too small for a non-empty split
        auto m = synthetic_manifest(2);
        CHECK_THROWS_AS(split_manifest(m, {0.6, 0.15, 0.25}, 1, true), DataError);
    }
}

TEST_CASE("manifest save/load round trip and hashing") {
    auto dir = temp_dir("manifest");
    auto m = synthetic_manifest(5);
    split_manifest(m, {0.6, 0.2, 0.2}, 13, true);
    m.notes.push_back("unit-test");
    const auto path = (dir / "ds.manifest").string();
    save_manifest(m, path);
    auto loaded = load_manifest(path);
    CHECK(loaded.name == m.name);
    CHECK(loaded.classes == m.classes);
    CHECK(loaded.seed == m.seed);
    CHECK(loaded.entries.size() == m.entries.size());
    for (size_t i = 0; i < m.entries.size(); ++i) {
        CHECK(loaded.entries[i].ref == m.entries[i].ref);
        CHECK(loaded.entries[i].label == m.entries[i].label);
        CHECK(loaded.entries[i].split == m.entries[i].split);
    }
    CHECK(manifest_hash(loaded) == manifest_hash(m));

    // Bad lines produce format errors with the line number.
    const auto bad = (dir / "bad.manifest").string();
    {
        std::ofstream out(bad);
        out << "mstl-manifest v1\nname\tx\nbogus\tfield\n";
    }
    CHECK_THROWS_AS(load_manifest(bad), FormatError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("synthetic generator determinism and file persistence") {
    SyntheticDomainConfig cfg;
    cfg.n_classes = 2;
    cfg.samples_per_class = 6;
    cfg.image_size = 10;
    cfg.seed = 31;

    auto a = gen_synthetic_domains(cfg);
    auto b = gen_synthetic_domains(cfg);
    REQUIRE(a.size() == 3);
    for (size_t d = 0; d < a.size(); ++d) {
        CHECK(manifest_hash(a[d]) == manifest_hash(b[d]));
        auto img_a = load_entry(a[d], a[d].entries[0], {1, 10, 10});
        auto img_b = load_entry(b[d], b[d].entries[0], {1, 10, 10});
        CHECK(img_a == img_b);
    }

    // Persisted PNG datasets reload to the quantized values of the rendered
    // samples, identically across two loads.
    auto dir = temp_dir("synth");
    auto persisted = gen_synthetic_domains_to_dir(cfg, dir.string());
    for (const auto& m : persisted) {
        verify_refs(m);
        auto reloaded = load_manifest((std::filesystem::path(m.base_dir) / "dataset.manifest").string());
        CHECK(manifest_hash(reloaded) == manifest_hash(m));
    }
    auto m0 = persisted[0];
    split_manifest(m0, {0.5, 0.5, 0.0}, 2, true);
    auto s1 = load_split(m0, Split::train, {1, 10, 10});
    auto s2 = load_split(m0, Split::train, {1, 10, 10});
    CHECK(s1.images == s2.images);
    CHECK(s1.labels == s2.labels);
    std::filesystem::remove_all(dir);
}

TEST_CASE("synthetic classes are learnable by a depth-0 classifier") {
    // Logistic regression on raw pixels reaches > 0.9 accuracy on the
    // target domain: the class signal is in the blob position.
    SyntheticDomainConfig cfg;
    cfg.n_classes = 2;
    cfg.samples_per_class = 40;
    cfg.image_size = 12;
    cfg.seed = 123;
    auto target = gen_synthetic_domains(cfg)[2];
    split_manifest(target, {0.7, 0.3, 0.0}, 3, true);
    auto train = load_split(target, Split::train, {1, 12, 12});
    auto val = load_split(target, Split::val, {1, 12, 12});

    const int dim = 12 * 12;
    std::vector<double> w(static_cast<size_t>(dim), 0.0);
    double bias = 0.0;
    for (int it = 0; it < 300; ++it) {
        std::vector<double> gw(static_cast<size_t>(dim), 0.0);
        double gb = 0.0;
        for (int64_t i = 0; i < train.count; ++i) {
            const float* x = train.images.data() + i * dim;
            double z = bias;
            for (int j = 0; j < dim; ++j) z += w[static_cast<size_t>(j)] * x[j];
            const double p = 1.0 / (1.0 + std::exp(-z));
            const double err = p - train.labels[static_cast<size_t>(i)];
            for (int j = 0; j < dim; ++j) gw[static_cast<size_t>(j)] += err * x[j];
            gb += err;
        }
        for (int j = 0; j < dim; ++j) w[static_cast<size_t>(j)] -= 0.05 * gw[static_cast<size_t>(j)] / train.count;
        bias -= 0.05 * gb / train.count;
    }
    int64_t correct = 0;
    for (int64_t i = 0; i < val.count; ++i) {
        const float* x = val.images.data() + i * dim;
        double z = bias;
        for (int j = 0; j < dim; ++j) z += w[static_cast<size_t>(j)] * x[j];
        const int pred = z >= 0.0 ? 1 : 0;
        if (pred == val.labels[static_cast<size_t>(i)]) ++correct;
    }
    CHECK(static_cast<double>(correct) / val.count > 0.9);
}
