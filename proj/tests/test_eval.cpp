#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mstl/eval.hpp"
#include "mstl/reference.hpp"
#include "mstl/rng.hpp"

using namespace mstl;

TEST_CASE("confusion hand cases") {
    { // perfect classifier
        auto cm = confusion({1.0f, 1.0f, 0.0f, 0.0f}, {1, 1, 0, 0}, 0.5f);
        CHECK(cm.fp == 0);
        CHECK(cm.fn == 0);
        CHECK(cm.tp == 2);
        CHECK(cm.tn == 2);
    }
    { // threshold 0: everything predicted positive
        auto cm = confusion({0.1f, 0.9f, 0.4f}, {1, 0, 0}, 0.0f);
        CHECK(cm.tn == 0);
        CHECK(cm.fn == 0);
        CHECK(cm.tp == 1);
        CHECK(cm.fp == 2);
    }
    { // the spec hand case
        auto cm = confusion({0.9f, 0.4f, 0.6f, 0.2f}, {1, 1, 0, 0}, 0.5f);
        CHECK(cm.tp == 1);
        CHECK(cm.fn == 1);
        CHECK(cm.fp == 1);
        CHECK(cm.tn == 1);
    }
    CHECK_THROWS_AS(confusion({}, {}, 0.5f), InputError);
}

TEST_CASE("metrics hand cases and flags") {
    auto m = metrics_of({1, 1, 1, 1});
    CHECK(m.accuracy == doctest::Approx(0.5));
    CHECK(m.precision == doctest::Approx(0.5));
    CHECK(m.recall == doctest::Approx(0.5));
    CHECK(m.f1 == doctest::Approx(0.5));
    CHECK_FALSE(m.flags.precision_undefined);

    auto perfect = metrics_of({3, 0, 4, 0});
    CHECK(perfect.accuracy == 1.0);
    CHECK(perfect.precision == 1.0);
    CHECK(perfect.recall == 1.0);
    CHECK(perfect.f1 == 1.0);

    // tp=0, fp=0: precision and f1 flagged zero.
    auto degenerate = metrics_of({0, 0, 3, 2});
    CHECK(degenerate.precision == 0.0);
    CHECK(degenerate.flags.precision_undefined);
    CHECK(degenerate.f1 == 0.0);
    CHECK(degenerate.flags.f1_undefined);
    CHECK_FALSE(degenerate.flags.recall_undefined);
}

TEST_CASE("roc_auc hand case and edge cases") {
    auto [roc, auc] = roc_auc({0.9f, 0.4f, 0.6f, 0.2f}, {1, 1, 0, 0});
    CHECK(auc == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(roc.front().fpr == 0.0);
    CHECK(roc.front().tpr == 0.0);
    CHECK(roc.back().fpr == 1.0);
    CHECK(roc.back().tpr == 1.0);

    auto [roc2, auc2] = roc_auc({0.9f, 0.8f, 0.2f, 0.1f}, {1, 1, 0, 0});
    CHECK(auc2 == doctest::Approx(1.0));

    CHECK_THROWS_AS(roc_auc({0.5f, 0.6f}, {1, 1}), InputError);

    // Permutation null: shuffled labels give AUC 0.5 +- 0.02 at n=10000.
    Rng rng(12345);
    std::vector<float> scores(10000);
    std::vector<int> labels(10000);
    for (auto& s : scores) s = rng.uniform();
    for (auto& l : labels) l = static_cast<int>(rng.below(2));
    auto [roc3, auc3] = roc_auc(scores, labels);
    CHECK(std::abs(auc3 - 0.5) < 0.02);
}

TEST_CASE("trapezoidal auc matches the pairwise oracle, heavy ties included") {
    Rng rng(999);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 4 + static_cast<int>(rng.below(40));
        std::vector<float> scores(static_cast<size_t>(n));
        std::vector<int> labels(static_cast<size_t>(n));
        // Quantized scores force heavy ties.
        const int levels = 2 + static_cast<int>(rng.below(6));
        for (auto& s : scores) s = static_cast<float>(rng.below(static_cast<uint64_t>(levels))) / levels;
        bool has_pos = false, has_neg = false;
        for (auto& l : labels) {
            l = static_cast<int>(rng.below(2));
            (l ? has_pos : has_neg) = true;
        }
        if (!has_pos) labels[0] = 1;
        if (!has_neg) labels[1 % n] = 0;
        auto [roc, auc] = roc_auc(scores, labels);
        const double oracle = reference::auc_pairwise(scores, labels);
        CHECK(std::abs(auc - oracle) < 1e-9);
        // ROC points are monotone non-decreasing in both coordinates.
        for (size_t i = 1; i < roc.size(); ++i) {
            CHECK(roc[i].fpr >= roc[i - 1].fpr);
            CHECK(roc[i].tpr >= roc[i - 1].tpr);
        }
    }
}

namespace {

EvalReport sample_report(const std::string& id, double scale) {
    std::vector<float> scores = {0.9f, 0.4f, 0.6f, 0.2f};
    for (auto& s : scores) s = static_cast<float>(s * scale);
    Provenance prov{"ckpt-" + id, "manifest-shared", 7};
    return evaluate_binary(id, "target", "test", scores, {1, 1, 0, 0}, 0.5f, prov);
}

} // namespace

TEST_CASE("compare_arms deltas and guards") {
    auto base = sample_report("baseline", 1.0);
    auto cand = sample_report("mstl", 1.0);
    auto t = compare_arms(base, cand);
    for (const auto& row : t.rows) CHECK(row.delta == 0.0);

    // auc 0.96 vs baseline 0.91: delta +0.05.
    auto a = base;
    a.auc = 0.91;
    auto b = cand;
    b.auc = 0.96;
    auto t2 = compare_arms(a, b);
    CHECK(t2.rows.back().metric == "auc");
    CHECK(t2.rows.back().delta == doctest::Approx(0.05));

    // Antisymmetric under swapping baseline and candidate.
    auto t3 = compare_arms(b, a);
    CHECK(t3.rows.back().delta == doctest::Approx(-t2.rows.back().delta));

    auto alien = sample_report("other", 1.0);
    alien.provenance.manifest_hash = "manifest-different";
    CHECK_THROWS_AS(compare_arms(base, alien), ComparisonError);
    auto other_split = sample_report("x", 1.0);
    other_split.split = "val";
    CHECK_THROWS_AS(compare_arms(base, other_split), ComparisonError);
}

TEST_CASE("report emit round trip, table, and svg structure") {
    auto dir = std::filesystem::temp_directory_path() / "mstl_eval_test";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);

    auto r = sample_report("demo", 1.0);
    const auto path = (dir / "report.json").string();
    write_report(r, path);
    auto back = read_report(path);
    CHECK(report_to_json(back) == report_to_json(r));
    CHECK(back.model_id == r.model_id);
    CHECK(back.cm.tp == r.cm.tp);
    CHECK(back.auc == r.auc);
    CHECK(back.roc.size() == r.roc.size());
    CHECK(back.provenance.checkpoint_hash == r.provenance.checkpoint_hash);

    // Table text for the hand case holds "0.500" for all four metrics.
    const std::string table = render_table({r});
    size_t count = 0, pos = 0;
    while ((pos = table.find("0.500", pos)) != std::string::npos) {
        ++count;
        pos += 5;
    }
    CHECK(count >= 4);

    // Two-report overlay: two roc paths, two legend entries.
    auto r2 = sample_report("demo2", 0.9);
    const std::string svg = render_roc_svg({r, r2});
    size_t paths = 0;
    pos = 0;
    while ((pos = svg.find("class=\"roc\"", pos)) != std::string::npos) {
        ++paths;
        pos += 10;
    }
    size_t legends = 0;
    pos = 0;
    while ((pos = svg.find("class=\"legend\"", pos)) != std::string::npos) {
        ++legends;
        pos += 10;
    }
    CHECK(paths == 2);
    CHECK(legends == 2);
    CHECK(svg.find("AUC=0.750") != std::string::npos);

    std::filesystem::remove_all(dir);
}
