#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <omp.h>

#include <CLI11.hpp>

#include "mstl/config.hpp"

namespace fs = std::filesystem;
using namespace mstl;

namespace {

// Shared flags for commands that execute part of the pipeline.
struct CommonOpts {
    std::string config_path;
    uint64_t seed = 0;
    bool seed_set = false;
    std::string out_override;
    bool force = false;
    int jobs = 0;
    std::string arm;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required = true) {
    auto* c = cmd->add_option("--config", opts.config_path, "experiment config file");
    if (config_required) c->required();
    cmd->add_option("--seed", opts.seed, "override the config seed")->each([&](const std::string&) {
        opts.seed_set = true;
    });
    cmd->add_option("--out", opts.out_override, "override the config output_dir");
    cmd->add_flag("--force", opts.force, "allow writing into an existing run directory");
    cmd->add_option("--jobs", opts.jobs, "cap OpenMP worker threads");
    cmd->add_option("--arm", opts.arm, "run only the named comparison arm");
}

void apply_jobs(int jobs) {
    if (jobs > 0) omp_set_num_threads(jobs);
}

ExperimentConfig load_effective_config(const CommonOpts& opts) {
    auto cfg = load_config(opts.config_path);
    if (opts.seed_set) {
        cfg.seed = opts.seed;
        cfg.plan.seed = opts.seed;
    }
    if (!opts.out_override.empty()) cfg.output_dir = opts.out_override;
    return cfg;
}

// Run directories resolve against MSTL_OUT_ROOT when relative.
fs::path resolve_run_dir(const std::string& output_dir) {
    fs::path p(output_dir);
    if (p.is_absolute()) return p;
    if (const char* root = std::getenv("MSTL_OUT_ROOT")) return fs::path(root) / p;
    return p;
}

fs::path prepare_run_dir(const std::string& output_dir, bool force) {
    const fs::path dir = resolve_run_dir(output_dir);
    if (fs::exists(dir) && !fs::is_empty(dir) && !force)
        throw IoError("run directory " + dir.string() + " already exists; pass --force to reuse it");
    fs::create_directories(dir);
    return dir;
}

void write_produced_files(const fs::path& run_dir) {
    std::vector<std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
        if (!entry.is_regular_file()) continue;
        const auto rel = fs::relative(entry.path(), run_dir).generic_string();
        if (rel == "produced_files.txt") continue;
        files.push_back(rel);
    }
    std::sort(files.begin(), files.end());
    std::string text;
    for (const auto& f : files) text += f + "\n";
    write_text_file((run_dir / "produced_files.txt").string(), text);
}

int cmd_validate(const CommonOpts& opts) {
    auto cfg = load_effective_config(opts);
    validate_config(cfg);
    // Manifest-backed datasets must also resolve their sample refs.
    for (const auto& [name, path] : cfg.manifests) {
        const fs::path p = fs::path(path).is_absolute() ? fs::path(path) : fs::path(cfg.base_dir) / path;
        verify_refs(load_manifest(p.string()));
    }
    std::printf("config OK: %zu stages, %zu arms, seed %llu\n", cfg.plan.stages.size(),
                cfg.plan.arms.size(), static_cast<unsigned long long>(cfg.seed));
    return 0;
}

int cmd_synth(const CommonOpts& opts) {
    auto cfg = load_effective_config(opts);
    validate_config(cfg);
    if (!cfg.synthetic) throw ConfigError("synth: config has no datasets.synthetic section");
    const fs::path run_dir = prepare_run_dir(cfg.output_dir, opts.force);
    auto cfg_synth = *cfg.synthetic;
    cfg_synth.seed = Rng::mix(cfg.seed, 0xDA7A);
    auto manifests = gen_synthetic_domains_to_dir(cfg_synth, (run_dir / cfg.synthetic_dir).string());
    for (const auto& m : manifests)
        std::printf("generated %s: %zu samples, %zu classes\n", m.name.c_str(), m.entries.size(),
                    m.classes.size());
    write_produced_files(run_dir);
    return 0;
}

int cmd_split(const std::string& manifest_path, const std::string& out_path,
              const std::string& ratio_text, uint64_t seed, bool unstratified) {
    auto m = load_manifest(manifest_path);
    std::array<double, 3> ratios{};
    if (std::sscanf(ratio_text.c_str(), "%lf,%lf,%lf", &ratios[0], &ratios[1], &ratios[2]) != 3)
        throw InputError("split: --ratios must be train,val,test (e.g. 0.6,0.15,0.25)");
    split_manifest(m, ratios, seed, !unstratified);
    save_manifest(m, out_path);
    std::printf("split %s: train %lld, val %lld, test %lld -> %s\n", m.name.c_str(),
                static_cast<long long>(m.count(Split::train)), static_cast<long long>(m.count(Split::val)),
                static_cast<long long>(m.count(Split::test)), out_path.c_str());
    return 0;
}

RunContext make_run_context(const ExperimentConfig& cfg, const fs::path& run_dir, bool persist) {
    RunContext ctx;
    ExperimentConfig synth_cfg = cfg;
    if (synth_cfg.synthetic) synth_cfg.synthetic->seed = Rng::mix(cfg.seed, 0xDA7A);
    ctx.datasets = resolve_datasets(synth_cfg, persist, run_dir.string());
    ctx.arch = cfg.arch;
    ctx.head_hidden = cfg.head_hidden;
    ctx.out_dir = run_dir.string();
    ctx.config_hash = cfg.config_hash;
    return ctx;
}

int find_stage(const TransferPlan& plan, const std::string& name) {
    for (size_t i = 0; i < plan.stages.size(); ++i)
        if (plan.stages[i].name == name) return static_cast<int>(i);
    throw ResolutionError("no stage named '" + name + "' in the plan");
}

int cmd_cluster(const CommonOpts& opts, const std::string& stage_name, const std::string& extractor) {
    auto cfg = load_effective_config(opts);
    validate_config(cfg);
    const int idx = find_stage(cfg.plan, stage_name);
    const TransferStage& stage = cfg.plan.stages[static_cast<size_t>(idx)];
    if (stage.labeling.kind != LabelingSpec::Kind::soft)
        throw ConfigError("cluster: stage '" + stage_name + "' does not use soft labeling");
    std::string extractor_path = !extractor.empty() ? extractor : stage.extractor_checkpoint;
    if (extractor_path.empty())
        throw ConfigError("cluster: stage '" + stage_name +
                          "' has no extractor checkpoint; pass --extractor");

    const fs::path run_dir = prepare_run_dir(cfg.output_dir, opts.force);
    auto ctx = make_run_context(cfg, run_dir, true);
    auto ds_it = ctx.datasets.find(stage.dataset);
    if (ds_it == ctx.datasets.end())
        throw ResolutionError("cluster: unknown dataset '" + stage.dataset + "'");

    ModelGraph base = restore_graph(load_checkpoint(extractor_path));
    auto features = extract_features(base, ds_it->second, cfg.arch.input_shape);
    auto soft = make_soft_labels(features, stage.labeling.grid, stage.labeling.folds,
                                 Rng::mix(cfg.seed, 0x50F7, static_cast<uint64_t>(idx)), extractor_path);
    auto derived = apply_soft_labels(ds_it->second, soft.labels);

    const fs::path cluster_dir = run_dir / "cluster";
    fs::create_directories(cluster_dir);
    save_manifest(derived, (cluster_dir / (stage.dataset + "-soft.manifest")).string());
    write_text_file((cluster_dir / "selection.json").string(), selection_to_json(soft.selection));
    std::printf("soft labels: k=%d over %lld samples (criterion %s)\n", soft.labels.k,
                static_cast<long long>(features.rows), soft.selection.criterion.c_str());
    write_produced_files(run_dir);
    return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& stage_name, const std::string& init_path) {
    auto cfg = load_effective_config(opts);
    validate_config(cfg);
    const int idx = find_stage(cfg.plan, stage_name);
    const fs::path run_dir = prepare_run_dir(cfg.output_dir, opts.force);
    auto ctx = make_run_context(cfg, run_dir, true);
    auto result = run_single_stage(cfg.plan, ctx, idx, init_path);
    std::printf("stage '%s': best epoch %d, val accuracy %.4f\n", stage_name.c_str(), result.log.best_epoch,
                result.log.best_val_accuracy());
    if (result.report) std::printf("%s", render_table({*result.report}).c_str());
    write_produced_files(run_dir);
    return 0;
}

int cmd_mstl(const CommonOpts& opts) {
    auto cfg = load_effective_config(opts);
    validate_config(cfg);
    if (!opts.arm.empty()) {
        auto it = cfg.plan.arms.find(opts.arm);
        if (it == cfg.plan.arms.end()) throw ResolutionError("mstl: no arm named '" + opts.arm + "'");
        std::map<std::string, std::vector<int>> only;
        only[opts.arm] = it->second;
        cfg.plan.arms = std::move(only);
    }
    const fs::path run_dir = prepare_run_dir(cfg.output_dir, opts.force);
    auto ctx = make_run_context(cfg, run_dir, true);
    auto result = run_mstl(cfg.plan, ctx);

    // Per-arm summaries plus the baseline comparison when both arms exist.
    std::vector<EvalReport> final_reports;
    for (const auto& arm : result.arms) {
        const auto& last = arm.stages.back();
        std::printf("arm %-10s best val acc per stage:", arm.arm.c_str());
        for (const auto& s : arm.stages) std::printf(" %s=%.3f", s.stage_name.c_str(), s.log.best_val_accuracy());
        std::printf("\n");
        if (last.report) final_reports.push_back(*last.report);
    }
    const fs::path reports_dir = run_dir / "reports";
    fs::create_directories(reports_dir);
    if (!final_reports.empty()) {
        write_text_file((reports_dir / "summary.txt").string(), render_table(final_reports));
        write_text_file((reports_dir / "roc.svg").string(), render_roc_svg(final_reports));
        std::printf("%s", render_table(final_reports).c_str());
    }
    const ArmResult* baseline = nullptr;
    for (const auto& arm : result.arms)
        if (arm.arm == "baseline") baseline = &arm;
    if (baseline && baseline->stages.back().report) {
        for (const auto& arm : result.arms) {
            if (arm.arm == "baseline" || !arm.stages.back().report) continue;
            auto table = compare_arms(*baseline->stages.back().report, *arm.stages.back().report);
            const std::string text = render_comparison(table);
            write_text_file((reports_dir / ("compare_" + arm.arm + ".txt")).string(), text);
            std::printf("\n%s", text.c_str());
        }
    }
    std::printf("ordering: %s\n", result.ordering.strictly_decreasing
                                      ? "stage-to-target distances strictly decreasing"
                                      : "ordering premise violated (see reports/ordering.json)");
    write_produced_files(run_dir);
    return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& manifest_path,
             const std::string& split, const std::string& out_path, int batch) {
    auto ckpt = load_checkpoint(checkpoint_path);
    auto graph = restore_graph(ckpt);
    if (graph.head.task != TaskKind::binary)
        throw ConfigError("eval: checkpoint head is not binary; ROC evaluation needs a binary task");
    auto manifest = load_manifest(manifest_path);
    const Split s = split_from_name(split);
    auto set = load_split(manifest, s, graph.spec.input_shape);
    auto scores = predict_binary_scores(graph, set, batch);
    Provenance prov;
    prov.checkpoint_hash = file_hash_hex(checkpoint_path);
    prov.manifest_hash = manifest_hash(manifest);
    prov.seed = ckpt.meta.seed;
    auto report = evaluate_binary(fs::path(checkpoint_path).stem().string(), ckpt.meta.stage, split,
                                  scores, set.labels, 0.5f, prov);
    if (!out_path.empty()) {
        write_report(report, out_path);
        std::printf("report written to %s\n", out_path.c_str());
    }
    std::printf("%s", render_table({report}).c_str());
    return 0;
}

int cmd_report(const std::vector<std::string>& report_paths, const std::string& table_path,
               const std::string& plot_path) {
    std::vector<EvalReport> reports;
    for (const auto& p : report_paths) reports.push_back(read_report(p));
    const std::string table = render_table(reports);
    if (!table_path.empty()) write_text_file(table_path, table);
    if (!plot_path.empty()) write_text_file(plot_path, render_roc_svg(reports));
    std::printf("%s", table.c_str());
    return 0;
}

int cmd_compare(const std::string& baseline_path, const std::string& candidate_path,
                const std::string& out_dir) {
    auto baseline = read_report(baseline_path);
    auto candidate = read_report(candidate_path);
    auto table = compare_arms(baseline, candidate);
    const std::string text = render_comparison(table);
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_text_file((fs::path(out_dir) / "compare.txt").string(), text);
        write_text_file((fs::path(out_dir) / "roc.svg").string(), render_roc_svg({baseline, candidate}));
    }
    std::printf("%s", text.c_str());
    return 0;
}

int exit_code_for(const Error& e) {
    const std::string& kind = e.kind();
    if (kind == "config-error") return 2;
    if (kind == "resolution-error") return 3;
    if (kind == "data-error" || kind == "format-error") return 4;
    if (kind == "numeric-error") return 5;
    if (kind == "input-error" || kind == "dimension-error") return 6;
    if (kind == "io-error") return 7;
    if (kind == "comparison-error") return 8;
    return 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-source transfer learning workbench"};
    app.require_subcommand(1);

    CommonOpts validate_opts, synth_opts, cluster_opts, train_opts, mstl_opts;

    auto* validate = app.add_subcommand("validate", "check a config and its references; writes nothing");
    add_common(validate, validate_opts);

    auto* synth = app.add_subcommand("synth", "generate the synthetic domain datasets");
    add_common(synth, synth_opts);

    std::string split_manifest_path, split_out, split_ratios = "0.6,0.15,0.25";
    uint64_t split_seed = 0;
    bool split_unstratified = false;
    auto* split = app.add_subcommand("split", "assign train/val/test splits in a manifest");
    split->add_option("--manifest", split_manifest_path, "input manifest")->required();
    split->add_option("--out", split_out, "output manifest path")->required();
    split->add_option("--ratios", split_ratios, "train,val,test fractions");
    split->add_option("--seed", split_seed, "shuffle seed");
    split->add_flag("--unstratified", split_unstratified, "split without per-class stratification");

    std::string cluster_stage, cluster_extractor;
    auto* cluster = app.add_subcommand("cluster", "run the unsupervised soft-label pipeline for a stage");
    add_common(cluster, cluster_opts);
    cluster->add_option("--stage", cluster_stage, "soft-labeled stage name")->required();
    cluster->add_option("--extractor", cluster_extractor, "feature extractor checkpoint");

    std::string train_stage_name, train_init;
    auto* train = app.add_subcommand("train", "train a single stage of the plan");
    add_common(train, train_opts);
    train->add_option("--stage", train_stage_name, "stage name")->required();
    train->add_option("--init", train_init, "initial weights checkpoint");

    auto* mstl = app.add_subcommand("mstl", "run the full multi-stage plan with all arms");
    add_common(mstl, mstl_opts);

    std::string eval_ckpt, eval_manifest, eval_split = "test", eval_out;
    int eval_batch = 32;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest split");
    eval->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
    eval->add_option("--manifest", eval_manifest, "dataset manifest with splits")->required();
    eval->add_option("--split", eval_split, "split to evaluate (train/val/test)");
    eval->add_option("--out", eval_out, "write the structured report here");
    eval->add_option("--batch", eval_batch, "evaluation batch size");

    std::vector<std::string> report_paths;
    std::string report_table, report_plot;
    auto* report = app.add_subcommand("report", "render structured reports as a table and ROC plot");
    report->add_option("--report", report_paths, "structured report file(s)")->required();
    report->add_option("--table", report_table, "write the text table here");
    report->add_option("--plot", report_plot, "write the ROC SVG here");

    std::string cmp_baseline, cmp_candidate, cmp_out;
    auto* compare = app.add_subcommand("compare", "delta table of a candidate report vs a baseline");
    compare->add_option("--baseline", cmp_baseline, "baseline report")->required();
    compare->add_option("--candidate", cmp_candidate, "candidate report")->required();
    compare->add_option("--out", cmp_out, "directory for compare.txt and roc.svg");

    CLI11_PARSE(app, argc, argv);

    try {
        if (validate->parsed()) {
            apply_jobs(validate_opts.jobs);
            return cmd_validate(validate_opts);
        }
        if (synth->parsed()) {
            apply_jobs(synth_opts.jobs);
            return cmd_synth(synth_opts);
        }
        if (split->parsed())
            return cmd_split(split_manifest_path, split_out, split_ratios, split_seed, split_unstratified);
        if (cluster->parsed()) {
            apply_jobs(cluster_opts.jobs);
            return cmd_cluster(cluster_opts, cluster_stage, cluster_extractor);
        }
        if (train->parsed()) {
            apply_jobs(train_opts.jobs);
            return cmd_train(train_opts, train_stage_name, train_init);
        }
        if (mstl->parsed()) {
            apply_jobs(mstl_opts.jobs);
            return cmd_mstl(mstl_opts);
        }
        if (eval->parsed()) return cmd_eval(eval_ckpt, eval_manifest, eval_split, eval_out, eval_batch);
        if (report->parsed()) return cmd_report(report_paths, report_table, report_plot);
        if (compare->parsed()) return cmd_compare(cmp_baseline, cmp_candidate, cmp_out);
    } catch (const Error& e) {
        std::fprintf(stderr, "%s: %s\n", e.kind().c_str(), e.what());
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal-error: %s\n", e.what());
        return 1;
    }
    return 0;
}
