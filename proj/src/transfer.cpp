#include "mstl/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include <json.hpp>

namespace mstl {

namespace {

using Json = nlohmann::ordered_json;

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string bytes_hash_hex(const std::vector<uint8_t>& bytes) {
    uint64_t h = 1469598103934665603ULL;
    for (uint8_t c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string sanitize(const std::string& path_key) {
    std::string out = path_key;
    for (auto& c : out)
        if (c == '/') c = '_';
    return out;
}

} // namespace

void validate_plan(const TransferPlan& plan) {
    if (plan.stages.size() < 2) throw ConfigError("plan: needs at least 2 stages");
    std::vector<std::string> names;
    for (const auto& s : plan.stages) {
        if (s.name.empty()) throw ConfigError("plan: stage names must not be empty");
        if (std::find(names.begin(), names.end(), s.name) != names.end())
            throw ConfigError("plan: duplicate stage name '" + s.name + "'");
        names.push_back(s.name);
        validate_hyperparams(s.hyper);
        if (s.freeze.fraction_shallowest_frozen < 0.0f || s.freeze.fraction_shallowest_frozen > 1.0f)
            throw ConfigError("plan: stage '" + s.name + "': freeze fraction must be in [0,1]");
        if (s.dropout_before_output < 0.0f || s.dropout_before_output >= 1.0f)
            throw ConfigError("plan: stage '" + s.name + "': dropout must be in [0,1)");
        if (s.labeling.kind == LabelingSpec::Kind::soft) {
            if (s.labeling.grid.empty())
                throw ConfigError("plan: stage '" + s.name + "': soft labeling needs a non-empty grid");
            if (s.labeling.folds < 2)
                throw ConfigError("plan: stage '" + s.name + "': soft labeling needs >= 2 folds");
            if (s.init_from == TransferStage::InitFrom::random && s.extractor_checkpoint.empty())
                throw ConfigError("plan: stage '" + s.name +
                                  "': soft labeling requires an extractor (previous-stage weights or an "
                                  "explicit checkpoint)");
        }
        if (s.init_from == TransferStage::InitFrom::checkpoint && s.init_checkpoint.empty())
            throw ConfigError("plan: stage '" + s.name + "': init_from checkpoint needs a path");
    }
    if (plan.stages[0].init_from == TransferStage::InitFrom::previous_stage)
        throw ConfigError("plan: first stage cannot init from a previous stage");

    for (const auto& [arm, indices] : plan.arms) {
        if (indices.empty()) throw ConfigError("plan: arm '" + arm + "' is empty");
        for (int i : indices)
            if (i < 0 || i >= static_cast<int>(plan.stages.size()))
                throw ConfigError("plan: arm '" + arm + "' references stage index " + std::to_string(i));
        if (indices.back() != static_cast<int>(plan.stages.size()) - 1)
            throw ConfigError("plan: arm '" + arm + "' must end at the final (target) stage");
        for (size_t i = 1; i < indices.size(); ++i)
            if (indices[i] <= indices[i - 1])
                throw ConfigError("plan: arm '" + arm + "' stage indices must be strictly increasing");
    }
}

double domain_distance(const FeatureMatrix& a, const FeatureMatrix& b) {
    validate_features(a);
    validate_features(b);
    if (a.dim != b.dim)
        throw InputError("domain_distance: feature dims differ (" + std::to_string(a.dim) + " vs " +
                         std::to_string(b.dim) + ")");
    const int dim = a.dim;
    double result = 0.0;
    for (int d = 0; d < dim; ++d) {
        double mean_a = 0.0, mean_b = 0.0;
        for (int64_t i = 0; i < a.rows; ++i) mean_a += a.row(i)[d];
        for (int64_t i = 0; i < b.rows; ++i) mean_b += b.row(i)[d];
        mean_a /= static_cast<double>(a.rows);
        mean_b /= static_cast<double>(b.rows);
        double var_a = 0.0, var_b = 0.0;
        for (int64_t i = 0; i < a.rows; ++i) {
            const double x = a.row(i)[d] - mean_a;
            var_a += x * x;
        }
        for (int64_t i = 0; i < b.rows; ++i) {
            const double x = b.row(i)[d] - mean_b;
            var_b += x * x;
        }
        var_a /= static_cast<double>(a.rows);
        var_b /= static_cast<double>(b.rows);
        const double md = mean_a - mean_b;
        // Grouped so the expression is bit-symmetric in (a, b).
        result += md * md + (var_a + var_b) - 2.0 * std::sqrt(var_a * var_b);
    }
    return result;
}

DomainDistanceReport verify_ordering(const TransferPlan& plan, const RunContext& ctx,
                                     const ModelGraph& extractor) {
    DomainDistanceReport report;
    std::vector<FeatureMatrix> features;
    for (const auto& stage : plan.stages) {
        auto it = ctx.datasets.find(stage.dataset);
        if (it == ctx.datasets.end())
            throw ResolutionError("verify_ordering: stage '" + stage.name + "' references unknown dataset '" +
                                  stage.dataset + "'");
        report.stage_names.push_back(stage.name);
        features.push_back(extract_features(extractor, it->second, extractor.spec.input_shape));
    }

    const size_t n = features.size();
    report.pairwise.assign(n, std::vector<double>(n, 0.0));
    for (size_t i = 0; i < n; ++i)
        for (size_t j = i + 1; j < n; ++j) {
            const double d = domain_distance(features[i], features[j]);
            report.pairwise[i][j] = d;
            report.pairwise[j][i] = d;
        }
    for (size_t i = 0; i < n; ++i) report.to_target.push_back(report.pairwise[i][n - 1]);

    report.strictly_decreasing = true;
    for (size_t i = 1; i < n; ++i) {
        if (!(report.to_target[i] < report.to_target[i - 1])) {
            report.strictly_decreasing = false;
            report.flags.push_back("ordering violation: distance(" + report.stage_names[i] +
                                   ", target) >= distance(" + report.stage_names[i - 1] + ", target)");
        }
    }
    bool all_zero = true;
    for (double d : report.to_target)
        if (d != 0.0) all_zero = false;
    if (all_zero) report.flags.push_back("all stage-to-target distances are zero; ordering is vacuous");
    return report;
}

namespace {

void configure_stage_head(ModelGraph& g, TaskKind task, int classes,
                          TransferStage::HeadPolicy policy, float dropout, int default_hidden,
                          uint64_t seed) {
    if (!g.has_head()) {
        attach_head(g, task, classes, default_hidden, dropout, seed);
        return;
    }
    const int hidden = g.head.hidden_units;
    const int want_classes = task == TaskKind::binary ? 1 : classes;
    const bool task_differs = g.head.task != task || g.head.classes != want_classes;
    const bool dropout_differs = g.head.dropout_rate != dropout;
    if (task_differs || dropout_differs) {
        std::vector<std::pair<std::string, std::vector<float>>> kept;
        if (policy == TransferStage::HeadPolicy::keep)
            for (const auto& p : g.params)
                if (p.head) kept.emplace_back(p.name, p.tensor->values);
        attach_head(g, task, classes, hidden, dropout, seed);
        for (const auto& [name, values] : kept) {
            const int idx = g.param_index(name);
            if (idx >= 0 && g.params[static_cast<size_t>(idx)].tensor->values.size() == values.size())
                g.params[static_cast<size_t>(idx)].tensor->values = values;
        }
    }
    if (policy == TransferStage::HeadPolicy::reinit) reinit_head(g, seed);
}

struct StageExecutor {
    const TransferPlan& plan;
    const RunContext& ctx;
    std::map<std::string, StageResult> cache; // by path key

    const StageResult* previous = nullptr;

    StageResult& run_path_stage(const std::string& path_key, int stage_index,
                                const StageResult* prev) {
        auto found = cache.find(path_key);
        if (found != cache.end()) return found->second;

        const TransferStage& stage = plan.stages[static_cast<size_t>(stage_index)];
        auto ds_it = ctx.datasets.find(stage.dataset);
        if (ds_it == ctx.datasets.end())
            throw ResolutionError("mstl: stage '" + stage.name + "' references unknown dataset '" +
                                  stage.dataset + "'");
        DatasetManifest dataset = ds_it->second;

        const uint64_t stage_seed =
            Rng::mix(plan.seed, stage.hyper.seed, static_cast<uint64_t>(stage_index));

        // Weights per init_from.
        ModelGraph g;
        switch (stage.init_from) {
            case TransferStage::InitFrom::random:
                g = build_model(ctx.arch, Rng::mix(stage_seed, 0xB01));
                break;
            case TransferStage::InitFrom::previous_stage:
                if (!prev)
                    throw ConfigError("mstl: stage '" + stage.name + "' needs a previous stage in this arm");
                g = restore_graph(prev->checkpoint);
                break;
            case TransferStage::InitFrom::checkpoint:
                g = restore_graph(load_checkpoint(stage.init_checkpoint));
                break;
        }

        // Labeling: hard uses the manifest labels; soft rebuilds them from
        // clustered features of a checkpointed base.
        TaskKind task = stage.task;
        int classes = static_cast<int>(dataset.classes.size());
        if (stage.labeling.kind == LabelingSpec::Kind::soft) {
            ModelGraph extractor;
            std::string extractor_id;
            if (!stage.extractor_checkpoint.empty()) {
                extractor = restore_graph(load_checkpoint(stage.extractor_checkpoint));
                extractor_id = stage.extractor_checkpoint;
            } else {
                if (stage.init_from == TransferStage::InitFrom::random)
                    throw ConfigError("mstl: stage '" + stage.name + "' has no extractor for soft labels");
                extractor = g; // the incoming weights, before this stage trains
                extractor_id = prev ? "stage:" + prev->path_key : "checkpoint:" + stage.init_checkpoint;
            }
            auto features = extract_features(extractor, dataset, ctx.arch.input_shape);
            auto soft = make_soft_labels(features, stage.labeling.grid, stage.labeling.folds,
                                         Rng::mix(plan.seed, 0x50F7, static_cast<uint64_t>(stage_index)),
                                         extractor_id);
            dataset = apply_soft_labels(dataset, soft.labels);
            task = TaskKind::multiclass;
            classes = soft.labels.k;
        } else {
            if (task == TaskKind::binary && classes != 2)
                throw ConfigError("mstl: stage '" + stage.name + "' is binary but dataset '" + dataset.name +
                                  "' has " + std::to_string(classes) + " classes");
            if (task == TaskKind::multiclass && classes < 2)
                throw ConfigError("mstl: stage '" + stage.name + "' needs >= 2 classes");
        }

        // Split depends only on (plan seed, dataset name): arms sharing a
        // dataset see the identical split.
        split_manifest(dataset, stage.split_ratios, Rng::mix(plan.seed, fnv1a(dataset.name)),
                       stage.stratified);

        configure_stage_head(g, task, classes, stage.head, stage.dropout_before_output,
                             ctx.head_hidden, Rng::mix(stage_seed, 0xEAD));
        apply_freeze(g, stage.freeze);

        auto train = load_split(dataset, Split::train, ctx.arch.input_shape);
        auto val = load_split(dataset, Split::val, ctx.arch.input_shape);

        Hyperparams hyper = stage.hyper;
        hyper.seed = stage_seed;
        CheckpointMeta meta;
        meta.stage = stage.name;
        meta.config_hash = ctx.config_hash;
        auto trained = train_stage(g, train, val, task, hyper, meta);

        StageResult result;
        result.stage_name = stage.name;
        result.path_key = path_key;
        result.checkpoint = std::move(trained.best);
        result.log = std::move(trained.log);
        result.task = task;
        result.classes = classes;

        if (!ctx.out_dir.empty()) {
            namespace fs = std::filesystem;
            const fs::path stages_dir = fs::path(ctx.out_dir) / "stages";
            fs::create_directories(stages_dir);
            result.checkpoint_path = (stages_dir / (sanitize(path_key) + ".ckpt")).string();
            save_checkpoint(result.checkpoint, result.checkpoint_path);
            write_text_file((stages_dir / (sanitize(path_key) + ".trainlog.json")).string(),
                            trainlog_to_json(result.log));
        }

        // Evaluate binary stages with the best checkpoint: the final stage
        // on its held-out test split, intermediate stages on validation.
        if (task == TaskKind::binary) {
            const bool is_final = stage_index == static_cast<int>(plan.stages.size()) - 1;
            const Split eval_split = is_final ? Split::test : Split::val;
            if (dataset.count(eval_split) > 0) {
                ModelGraph best_graph = restore_graph(result.checkpoint);
                auto eval_set = load_split(dataset, eval_split, ctx.arch.input_shape);
                auto scores = predict_binary_scores(best_graph, eval_set, hyper.batch_size);
                Provenance prov;
                prov.checkpoint_hash = result.checkpoint_path.empty()
                                           ? bytes_hash_hex(checkpoint_bytes(result.checkpoint))
                                           : file_hash_hex(result.checkpoint_path);
                prov.manifest_hash = manifest_hash(dataset);
                prov.seed = stage_seed;
                result.report = evaluate_binary(path_key, stage.name, split_name(eval_split), scores,
                                                eval_set.labels, 0.5f, prov);
                if (!ctx.out_dir.empty()) {
                    namespace fs = std::filesystem;
                    const fs::path reports_dir = fs::path(ctx.out_dir) / "reports";
                    fs::create_directories(reports_dir);
                    write_report(*result.report,
                                 (reports_dir / (sanitize(path_key) + ".report.json")).string());
                }
            }
        }

        auto [it, inserted] = cache.emplace(path_key, std::move(result));
        return it->second;
    }
};

} // namespace

MstlResult run_mstl(const TransferPlan& plan, const RunContext& ctx) {
    validate_plan(plan);
    for (const auto& stage : plan.stages)
        if (ctx.datasets.find(stage.dataset) == ctx.datasets.end())
            throw ResolutionError("mstl: stage '" + stage.name + "' references unknown dataset '" +
                                  stage.dataset + "'");

    std::map<std::string, std::vector<int>> arms = plan.arms;
    if (arms.empty()) {
        std::vector<int> all(plan.stages.size());
        for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
        arms["mstl"] = all;
        if (plan.stages.size() > 2)
            arms["baseline"] = {0, static_cast<int>(plan.stages.size()) - 1};
    }
    TransferPlan effective = plan;
    effective.arms = arms;
    validate_plan(effective);

    MstlResult result;
    StageExecutor executor{plan, ctx, {}};
    for (const auto& [arm_name, indices] : arms) {
        ArmResult arm;
        arm.arm = arm_name;
        const StageResult* prev = nullptr;
        std::string path_key;
        for (int idx : indices) {
            path_key = path_key.empty() ? plan.stages[static_cast<size_t>(idx)].name
                                        : path_key + "/" + plan.stages[static_cast<size_t>(idx)].name;
            const StageResult& r = executor.run_path_stage(path_key, idx, prev);
            arm.stages.push_back(r);
            prev = &executor.cache.at(path_key);
        }
        result.arms.push_back(std::move(arm));
    }

    // Eq-premise ordering check with the source-trained base as extractor.
    const std::string source_key = plan.stages[0].name;
    const StageResult& source = executor.cache.at(source_key);
    ModelGraph extractor = restore_graph(source.checkpoint);
    result.ordering = verify_ordering(plan, ctx, extractor);
    if (!ctx.out_dir.empty()) {
        namespace fs = std::filesystem;
        const fs::path reports_dir = fs::path(ctx.out_dir) / "reports";
        fs::create_directories(reports_dir);
        write_text_file((reports_dir / "ordering.json").string(), ordering_to_json(result.ordering));
    }
    return result;
}

StageResult run_single_stage(const TransferPlan& plan, const RunContext& ctx, int stage_index,
                             const std::string& init_checkpoint_path) {
    if (stage_index < 0 || stage_index >= static_cast<int>(plan.stages.size()))
        throw InputError("run_single_stage: stage index out of range");
    TransferPlan single = plan;
    TransferStage& stage = single.stages[static_cast<size_t>(stage_index)];
    if (!init_checkpoint_path.empty()) {
        stage.init_from = TransferStage::InitFrom::checkpoint;
        stage.init_checkpoint = init_checkpoint_path;
    } else if (stage.init_from == TransferStage::InitFrom::previous_stage) {
        throw ConfigError("train: stage '" + stage.name +
                          "' initializes from the previous stage; pass --init <checkpoint>");
    }
    StageExecutor executor{single, ctx, {}};
    StageResult result = executor.run_path_stage(stage.name, stage_index, nullptr);
    return result;
}

std::string trainlog_to_json(const TrainLog& log) {
    Json j;
    Json epochs = Json::array();
    for (const auto& e : log.epochs) {
        Json row;
        row["train_loss"] = e.train_loss;
        row["train_acc"] = e.train_acc;
        row["val_loss"] = e.val_loss;
        row["val_acc"] = e.val_acc;
        epochs.push_back(std::move(row));
    }
    j["epochs"] = std::move(epochs);
    j["best_epoch"] = log.best_epoch;
    return j.dump(2) + "\n";
}

std::string ordering_to_json(const DomainDistanceReport& report) {
    Json j;
    j["stages"] = report.stage_names;
    j["pairwise"] = report.pairwise;
    j["to_target"] = report.to_target;
    j["strictly_decreasing"] = report.strictly_decreasing;
    j["flags"] = report.flags;
    return j.dump(2) + "\n";
}

std::string selection_to_json(const KSelection& sel) {
    Json j;
    j["criterion"] = sel.criterion;
    j["folds"] = sel.folds;
    j["seed"] = sel.seed;
    Json scores = Json::array();
    for (const auto& [k, score] : sel.scores) scores.push_back(Json::array({k, score}));
    j["scores"] = std::move(scores);
    j["k_best"] = sel.k_best;
    return j.dump(2) + "\n";
}

} // namespace mstl
