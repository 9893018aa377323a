#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mstl/eval.hpp"
#include "mstl/kmeans.hpp"
#include "mstl/optim.hpp"
#include "mstl/softlabel.hpp"

namespace mstl {

struct LabelingSpec {
    enum class Kind { hard, soft };
    Kind kind = Kind::hard;
    std::vector<int> grid = {2, 4, 8, 16};
    int folds = 10;
};

struct TransferStage {
    std::string name;
    std::string dataset;              // key into RunContext::datasets
    TaskKind task = TaskKind::binary; // hard labeling; soft stages derive multiclass(k_best)
    LabelingSpec labeling;
    FreezePolicy freeze;
    enum class HeadPolicy { keep, reinit };
    HeadPolicy head = HeadPolicy::reinit;
    float dropout_before_output = 0.0f;
    Hyperparams hyper;
    enum class InitFrom { random, previous_stage, checkpoint };
    InitFrom init_from = InitFrom::previous_stage;
    std::string init_checkpoint;           // InitFrom::checkpoint only
    std::string extractor_checkpoint;      // soft labeling; empty = the stage's own init weights
    std::array<double, 3> split_ratios = {0.8, 0.2, 0.0};
    bool stratified = true;
};

struct TransferPlan {
    std::vector<TransferStage> stages;           // executed in order; >= 2
    std::map<std::string, std::vector<int>> arms; // stage-index subsets, each ending at the last stage
    uint64_t seed = 0;
};

// Unique stage names, valid init sources, arms terminate at the target
// stage, soft stages have a usable extractor. Throws ConfigError.
void validate_plan(const TransferPlan& plan);

struct RunContext {
    std::map<std::string, DatasetManifest> datasets;
    ArchitectureSpec arch;
    int head_hidden = 64;
    std::string out_dir;     // empty: keep everything in memory
    std::string config_hash;
};

struct StageResult {
    std::string stage_name;
    std::string path_key; // stage names along this arm prefix, "/"-joined
    Checkpoint checkpoint;
    TrainLog log;
    std::optional<EvalReport> report; // binary stages only (multiclass has no ROC)
    std::string checkpoint_path;      // set when persisted
    TaskKind task = TaskKind::none;
    int classes = 0;
};

struct ArmResult {
    std::string arm;
    std::vector<StageResult> stages;
};

struct DomainDistanceReport {
    std::vector<std::string> stage_names; // plan order
    std::vector<std::vector<double>> pairwise;
    std::vector<double> to_target;   // distance(stage_i features, target features)
    bool strictly_decreasing = false;
    std::vector<std::string> flags;
};

struct MstlResult {
    std::vector<ArmResult> arms;
    DomainDistanceReport ordering;
};

// Diagonal-covariance Frechet-style distance between two feature sets:
// ||muA - muB||^2 + sum_d (vA + vB - 2*sqrt(vA*vB)). Symmetric, zero on
// identical sets; reductions run in fixed dimension order.
double domain_distance(const FeatureMatrix& a, const FeatureMatrix& b);

// Distances of every stage's dataset to the target dataset under the given
// feature extractor; reports (never fails) whether they strictly decrease.
DomainDistanceReport verify_ordering(const TransferPlan& plan, const RunContext& ctx,
                                     const ModelGraph& extractor);

// Executes every arm of the plan. Stages shared between arms (common path
// prefixes) run once and reuse the identical checkpoint. The final stage of
// each arm is evaluated on its held-out test split exactly once.
MstlResult run_mstl(const TransferPlan& plan, const RunContext& ctx);

// One stage in isolation (CLI `train`). init_checkpoint_path overrides the
// stage's init_from; stages declared init_from=previous need it.
StageResult run_single_stage(const TransferPlan& plan, const RunContext& ctx, int stage_index,
                             const std::string& init_checkpoint_path);

// JSON rendering of a train log / ordering report / k selection (stable key
// order).
std::string trainlog_to_json(const TrainLog& log);
std::string ordering_to_json(const DomainDistanceReport& report);
std::string selection_to_json(const KSelection& sel);

} // namespace mstl
