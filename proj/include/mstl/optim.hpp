#pragma once

#include "mstl/checkpoint.hpp"
#include "mstl/data.hpp"
#include "mstl/graph.hpp"

namespace mstl {

struct Hyperparams {
    float learning_rate = 0.01f;
    float momentum = 0.9f;
    int batch_size = 32;
    int epochs = 10;
    uint64_t seed = 0;
};

void validate_hyperparams(const Hyperparams& h);

struct EpochStats {
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
};

struct TrainLog {
    std::vector<EpochStats> epochs;
    int best_epoch = -1; // maximizes val_acc, ties to the earliest epoch

    double best_val_accuracy() const {
        return best_epoch < 0 ? 0.0 : epochs[static_cast<size_t>(best_epoch)].val_acc;
    }
};

// Classical momentum: v <- momentum*v - lr*g ; p <- p + v. Only trainable
// parameters move; velocity is a parallel array in parameter order.
void sgd_step(std::vector<NamedParam>& params, std::vector<std::vector<float>>& velocity, float lr,
              float momentum);

struct EvalStats {
    double loss = 0.0;
    double accuracy = 0.0;
};

// Deterministic eval-mode pass over a sample set (threshold 0.5 for binary,
// argmax for multiclass).
EvalStats evaluate(const ModelGraph& g, const SampleSet& set, TaskKind task, int batch_size);

// Eval-mode sigmoid outputs for a binary-head model, in sample order.
std::vector<float> predict_binary_scores(const ModelGraph& g, const SampleSet& set, int batch_size);

struct StageOutput {
    Checkpoint best;
    TrainLog log;
};

// Epoch/mini-batch SGD training with per-epoch seeded shuffles and
// best-validation-accuracy checkpoint selection. The graph is left at its
// final-epoch weights; the returned checkpoint holds the best epoch.
StageOutput train_stage(ModelGraph& g, const SampleSet& train, const SampleSet& val, TaskKind task,
                        const Hyperparams& hyper, const CheckpointMeta& meta_base);

} // namespace mstl
