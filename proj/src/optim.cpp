#include "mstl/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mstl/ops.hpp"

namespace mstl {

void validate_hyperparams(const Hyperparams& h) {
    if (!(h.learning_rate > 0.0f)) throw ConfigError("hyperparams: learning_rate must be > 0");
    if (h.momentum < 0.0f || h.momentum >= 1.0f) throw ConfigError("hyperparams: momentum must be in [0,1)");
    if (h.batch_size < 1) throw ConfigError("hyperparams: batch_size must be positive");
    if (h.epochs < 1) throw ConfigError("hyperparams: epochs must be positive");
}

void sgd_step(std::vector<NamedParam>& params, std::vector<std::vector<float>>& velocity, float lr,
              float momentum) {
    if (velocity.size() != params.size()) velocity.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        NamedParam& p = params[i];
        if (!p.trainable) continue;
        auto& v = velocity[i];
        if (v.size() != p.tensor->values.size()) v.assign(p.tensor->values.size(), 0.0f);
        const bool has_grad = p.tensor->grad.size() == p.tensor->values.size();
        for (size_t k = 0; k < v.size(); ++k) {
            const float g = has_grad ? p.tensor->grad[k] : 0.0f;
            v[k] = momentum * v[k] - lr * g;
            const float updated = p.tensor->values[k] + v[k];
            if (!std::isfinite(updated))
                throw NumericError("sgd_step: non-finite update for '" + p.name + "' at index " +
                                   std::to_string(k));
            p.tensor->values[k] = updated;
        }
    }
}

namespace {

struct BatchResult {
    double loss_sum = 0.0; // sum over samples
    int64_t correct = 0;
};

// Scores one forward output against labels; probs is post-activation.
BatchResult score_batch(const TensorPtr& probs, const std::vector<int>& labels, TaskKind task,
                        double loss, int64_t batch_n) {
    BatchResult r;
    r.loss_sum = loss * static_cast<double>(batch_n);
    if (task == TaskKind::binary) {
        for (int64_t i = 0; i < batch_n; ++i) {
            const int pred = probs->values[static_cast<size_t>(i)] >= 0.5f ? 1 : 0;
            if (pred == labels[static_cast<size_t>(i)]) ++r.correct;
        }
    } else {
        const int k = probs->shape[1];
        for (int64_t i = 0; i < batch_n; ++i) {
            const float* row = probs->values.data() + i * k;
            int arg = 0;
            for (int j = 1; j < k; ++j)
                if (row[j] > row[arg]) arg = j;
            if (arg == labels[static_cast<size_t>(i)]) ++r.correct;
        }
    }
    return r;
}

TensorPtr loss_of(const TensorPtr& probs, const std::vector<int>& labels, TaskKind task) {
    if (task == TaskKind::binary) {
        std::vector<float> y(labels.size());
        for (size_t i = 0; i < labels.size(); ++i) y[i] = static_cast<float>(labels[i]);
        return bce(probs, make_tensor({static_cast<int>(labels.size()), 1}, std::move(y)));
    }
    return sparse_ce(probs, labels);
}

void check_task(const ModelGraph& g, const SampleSet& set, TaskKind task, const char* what) {
    if (task == TaskKind::none) throw ConfigError(std::string(what) + ": task must be binary or multiclass");
    if (!g.has_head() || g.head.task != task)
        throw ConfigError(std::string(what) + ": graph head task is " + task_name(g.head.task) +
                          " but data task is " + task_name(task));
    const int arity = task == TaskKind::binary ? 2 : g.head.classes;
    for (int64_t i = 0; i < set.count; ++i) {
        const int label = set.labels[static_cast<size_t>(i)];
        if (label < 0 || label >= arity)
            throw DataError(std::string(what) + ": label " + std::to_string(label) + " at sample " +
                            std::to_string(i) + " outside task arity " + std::to_string(arity));
    }
}

} // namespace

EvalStats evaluate(const ModelGraph& g, const SampleSet& set, TaskKind task, int batch_size) {
    check_task(g, set, task, "evaluate");
    if (set.count == 0) throw DataError("evaluate: empty sample set");
    EvalStats stats;
    int64_t correct = 0;
    for (int64_t start = 0; start < set.count; start += batch_size) {
        const int64_t end = std::min(set.count, start + batch_size);
        std::vector<int64_t> idx(static_cast<size_t>(end - start));
        std::iota(idx.begin(), idx.end(), start);
        auto x = set.batch(idx);
        auto probs = forward(g, x, Mode::eval);
        std::vector<int> labels(set.labels.begin() + start, set.labels.begin() + end);
        NoGradGuard no_grad;
        auto loss = loss_of(probs, labels, task);
        auto r = score_batch(probs, labels, task, loss->values[0], end - start);
        stats.loss += r.loss_sum;
        correct += r.correct;
    }
    stats.loss /= static_cast<double>(set.count);
    stats.accuracy = static_cast<double>(correct) / static_cast<double>(set.count);
    return stats;
}

std::vector<float> predict_binary_scores(const ModelGraph& g, const SampleSet& set, int batch_size) {
    if (g.head.task != TaskKind::binary) throw ConfigError("predict_binary_scores: head is not binary");
    std::vector<float> scores;
    scores.reserve(static_cast<size_t>(set.count));
    for (int64_t start = 0; start < set.count; start += batch_size) {
        const int64_t end = std::min(set.count, start + batch_size);
        std::vector<int64_t> idx(static_cast<size_t>(end - start));
        std::iota(idx.begin(), idx.end(), start);
        auto probs = forward(g, set.batch(idx), Mode::eval);
        scores.insert(scores.end(), probs->values.begin(), probs->values.end());
    }
    return scores;
}

StageOutput train_stage(ModelGraph& g, const SampleSet& train, const SampleSet& val, TaskKind task,
                        const Hyperparams& hyper, const CheckpointMeta& meta_base) {
    validate_hyperparams(hyper);
    if (train.count == 0) throw DataError("train_stage: empty train split");
    if (val.count == 0) throw DataError("train_stage: empty validation split");
    check_task(g, train, task, "train_stage");
    check_task(g, val, task, "train_stage");

    std::vector<std::vector<float>> velocity(g.params.size());
    TrainLog log;
    Checkpoint best;
    double best_val_acc = -1.0;

    std::vector<int64_t> order(static_cast<size_t>(train.count));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        Rng shuffle_rng(Rng::mix(hyper.seed, 0xA11CE5, static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double train_loss_sum = 0.0;
        int64_t train_correct = 0;
        int batch_index = 0;
        for (int64_t start = 0; start < train.count; start += hyper.batch_size, ++batch_index) {
            const int64_t end = std::min(train.count, start + hyper.batch_size);
            std::vector<int64_t> idx(order.begin() + start, order.begin() + end);
            std::vector<int> labels(idx.size());
            for (size_t i = 0; i < idx.size(); ++i) labels[i] = train.labels[static_cast<size_t>(idx[i])];
            try {
                auto x = train.batch(idx);
                Rng dropout_rng(Rng::mix(hyper.seed, 0xD209,
                                         static_cast<uint64_t>(epoch) * 1000003ULL +
                                             static_cast<uint64_t>(batch_index)));
                auto probs = forward(g, x, Mode::train, &dropout_rng);
                auto loss = loss_of(probs, labels, task);
                for (auto& p : g.params) p.tensor->zero_grad();
                backward(loss);
                sgd_step(g.params, velocity, hyper.learning_rate, hyper.momentum);
                auto r = score_batch(probs, labels, task, loss->values[0], end - start);
                train_loss_sum += r.loss_sum;
                train_correct += r.correct;
            } catch (const NumericError& e) {
                throw NumericError("train_stage: epoch " + std::to_string(epoch) + " batch " +
                                   std::to_string(batch_index) + ": " + e.what());
            }
        }

        EpochStats stats;
        stats.train_loss = train_loss_sum / static_cast<double>(train.count);
        stats.train_acc = static_cast<double>(train_correct) / static_cast<double>(train.count);
        const EvalStats v = evaluate(g, val, task, hyper.batch_size);
        stats.val_loss = v.loss;
        stats.val_acc = v.accuracy;
        log.epochs.push_back(stats);

        if (stats.val_acc > best_val_acc) {
            best_val_acc = stats.val_acc;
            log.best_epoch = epoch;
            CheckpointMeta meta = meta_base;
            meta.epoch = epoch;
            meta.val_accuracy = stats.val_acc;
            meta.seed = hyper.seed;
            best = make_checkpoint(g, &velocity, meta);
        }
    }
    return {std::move(best), std::move(log)};
}

} // namespace mstl
