#pragma once

#include "etcn/data_pipeline.hpp"
#include "etcn/network.hpp"

#include <functional>
#include <vector>

namespace etcn {

/// How the per-epoch training loss / accuracy are measured.
enum class EpochMetrics {
    FullPass,  // eval-mode pass over the whole training set after the epoch
    Running,   // mean over the epoch's train-mode mini-batches (no extra pass)
};

struct TrainConfig {
    int epochs = 100;
    int batch_size = 128;
    double learning_rate = 0.000106;
    std::uint64_t seed = 42;
    bool shuffle = true;
    int eval_batch_size = 256;
    EpochMetrics epoch_metrics = EpochMetrics::FullPass;
};

void validate(const TrainConfig& config);

struct AdamState {
    NetworkParams first_moment;
    NetworkParams second_moment;
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

AdamState make_adam_state(const NetworkParams& params);

/// Bias-corrected Adam update of every parameter tensor. Throws before
/// touching anything when a gradient is non-finite.
void adam_step(NetworkParams& params, const Gradients& grads, AdamState& state, double learning_rate);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0;  // NaN without a validation set
    double val_accuracy = 0.0;
};

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
    std::vector<int> predictions;
    std::vector<int> labels;
};

/// Eval-mode pass (dropout off, running BN statistics). Never mutates the model.
EvalResult evaluate(const Model& model, const SampleSet& samples, int batch_size = 256);

struct FitResult {
    Model model;
    std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch Adam over `train`. After every epoch the validation set gets a
/// full eval-mode pass (skipped when it is empty) and the training metrics
/// follow config.epoch_metrics. A trailing batch of one sample is dropped
/// (batch norm).
FitResult fit(Model model, const SampleSet& train, const SampleSet& validation, const TrainConfig& config,
              const EpochCallback& on_epoch = {});

}  // namespace etcn
