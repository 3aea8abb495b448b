#pragma once

// Mini-batch training loops for the CNN and CRNN models with SAM+SGD under a
// cyclic learning rate, per-step and per-epoch logs, and best-validation
// parameter selection.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lcsurv/models.hpp"
#include "lcsurv/optimize.hpp"
#include "lcsurv/survival.hpp"

namespace lcsurv {

// Inputs and targets for one split. Exactly one of items / sequences is used,
// depending on the model. Classification targets live in `classes`, Cox
// targets in `labels`.
struct TaskData {
    std::vector<Tensor> items;
    std::vector<IntervalSequence> sequences;
    std::vector<int> classes;
    std::vector<SurvivalLabel> labels;

    std::size_t size() const { return items.empty() ? sequences.size() : items.size(); }
};

struct TrainConfig {
    OptimConfig optim;
    std::size_t epochs = 5;
    std::uint64_t seed = 1;
    bool use_sam = true;
    // 0 derives ceil(train size / batch size).
    std::size_t steps_per_epoch = 0;
};

struct StepLog {
    std::size_t epoch = 0;
    std::size_t step = 0;  // global step
    double lr = 0.0;
    double loss = 0.0;
    std::size_t resampled = 0;  // zero-event Cox batches redrawn before this step
};

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;  // mean step loss
    std::optional<double> val_metric;
};

struct TrainResult {
    std::vector<StepLog> steps;
    std::vector<EpochLog> epochs;
    std::size_t best_epoch = 0;
    std::optional<double> best_metric;
    std::size_t zero_event_resamples = 0;
    std::string metric_name;  // "auc" or "harrell_c"
};

TrainResult train_cnn(CnnModel& model, const TaskData& train, const TaskData& val, const TrainConfig& cfg);
TrainResult train_crnn(CrnnModel& model, const TaskData& train, const TaskData& val, const TrainConfig& cfg);

// Scores in input order: positive-class probability for classifier heads, risk
// for Cox heads. Eval mode, processed in chunks.
std::vector<double> predict(CnnModel& model, const std::vector<Tensor>& items);
std::vector<double> predict(CrnnModel& model, const std::vector<IntervalSequence>& sequences);
// Both class probabilities (index 0 and 1) per input for classifier heads.
std::vector<std::array<double, 2>> predict_probs(CrnnModel& model, const std::vector<IntervalSequence>& sequences);

// Mean loss over the whole set in eval mode (no dropout, running statistics).
double evaluate_loss(CnnModel& model, const TaskData& data);

// AUC of the class-1 probability for classifier heads, Harrell C for Cox heads.
double validation_metric(HeadKind head, const std::vector<double>& scores, const TaskData& data);

std::string steps_csv(const TrainResult& r);
std::string epochs_csv(const TrainResult& r);

}  // namespace lcsurv
