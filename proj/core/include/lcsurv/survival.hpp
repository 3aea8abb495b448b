#pragma once

// Losses and evaluation metrics for classification and right-censored
// survival outcomes.

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "lcsurv/tensor.hpp"

namespace lcsurv {

// Follow-up time in days from the last screening point; event 1 = death,
// 0 = censored.
struct SurvivalLabel {
    double time = 0.0;
    int event = 0;

    void validate() const;
    friend bool operator==(const SurvivalLabel&, const SurvivalLabel&) = default;
};

// Right-continuous step function, value 1 before the first knot.
struct StepFunction {
    std::vector<double> knots;
    std::vector<double> values;

    double operator()(double t) const;
    // Value just before t.
    double left_limit(double t) const;
};

struct CrossEntropy {
    double loss = 0.0;
    Tensor grad_logits;
};

// weight[label] * -log softmax(logits)[label], with its gradient.
CrossEntropy cross_entropy(const Tensor& logits, std::size_t label, const Tensor& class_weights);
Tensor softmax(const Tensor& logits);

struct CoxLoss {
    double loss = 0.0;
    std::vector<double> grad;
};

// Negative Cox partial log-likelihood averaged over events. Risk sets are
// R(T_i) = {j : T_j >= T_i}; tied event times share a risk set (Breslow).
double cox_loss(std::span<const double> risks, std::span<const SurvivalLabel> labels);
std::vector<double> cox_loss_grad(std::span<const double> risks, std::span<const SurvivalLabel> labels);
CoxLoss cox_loss_and_grad(std::span<const double> risks, std::span<const SurvivalLabel> labels);

// Mann-Whitney AUC, ties counted one half.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
    double threshold = 0.0;
};
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);

struct Confusion {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};
// Scores >= threshold are predicted positive.
Confusion confusion_at(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

struct F1Mcc {
    double f1 = 0.0;
    double mcc = 0.0;
};
// MCC is 0 when any marginal of the table is empty.
F1Mcc f1_mcc(const Confusion& c);

// Product-limit estimator with knots at distinct event times. With
// censoring_as_event the indicator is inverted, giving the censoring survival
// function used for IPCW weights.
StepFunction kaplan_meier(std::span<const SurvivalLabel> labels, bool censoring_as_event = false);

// Comparable pairs: T_i < T_j with E_i = 1; concordant when risk_i > risk_j,
// risk ties count one half.
double harrell_c(std::span<const double> risks, std::span<const SurvivalLabel> labels);

// Uno's IPCW concordance truncated at tau (default: largest event time). Pair
// weights are 1 / G(T_i-)^2 with G the censoring Kaplan-Meier curve.
double ipcw_c(std::span<const double> risks, std::span<const SurvivalLabel> labels,
              std::optional<double> tau = std::nullopt);

enum class Cause { none = 0, cardiac = 1, respiratory = 2 };
enum class MortalityClass { survivor = 0, cardiac = 1, respiratory = 2 };

inline constexpr double days_per_year = 365.25;

// Ground truth within a follow-up band: non-survivor of its cause if the death
// happened strictly before band_years, survivor otherwise.
MortalityClass band_truth(const SurvivalLabel& label, Cause cause, double band_years);

struct BandClassStats {
    std::size_t cases = 0;
    std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
    std::optional<double> sensitivity;
    std::optional<double> specificity;
};

struct BandConfusion {
    double band_years = 0.0;
    std::array<BandClassStats, 3> classes;  // indexed by MortalityClass
};

BandConfusion band_confusion(std::span<const MortalityClass> predicted, std::span<const SurvivalLabel> labels,
                             std::span<const Cause> causes, double band_years);

}  // namespace lcsurv
