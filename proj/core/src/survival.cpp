#include "lcsurv/survival.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "lcsurv/error.hpp"

namespace lcsurv {

void SurvivalLabel::validate() const {
    if (!(time >= 0.0) || !std::isfinite(time)) throw ArgumentError("survival time must be finite and nonnegative");
    if (event != 0 && event != 1) throw ArgumentError("event indicator must be 0 or 1");
}

double StepFunction::operator()(double t) const {
    auto it = std::upper_bound(knots.begin(), knots.end(), t);
    if (it == knots.begin()) return 1.0;
    return values[static_cast<std::size_t>(it - knots.begin()) - 1];
}

double StepFunction::left_limit(double t) const {
    auto it = std::lower_bound(knots.begin(), knots.end(), t);
    if (it == knots.begin()) return 1.0;
    return values[static_cast<std::size_t>(it - knots.begin()) - 1];
}

namespace {

void check_pairs(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        throw ArgumentError(std::string(what) + ": " + std::to_string(a) + " scores but " + std::to_string(b) +
                            " labels");
    }
}

void check_labels(std::span<const SurvivalLabel> labels) {
    for (const auto& l : labels) l.validate();
}

void check_binary(std::span<const int> labels, std::size_t& positives, std::size_t& negatives) {
    positives = negatives = 0;
    for (int y : labels) {
        if (y == 1) ++positives;
        else if (y == 0) ++negatives;
        else throw ArgumentError("binary labels must be 0 or 1");
    }
}

}  // namespace

Tensor softmax(const Tensor& logits) {
    Tensor p = logits;
    const double m = *std::max_element(p.raw().begin(), p.raw().end());
    double s = 0.0;
    for (auto& v : p.values()) {
        v = std::exp(v - m);
        s += v;
    }
    for (auto& v : p.values()) v /= s;
    return p;
}

CrossEntropy cross_entropy(const Tensor& logits, std::size_t label, const Tensor& class_weights) {
    const std::size_t k = logits.size();
    if (k < 2) throw ArgumentError("cross entropy needs at least 2 classes");
    if (class_weights.size() != k) throw DimensionError("cross entropy: class weight count differs from logit count");
    if (label >= k) throw ArgumentError("cross entropy: label " + std::to_string(label) + " >= class count");
    for (double w : class_weights.values()) {
        if (!(w > 0.0)) throw ArgumentError("cross entropy: class weights must be positive");
    }
    const double m = *std::max_element(logits.raw().begin(), logits.raw().end());
    double s = 0.0;
    for (double v : logits.values()) s += std::exp(v - m);
    const double log_z = m + std::log(s);
    const double w = class_weights[label];
    CrossEntropy out{w * (log_z - logits[label]), Tensor(logits.shape())};
    for (std::size_t c = 0; c < k; ++c) {
        out.grad_logits[c] = w * (std::exp(logits[c] - log_z) - (c == label ? 1.0 : 0.0));
    }
    return out;
}

CoxLoss cox_loss_and_grad(std::span<const double> risks, std::span<const SurvivalLabel> labels) {
    check_pairs(risks.size(), labels.size(), "cox loss");
    check_labels(labels);
    const std::size_t n = risks.size();
    std::size_t n_events = 0;
    for (const auto& l : labels) n_events += static_cast<std::size_t>(l.event);
    if (n_events == 0) throw UndefinedError("cox loss is undefined for a batch without events");
    for (double h : risks) {
        if (!std::isfinite(h)) throw NumericError("cox loss: non-finite risk score");
    }

    const double shift = *std::max_element(risks.begin(), risks.end());
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return labels[a].time > labels[b].time; });

    // Walk times in descending order; the running sum covers {j : T_j >= t}.
    // inv_risk_sum[i] is the sum of 1/S over event groups with time <= T_i,
    // filled in a second ascending pass.
    std::vector<double> group_sum(n, 0.0);  // S for the group containing each subject
    double running = 0.0, loss = 0.0;
    for (std::size_t a = 0; a < n;) {
        std::size_t b = a;
        while (b < n && labels[order[b]].time == labels[order[a]].time) {
            running += std::exp(risks[order[b]] - shift);
            ++b;
        }
        const double log_s = std::log(running) + shift;
        for (std::size_t k = a; k < b; ++k) {
            group_sum[order[k]] = running;
            if (labels[order[k]].event) loss -= risks[order[k]] - log_s;
        }
        a = b;
    }
    const double inv_events = 1.0 / static_cast<double>(n_events);

    std::vector<double> grad(n, 0.0);
    double acc = 0.0;
    for (std::size_t a = n; a > 0;) {
        std::size_t b = a;
        const double t = labels[order[a - 1]].time;
        double events_here = 0.0;
        while (b > 0 && labels[order[b - 1]].time == t) {
            events_here += labels[order[b - 1]].event;
            --b;
        }
        acc += events_here / group_sum[order[a - 1]];
        for (std::size_t k = b; k < a; ++k) {
            const std::size_t j = order[k];
            grad[j] = -inv_events * (labels[j].event - std::exp(risks[j] - shift) * acc);
        }
        a = b;
    }
    return {loss * inv_events, std::move(grad)};
}

double cox_loss(std::span<const double> risks, std::span<const SurvivalLabel> labels) {
    return cox_loss_and_grad(risks, labels).loss;
}

std::vector<double> cox_loss_grad(std::span<const double> risks, std::span<const SurvivalLabel> labels) {
    return cox_loss_and_grad(risks, labels).grad;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    check_pairs(scores.size(), labels.size(), "roc auc");
    std::size_t pos, neg;
    check_binary(labels, pos, neg);
    if (pos == 0 || neg == 0) throw UndefinedError("roc auc is undefined when only one class is present");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    for (std::size_t a = 0; a < order.size();) {
        std::size_t b = a;
        while (b < order.size() && scores[order[b]] == scores[order[a]]) ++b;
        const double mid_rank = 0.5 * static_cast<double>(a + 1 + b);
        for (std::size_t k = a; k < b; ++k) {
            if (labels[order[k]] == 1) rank_sum += mid_rank;
        }
        a = b;
    }
    const double p = static_cast<double>(pos), q = static_cast<double>(neg);
    return (rank_sum - p * (p + 1) / 2.0) / (p * q);
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
    check_pairs(scores.size(), labels.size(), "roc curve");
    std::size_t pos, neg;
    check_binary(labels, pos, neg);
    if (pos == 0 || neg == 0) throw UndefinedError("roc curve is undefined when only one class is present");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<RocPoint> points{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
    std::size_t tp = 0, fp = 0;
    for (std::size_t a = 0; a < order.size();) {
        std::size_t b = a;
        while (b < order.size() && scores[order[b]] == scores[order[a]]) {
            (labels[order[b]] ? tp : fp)++;
            ++b;
        }
        points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                          static_cast<double>(tp) / static_cast<double>(pos), scores[order[a]]});
        a = b;
    }
    return points;
}

Confusion confusion_at(std::span<const double> scores, std::span<const int> labels, double threshold) {
    check_pairs(scores.size(), labels.size(), "confusion");
    Confusion c;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool predicted = scores[i] >= threshold;
        if (labels[i]) (predicted ? c.tp : c.fn)++;
        else (predicted ? c.fp : c.tn)++;
    }
    return c;
}

F1Mcc f1_mcc(const Confusion& c) {
    const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
    const double tn = static_cast<double>(c.tn), fn = static_cast<double>(c.fn);
    if (tp + fp + tn + fn == 0) throw UndefinedError("f1/mcc undefined for an empty confusion table");
    F1Mcc out;
    const double f1_den = 2 * tp + fp + fn;
    out.f1 = f1_den > 0 ? 2 * tp / f1_den : 0.0;
    const double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    out.mcc = den > 0 ? (tp * tn - fp * fn) / std::sqrt(den) : 0.0;
    return out;
}

StepFunction kaplan_meier(std::span<const SurvivalLabel> labels, bool censoring_as_event) {
    if (labels.empty()) throw ArgumentError("kaplan-meier needs at least one subject");
    check_labels(labels);
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return labels[a].time < labels[b].time; });
    StepFunction s;
    double surv = 1.0;
    const std::size_t n = order.size();
    for (std::size_t a = 0; a < n;) {
        std::size_t b = a;
        std::size_t d = 0;
        while (b < n && labels[order[b]].time == labels[order[a]].time) {
            const bool hit = censoring_as_event ? labels[order[b]].event == 0 : labels[order[b]].event == 1;
            d += hit ? 1 : 0;
            ++b;
        }
        if (d > 0) {
            const double at_risk = static_cast<double>(n - a);
            surv *= 1.0 - static_cast<double>(d) / at_risk;
            s.knots.push_back(labels[order[a]].time);
            s.values.push_back(surv);
        }
        a = b;
    }
    return s;
}

double harrell_c(std::span<const double> risks, std::span<const SurvivalLabel> labels) {
    check_pairs(risks.size(), labels.size(), "harrell c");
    check_labels(labels);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < risks.size(); ++i) {
        if (!labels[i].event) continue;
        for (std::size_t j = 0; j < risks.size(); ++j) {
            if (!(labels[i].time < labels[j].time)) continue;
            den += 1.0;
            num += risks[i] > risks[j] ? 1.0 : risks[i] == risks[j] ? 0.5 : 0.0;
        }
    }
    if (den == 0.0) throw UndefinedError("harrell c: no comparable pairs");
    return num / den;
}

double ipcw_c(std::span<const double> risks, std::span<const SurvivalLabel> labels, std::optional<double> tau) {
    check_pairs(risks.size(), labels.size(), "ipcw c");
    check_labels(labels);
    if (labels.empty()) throw ArgumentError("ipcw c: empty input");
    double max_time = 0.0, max_event = -1.0;
    for (const auto& l : labels) {
        max_time = std::max(max_time, l.time);
        if (l.event) max_event = std::max(max_event, l.time);
    }
    if (max_event < 0) throw UndefinedError("ipcw c: no events");
    const double horizon = tau.value_or(max_event);
    if (horizon > max_time) throw ArgumentError("ipcw c: tau exceeds the largest observed time");

    const StepFunction censor_surv = kaplan_meier(labels, true);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < risks.size(); ++i) {
        if (!labels[i].event || !(labels[i].time < horizon)) continue;
        const double g = censor_surv.left_limit(labels[i].time);
        if (!(g > 0.0)) throw UndefinedError("ipcw c: censoring survival is 0 before an event time");
        const double w = 1.0 / (g * g);
        for (std::size_t j = 0; j < risks.size(); ++j) {
            if (!(labels[i].time < labels[j].time)) continue;
            den += w;
            num += w * (risks[i] > risks[j] ? 1.0 : risks[i] == risks[j] ? 0.5 : 0.0);
        }
    }
    if (den == 0.0) throw UndefinedError("ipcw c: no comparable pairs before tau");
    return num / den;
}

MortalityClass band_truth(const SurvivalLabel& label, Cause cause, double band_years) {
    if (label.event == 1 && label.time < band_years * days_per_year) {
        if (cause == Cause::none) throw DataError("subject with an event has no cause of death");
        return cause == Cause::cardiac ? MortalityClass::cardiac : MortalityClass::respiratory;
    }
    return MortalityClass::survivor;
}

BandConfusion band_confusion(std::span<const MortalityClass> predicted, std::span<const SurvivalLabel> labels,
                             std::span<const Cause> causes, double band_years) {
    check_pairs(predicted.size(), labels.size(), "band confusion");
    check_pairs(causes.size(), labels.size(), "band confusion");
    if (!(band_years > 0.0)) throw ArgumentError("band length must be positive");
    BandConfusion out;
    out.band_years = band_years;
    for (std::size_t s = 0; s < labels.size(); ++s) {
        const auto truth = band_truth(labels[s], causes[s], band_years);
        for (std::size_t k = 0; k < 3; ++k) {
            auto& st = out.classes[k];
            const bool is_true = static_cast<std::size_t>(truth) == k;
            const bool is_pred = static_cast<std::size_t>(predicted[s]) == k;
            if (is_true) {
                ++st.cases;
                (is_pred ? st.tp : st.fn)++;
            } else {
                (is_pred ? st.fp : st.tn)++;
            }
        }
    }
    for (auto& st : out.classes) {
        if (st.tp + st.fn > 0) st.sensitivity = static_cast<double>(st.tp) / static_cast<double>(st.tp + st.fn);
        if (st.tn + st.fp > 0) st.specificity = static_cast<double>(st.tn) / static_cast<double>(st.tn + st.fp);
    }
    return out;
}

}  // namespace lcsurv
