#include "lcsurv/training.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "lcsurv/error.hpp"

namespace lcsurv {

namespace {

constexpr std::size_t predict_chunk = 64;
constexpr std::size_t max_batch_redraws = 1000;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Model-specific hooks used by the shared loop.
struct Adapter {
    HeadKind head;
    std::function<Tensor(const std::vector<std::size_t>& idx, Mode mode, Rng& rng)> forward;
    std::function<void(const Tensor& grad_head)> backward;
    std::function<std::vector<double>(const TaskData& data)> scores;
    ParamRefs params;
    std::vector<Tensor*> buffers;
};

double batch_loss(HeadKind head, const Tensor& out, const std::vector<std::size_t>& idx, const TaskData& data,
                  Tensor& grad) {
    const std::size_t B = idx.size();
    grad = Tensor(out.shape());
    if (head == HeadKind::cox) {
        std::vector<double> risks(B);
        std::vector<SurvivalLabel> labels(B);
        for (std::size_t b = 0; b < B; ++b) {
            risks[b] = out[b];
            labels[b] = data.labels.at(idx[b]);
        }
        const CoxLoss c = cox_loss_and_grad(risks, labels);
        for (std::size_t b = 0; b < B; ++b) grad[b] = c.grad[b];
        return c.loss;
    }
    const Tensor weights({2}, 1.0);
    double loss = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        const Tensor logits({2}, {out[2 * b], out[2 * b + 1]});
        const auto ce = cross_entropy(logits, static_cast<std::size_t>(data.classes.at(idx[b])), weights);
        loss += ce.loss;
        grad[2 * b] = ce.grad_logits[0] / static_cast<double>(B);
        grad[2 * b + 1] = ce.grad_logits[1] / static_cast<double>(B);
    }
    return loss / static_cast<double>(B);
}

void check_targets(HeadKind head, const TaskData& data, const std::string& split) {
    const std::size_t n = data.size();
    if (head == HeadKind::cox) {
        if (data.labels.size() != n) throw DimensionError(split + ": survival label count differs from input count");
    } else {
        if (data.classes.size() != n) throw DimensionError(split + ": class label count differs from input count");
        for (int c : data.classes) {
            if (c != 0 && c != 1) throw DataError(split + ": classifier targets must be 0 or 1");
        }
    }
}

TrainResult run_training(Adapter& ad, const TaskData& train, const TaskData& val, const TrainConfig& cfg) {
    cfg.optim.validate();
    if (cfg.epochs == 0) throw ConfigError("training needs at least one epoch");
    const std::size_t n = train.size();
    if (n == 0) throw DataError("training split is empty");
    check_targets(ad.head, train, "train");
    if (val.size() > 0) check_targets(ad.head, val, "validation");

    const std::size_t batch = std::min(cfg.optim.batch_size, n);
    const std::size_t steps = cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch : (n + batch - 1) / batch;
    OptimConfig oc = cfg.optim;
    if (oc.half_period == 0) oc.half_period = steps;

    std::optional<WeightedSampler> sampler;
    if (ad.head != HeadKind::cox) {
        sampler.emplace(train.classes, mix(cfg.seed, 0x5a5a));
    } else if (std::none_of(train.labels.begin(), train.labels.end(), [](const SurvivalLabel& l) { return l.event == 1; })) {
        throw UndefinedError("cox training split has no events");
    }
    Rng batch_rng(mix(cfg.seed, 0xba7c));

    SamOptimizer sam(oc);
    SgdOptimizer sgd(oc);

    TrainResult result;
    result.metric_name = ad.head == HeadKind::cox ? "harrell_c" : "auc";
    std::vector<Tensor> best_params, best_buffers;
    auto snapshot = [&] {
        best_params.clear();
        best_buffers.clear();
        for (const auto& p : ad.params) best_params.push_back(p.param->value);
        for (const Tensor* b : ad.buffers) best_buffers.push_back(*b);
    };

    std::size_t global = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (std::size_t s = 0; s < steps; ++s, ++global) {
            std::vector<std::size_t> idx;
            std::size_t redraws = 0;
            if (sampler) {
                idx = sampler->draw(batch);
            } else {
                std::vector<std::size_t> order(n);
                for (;;) {
                    std::iota(order.begin(), order.end(), std::size_t{0});
                    for (std::size_t i = 0; i < batch; ++i) {
                        const std::size_t j = i + std::uniform_int_distribution<std::size_t>(0, n - 1 - i)(batch_rng);
                        std::swap(order[i], order[j]);
                    }
                    idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(batch));
                    if (std::any_of(idx.begin(), idx.end(), [&](std::size_t i) { return train.labels[i].event == 1; })) break;
                    if (++redraws > max_batch_redraws) throw UndefinedError("could not draw a cox batch with an event");
                }
            }
            result.zero_event_resamples += redraws;

            const double lr = cyclic_lr(global, oc);
            std::size_t calls = 0;
            std::vector<Tensor> first_pass_buffers;
            auto loss_and_grad = [&]() {
                // Same dropout masks in both SAM passes.
                Rng step_rng(mix(cfg.seed, global + 1));
                const Tensor out = ad.forward(idx, Mode::train, step_rng);
                Tensor grad;
                const double loss = batch_loss(ad.head, out, idx, train, grad);
                if (!std::isfinite(loss)) throw NumericError("non-finite training loss at step " + std::to_string(global));
                ad.backward(grad);
                // Running statistics follow the unperturbed pass only.
                if (calls++ == 0) {
                    for (const Tensor* b : ad.buffers) first_pass_buffers.push_back(*b);
                } else {
                    for (std::size_t i = 0; i < ad.buffers.size(); ++i) *ad.buffers[i] = first_pass_buffers[i];
                }
                return loss;
            };
            double loss = 0.0;
            if (cfg.use_sam) {
                loss = sam.step(ad.params, loss_and_grad, lr);
            } else {
                zero_grads(ad.params);
                loss = loss_and_grad();
                sgd.step(ad.params, lr);
            }
            epoch_loss += loss;
            result.steps.push_back({epoch, global, lr, loss, redraws});
        }

        EpochLog log{epoch, epoch_loss / static_cast<double>(steps), std::nullopt};
        if (val.size() > 0) {
            try {
                log.val_metric = validation_metric(ad.head, ad.scores(val), val);
            } catch (const UndefinedError&) {
                log.val_metric.reset();
            }
        }
        const bool better = val.size() == 0 ||
                            (log.val_metric && (!result.best_metric || *log.val_metric > *result.best_metric));
        if (better || best_params.empty()) {
            result.best_epoch = epoch;
            result.best_metric = log.val_metric;
            snapshot();
        }
        result.epochs.push_back(log);
    }
    for (std::size_t i = 0; i < ad.params.size(); ++i) ad.params[i].param->value = best_params[i];
    for (std::size_t i = 0; i < ad.buffers.size(); ++i) *ad.buffers[i] = best_buffers[i];
    zero_grads(ad.params);
    return result;
}

Tensor gather_items(const std::vector<Tensor>& items, const std::vector<std::size_t>& idx) {
    std::vector<Tensor> parts;
    parts.reserve(idx.size());
    for (std::size_t i : idx) parts.push_back(items.at(i));
    return stack(parts);
}

}  // namespace

double validation_metric(HeadKind head, const std::vector<double>& scores, const TaskData& data) {
    if (head == HeadKind::cox) return harrell_c(scores, data.labels);
    return roc_auc(scores, data.classes);
}

TrainResult train_cnn(CnnModel& model, const TaskData& train, const TaskData& val, const TrainConfig& cfg) {
    if (train.items.empty()) throw DataError("cnn training needs per-subject items");
    Adapter ad;
    ad.head = model.config().head;
    ad.forward = [&](const std::vector<std::size_t>& idx, Mode mode, Rng& rng) {
        return model.forward(gather_items(train.items, idx), mode, rng).head;
    };
    ad.backward = [&](const Tensor& g) { model.backward(g); };
    ad.scores = [&](const TaskData& d) { return predict(model, d.items); };
    ad.params = collect_params(model);
    model.visit_buffers("", [&](const std::string&, Tensor& b) { ad.buffers.push_back(&b); });
    return run_training(ad, train, val, cfg);
}

TrainResult train_crnn(CrnnModel& model, const TaskData& train, const TaskData& val, const TrainConfig& cfg) {
    if (train.sequences.empty()) throw DataError("crnn training needs encoded sequences");
    Adapter ad;
    ad.head = model.config().head;
    ad.forward = [&](const std::vector<std::size_t>& idx, Mode mode, Rng& rng) {
        std::vector<IntervalSequence> batch;
        batch.reserve(idx.size());
        for (std::size_t i : idx) batch.push_back(train.sequences.at(i));
        return model.forward(batch, mode, rng);
    };
    ad.backward = [&](const Tensor& g) { model.backward(g); };
    ad.scores = [&](const TaskData& d) { return predict(model, d.sequences); };
    ad.params = collect_params(model);
    return run_training(ad, train, val, cfg);
}

std::vector<double> predict(CnnModel& model, const std::vector<Tensor>& items) {
    std::vector<double> out;
    out.reserve(items.size());
    Rng unused(0);
    for (std::size_t start = 0; start < items.size(); start += predict_chunk) {
        const std::size_t end = std::min(items.size(), start + predict_chunk);
        const Tensor x = stack(std::span<const Tensor>(items.data() + start, end - start));
        const auto s = head_scores(model.forward(x, Mode::eval, unused).head, model.config().head);
        out.insert(out.end(), s.begin(), s.end());
    }
    return out;
}

std::vector<double> predict(CrnnModel& model, const std::vector<IntervalSequence>& sequences) {
    std::vector<double> out;
    out.reserve(sequences.size());
    Rng unused(0);
    for (std::size_t start = 0; start < sequences.size(); start += predict_chunk) {
        const std::size_t end = std::min(sequences.size(), start + predict_chunk);
        const Tensor head = model.forward(std::span<const IntervalSequence>(sequences.data() + start, end - start),
                                          Mode::eval, unused);
        const auto s = head_scores(head, model.config().head);
        out.insert(out.end(), s.begin(), s.end());
    }
    return out;
}

std::vector<std::array<double, 2>> predict_probs(CrnnModel& model, const std::vector<IntervalSequence>& sequences) {
    if (model.config().head == HeadKind::cox) throw ConfigError("class probabilities need a classifier head");
    std::vector<std::array<double, 2>> out;
    for (double p1 : predict(model, sequences)) out.push_back({1.0 - p1, p1});
    return out;
}

double evaluate_loss(CnnModel& model, const TaskData& data) {
    check_targets(model.config().head, data, "evaluation");
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng unused(0);
    const Tensor out = model.forward(gather_items(data.items, idx), Mode::eval, unused).head;
    Tensor grad;
    return batch_loss(model.config().head, out, idx, data, grad);
}

std::string steps_csv(const TrainResult& r) {
    std::ostringstream out;
    out.precision(17);
    out << "epoch,step,lr,loss,resampled\n";
    for (const auto& s : r.steps) out << s.epoch << ',' << s.step << ',' << s.lr << ',' << s.loss << ',' << s.resampled << '\n';
    return out.str();
}

std::string epochs_csv(const TrainResult& r) {
    std::ostringstream out;
    out.precision(17);
    out << "epoch,train_loss,val_" << (r.metric_name.empty() ? "metric" : r.metric_name) << '\n';
    for (const auto& e : r.epochs) {
        out << e.epoch << ',' << e.train_loss << ',';
        if (e.val_metric) out << *e.val_metric;
        out << '\n';
    }
    return out.str();
}

}  // namespace lcsurv
