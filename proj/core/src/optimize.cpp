#include "lcsurv/optimize.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "lcsurv/error.hpp"

namespace lcsurv {

OptimConfig OptimConfig::classification() { return OptimConfig{}; }

OptimConfig OptimConfig::regression() {
    OptimConfig cfg;
    cfg.lr_init = 5e-3;
    return cfg;
}

void OptimConfig::validate() const {
    if (!(lr_init >= 0.0)) throw ConfigError("lr_init must be nonnegative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be nonnegative");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(sam_rho >= 0.0)) throw ConfigError("sam_rho must be nonnegative");
    if (!(low() >= 0.0)) throw ConfigError("cyclic lower learning rate must be nonnegative");
    if (low() > high()) throw ConfigError("cyclic lower learning rate exceeds the upper one");
}

void zero_grads(const ParamRefs& params) {
    for (const auto& p : params) p.param->grad.zero();
}

void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
              const OptimConfig& cfg, double lr) {
    if (params.size() != grads.size() || params.size() != velocity.size()) {
        throw DimensionError("sgd step: parameter, gradient and velocity sizes differ");
    }
    for (double g : grads) {
        if (!std::isfinite(g)) throw NumericError("sgd step: non-finite gradient");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i] + cfg.weight_decay * params[i];
        velocity[i] = cfg.momentum * velocity[i] + g;
        params[i] -= lr * velocity[i];
    }
}

double cyclic_lr(std::size_t step, const OptimConfig& cfg) {
    if (cfg.half_period == 0) throw ConfigError("cyclic schedule needs a positive half period");
    const double lo = cfg.low(), hi = cfg.high();
    if (lo > hi) throw ConfigError("cyclic lower learning rate exceeds the upper one");
    const std::size_t period = 2 * cfg.half_period;
    const std::size_t pos = step % period;
    const double half = static_cast<double>(cfg.half_period);
    const double frac = pos <= cfg.half_period ? static_cast<double>(pos) / half
                                               : static_cast<double>(period - pos) / half;
    return lo + (hi - lo) * frac;
}

void SgdOptimizer::ensure_state(const ParamRefs& params) {
    if (velocity_.size() == params.size()) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (velocity_[i].shape() != params[i].param->value.shape()) {
                throw DimensionError("optimizer state does not match parameter '" + params[i].name + "'");
            }
        }
        return;
    }
    if (!velocity_.empty()) throw DimensionError("optimizer state was created for a different parameter set");
    for (const auto& p : params) velocity_.emplace_back(p.param->value.shape());
}

void SgdOptimizer::step(const ParamRefs& params, double lr) {
    ensure_state(params);
    for (const auto& p : params) {
        if (!p.param->grad.all_finite()) throw NumericError("sgd step: non-finite gradient in '" + p.name + "'");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& prm = *params[i].param;
        sgd_step(prm.value.values(), prm.grad.values(), velocity_[i].values(), cfg_, lr);
        prm.value.round_to_dtype();
    }
}

void SgdOptimizer::save_state(const ParamRefs& params, Checkpoint& into) const {
    for (std::size_t i = 0; i < params.size(); ++i) {
        into.tensors["velocity/" + params[i].name] =
            i < velocity_.size() ? velocity_[i] : Tensor(params[i].param->value.shape());
    }
}

void SgdOptimizer::load_state(const ParamRefs& params, const Checkpoint& from) {
    std::vector<Tensor> loaded;
    for (const auto& p : params) {
        const Tensor& v = from.at("velocity/" + p.name);
        if (v.shape() != p.param->value.shape()) {
            throw DimensionError("saved velocity for '" + p.name + "' has shape " + shape_string(v.shape()));
        }
        loaded.push_back(v);
    }
    velocity_ = std::move(loaded);
}

double SamOptimizer::step(const ParamRefs& params, const std::function<double()>& loss_and_grad, double lr) {
    zero_grads(params);
    const double loss = loss_and_grad();

    double norm_sq = 0.0;
    for (const auto& p : params) {
        const auto& g = p.param->grad;
        const auto& w = p.param->value;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double scale = cfg_.adaptive_sam ? std::abs(w[i]) + cfg_.adaptive_eta : 1.0;
            norm_sq += (scale * g[i]) * (scale * g[i]);
        }
    }
    const double norm = std::sqrt(norm_sq);
    if (!std::isfinite(norm)) throw NumericError("sam step: non-finite gradient norm");
    if (norm == 0.0) {
        base_.step(params, lr);
        return loss;
    }

    std::vector<Tensor> saved;
    saved.reserve(params.size());
    for (const auto& p : params) {
        saved.push_back(p.param->value);
        auto& w = p.param->value;
        const auto& g = p.param->grad;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double scale = cfg_.adaptive_sam ? std::abs(saved.back()[i]) + cfg_.adaptive_eta : 1.0;
            w[i] += cfg_.sam_rho * scale * scale * g[i] / norm;
        }
        w.round_to_dtype();
    }
    zero_grads(params);
    loss_and_grad();
    for (std::size_t i = 0; i < params.size(); ++i) params[i].param->value = saved[i];
    base_.step(params, lr);
    return loss;
}

std::string to_string(const GridValue& v) {
    std::ostringstream out;
    std::visit([&](const auto& x) { out << x; }, v);
    return out.str();
}

GridResult grid_search(const GridSpace& space, const std::function<double(const GridPoint&)>& objective) {
    if (space.empty()) throw ArgumentError("grid search: empty search space");
    std::vector<const std::pair<const std::string, std::vector<GridValue>>*> axes;
    for (const auto& axis : space) {
        if (axis.second.empty()) throw ArgumentError("grid search: no candidates for '" + axis.first + "'");
        axes.push_back(&axis);
    }
    GridResult result;
    result.best_score = -std::numeric_limits<double>::infinity();
    bool found = false;
    double best_ranked = result.best_score;
    std::vector<std::size_t> index(axes.size(), 0);
    for (;;) {
        GridPoint point;
        for (std::size_t a = 0; a < axes.size(); ++a) point[axes[a]->first] = axes[a]->second[index[a]];
        const double score = objective(point);
        result.evaluated.emplace_back(point, score);
        // NaN scores rank below everything.
        const double ranked = std::isnan(score) ? -std::numeric_limits<double>::infinity() : score;
        if (!found || ranked > best_ranked) {
            result.best = point;
            result.best_score = score;
            best_ranked = ranked;
            found = true;
        }
        // Odometer with the last key varying fastest.
        std::size_t a = axes.size();
        while (a > 0) {
            --a;
            if (++index[a] < axes[a]->second.size()) break;
            index[a] = 0;
            if (a == 0) return result;
        }
    }
}

}  // namespace lcsurv
