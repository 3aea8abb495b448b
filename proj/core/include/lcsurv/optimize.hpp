#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lcsurv/checkpoint.hpp"
#include "lcsurv/layers.hpp"

namespace lcsurv {

struct OptimConfig {
    double lr_init = 1e-3;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::size_t batch_size = 24;
    double sam_rho = 0.05;
    bool adaptive_sam = false;
    double adaptive_eta = 0.01;
    // Triangular cyclic schedule. Unset bounds default to lr_init / 10 and
    // lr_init; a zero half period is replaced by one epoch of steps.
    std::optional<double> lr_low;
    std::optional<double> lr_high;
    std::size_t half_period = 0;

    static OptimConfig classification();
    static OptimConfig regression();

    double low() const { return lr_low.value_or(lr_init / 10.0); }
    double high() const { return lr_high.value_or(lr_init); }
    void validate() const;
};

struct ParamRef {
    std::string name;
    Parameter* param = nullptr;
};
using ParamRefs = std::vector<ParamRef>;

void zero_grads(const ParamRefs& params);

// Coupled L2: g' = g + wd*w; v = momentum*v + g'; w -= lr*v.
void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
              const OptimConfig& cfg, double lr);

double cyclic_lr(std::size_t step, const OptimConfig& cfg);

class SgdOptimizer {
public:
    explicit SgdOptimizer(OptimConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

    // Applies one update from the gradients currently stored in the parameters.
    void step(const ParamRefs& params, double lr);

    const OptimConfig& config() const { return cfg_; }
    // Velocity buffers keyed "velocity/<param name>".
    void save_state(const ParamRefs& params, Checkpoint& into) const;
    void load_state(const ParamRefs& params, const Checkpoint& from);

private:
    void ensure_state(const ParamRefs& params);

    OptimConfig cfg_;
    std::vector<Tensor> velocity_;
};

// Sharpness-aware minimization around an SgdOptimizer. loss_and_grad must
// compute the loss at the current parameter values and leave its gradient in
// the parameters' grad buffers (they are zeroed before each call). It is
// evaluated twice per step and must be deterministic across the two calls.
class SamOptimizer {
public:
    explicit SamOptimizer(OptimConfig cfg) : base_(cfg), cfg_(std::move(cfg)) {}

    // Returns the loss at the unperturbed point.
    double step(const ParamRefs& params, const std::function<double()>& loss_and_grad, double lr);

    SgdOptimizer& base() { return base_; }
    const OptimConfig& config() const { return cfg_; }

private:
    SgdOptimizer base_;
    OptimConfig cfg_;
};

using GridValue = std::variant<std::int64_t, double, std::string>;
using GridPoint = std::map<std::string, GridValue>;
using GridSpace = std::map<std::string, std::vector<GridValue>>;

struct GridResult {
    GridPoint best;
    double best_score = 0.0;
    std::vector<std::pair<GridPoint, double>> evaluated;  // in enumeration order
};

// Exhaustive search maximizing the objective. Points are enumerated in
// lexicographic order of (key, candidate index) and the first maximum wins.
GridResult grid_search(const GridSpace& space, const std::function<double(const GridPoint&)>& objective);

std::string to_string(const GridValue& v);

}  // namespace lcsurv
