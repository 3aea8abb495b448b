#pragma once

// Randomized finite-difference instances for every differentiable layer and
// loss. Each function builds one random instance from a seed and returns the
// worst relative error between analytic and central-difference gradients over
// all inputs and parameters.

#include <functional>
#include <random>
#include <vector>

#include "lcsurv/layers.hpp"
#include "lcsurv/recurrent.hpp"
#include "lcsurv/survival.hpp"
#include "oracles.hpp"

namespace gradcheck {

using namespace lcsurv;

inline void randomize(Tensor& t, Rng& rng, double sd = 0.5) {
    std::normal_distribution<double> d(0.0, sd);
    for (auto& v : t.values()) v = d(rng);
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Scalar objective sum(r * forward(x)); checks d/dx and d/dparam for every
// parameter entry.
inline double check_module(const std::function<Tensor(const Tensor&)>& forward,
                           const std::function<Tensor(const Tensor&)>& backward, const std::vector<Parameter*>& params,
                           Tensor x, Rng& rng) {
    const Tensor out = forward(x);
    const std::vector<double> r = oracle::random_vector(out.size(), rng);
    for (auto* p : params) p->grad.zero();
    const Tensor grad_x = backward(Tensor(out.shape(), r));
    auto objective = [&] { return oracle::linear_functional(forward(x), r); };
    // Tensors whose true gradient vanishes (a bias ahead of batch norm) are
    // judged against the gradient scale of the whole instance.
    double scale = 0.0;
    for (double g : grad_x.values()) scale = std::max(scale, std::abs(g));
    for (auto* p : params)
        for (double g : p->grad.values()) scale = std::max(scale, std::abs(g));
    double worst = oracle::fd_max_rel_error(objective, x.values(), grad_x.values(), 1e-6, scale);
    for (auto* p : params) {
        const Tensor analytic = p->grad;
        worst = std::max(worst, oracle::fd_max_rel_error(objective, p->value.values(), analytic.values(), 1e-6, scale));
    }
    return worst;
}

inline std::vector<Parameter*> param_ptrs(LayerParams& lp) {
    std::vector<Parameter*> out;
    for (auto& p : lp.weights) out.push_back(&p);
    for (auto& p : lp.biases) out.push_back(&p);
    return out;
}

inline double dense_instance(std::uint64_t seed) {
    Rng rng(seed);
    Dense layer(pick(rng, 1, 6), pick(rng, 1, 6));
    randomize(layer.weight().value, rng);
    randomize(layer.bias().value, rng);
    Tensor x({pick(rng, 1, 4), layer.in_features()});
    randomize(x, rng, 1.0);
    return check_module([&](const Tensor& in) { return layer.forward(in); },
                        [&](const Tensor& g) { return layer.backward(g); }, param_ptrs(layer.params()), x, rng);
}

inline double conv3d_instance(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t k = pick(rng, 0, 1) ? 3 : 1;
    Conv3d layer(pick(rng, 1, 2), pick(rng, 1, 3), k, pick(rng, 1, 2), k == 3 ? pick(rng, 0, 1) : 0);
    randomize(layer.weight().value, rng);
    randomize(layer.bias().value, rng);
    Tensor x({pick(rng, 1, 2), layer.in_channels(), 4, 4, 4});
    randomize(x, rng, 1.0);
    return check_module([&](const Tensor& in) { return layer.forward(in); },
                        [&](const Tensor& g) { return layer.backward(g); }, param_ptrs(layer.params()), x, rng);
}

inline double batchnorm_instance(std::uint64_t seed) {
    Rng rng(seed);
    BatchNorm3d layer(pick(rng, 1, 3));
    randomize(layer.gamma().value, rng);
    layer.gamma().value[0] += 1.0;
    randomize(layer.beta().value, rng);
    const Mode mode = seed % 4 == 3 ? Mode::eval : Mode::train;
    if (mode == Mode::eval) {
        randomize(layer.running_mean(), rng);
        for (auto& v : layer.running_var().values()) v = 0.5 + std::abs(v) + std::uniform_real_distribution<>(0, 1)(rng);
    }
    Tensor x({pick(rng, 2, 3), layer.channels(), 2, 3, 3});
    randomize(x, rng, 1.0);
    return check_module([&](const Tensor& in) { return layer.forward(in, mode); },
                        [&](const Tensor& g) { return layer.backward(g); }, param_ptrs(layer.params()), x, rng);
}

inline double relu_instance(std::uint64_t seed) {
    Rng rng(seed);
    Relu layer;
    Tensor x({pick(rng, 1, 3), 2, 3, 3, 3});
    randomize(x, rng, 1.0);
    // Keep inputs away from the kink so central differences stay one-sided-free.
    for (auto& v : x.values()) {
        if (std::abs(v) < 1e-3) v += 0.01;
    }
    return check_module([&](const Tensor& in) { return layer.forward(in); },
                        [&](const Tensor& g) { return layer.backward(g); }, {}, x, rng);
}

inline double dropout_instance(std::uint64_t seed) {
    Rng rng(seed);
    Dropout layer(std::uniform_real_distribution<>(0.1, 0.7)(rng));
    Tensor x({pick(rng, 1, 3), pick(rng, 2, 8)});
    randomize(x, rng, 1.0);
    const std::uint64_t mask_seed = rng();
    return check_module(
        [&](const Tensor& in) {
            Rng mask_rng(mask_seed);
            return layer.forward(in, Mode::train, mask_rng);
        },
        [&](const Tensor& g) { return layer.backward(g); }, {}, x, rng);
}

inline double pool_instance(std::uint64_t seed) {
    Rng rng(seed);
    GlobalAvgPool3d layer;
    Tensor x({pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3), 2, 3});
    randomize(x, rng, 1.0);
    return check_module([&](const Tensor& in) { return layer.forward(in); },
                        [&](const Tensor& g) { return layer.backward(g); }, {}, x, rng);
}

inline double residual_instance(std::uint64_t seed) {
    Rng rng(seed);
    const bool down = seed % 2 == 0;
    const std::size_t c_in = pick(rng, 1, 2);
    const std::size_t c_out = down ? pick(rng, 1, 3) : c_in;
    ResidualBlock block(c_in, c_out, down);
    std::vector<Parameter*> params;
    block.visit("b", [&](const std::string&, Parameter& p) {
        randomize(p.value, rng);
        if (p.name == "gamma") {
            for (auto& v : p.value.values()) v += 1.0;
        }
        params.push_back(&p);
    });
    Tensor x({2, c_in, 4, 4, 4});
    randomize(x, rng, 1.0);
    return check_module([&](const Tensor& in) { return block.forward(in, Mode::train); },
                        [&](const Tensor& g) { return block.backward(g); }, params, x, rng);
}

// BPTT through a sequence of length 1-4 including the interval-specific
// parameters; every parameter is randomized so no term is trivially zero.
inline double recurrent_instance(CellKind kind, std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t f = pick(rng, 1, 4), h = pick(rng, 1, 4), len = pick(rng, 1, 4);
    RecurrentLayer layer(kind, f, h);
    std::vector<Parameter*> params;
    layer.visit("rnn", [&](const std::string&, Parameter& p) {
        randomize(p.value, rng);
        params.push_back(&p);
    });
    IntervalSequence seq;
    for (std::size_t t = 0; t < len; ++t) {
        Tensor x({f});
        randomize(x, rng, 1.0);
        seq.features.push_back(x);
        seq.deltas.push_back(t == 0 ? 0.0 : std::uniform_real_distribution<>(30.0, 500.0)(rng));
    }
    const std::vector<double> r = oracle::random_vector(h, rng);
    layer.zero_grad();
    layer.forward(seq);
    const std::vector<Tensor> grad_x = layer.backward(Tensor({h}, r));
    auto objective = [&] { return oracle::linear_functional(unroll(seq, layer.cell()), r); };
    double scale = 0.0;
    for (const auto& g : grad_x)
        for (double v : g.values()) scale = std::max(scale, std::abs(v));
    for (auto* p : params)
        for (double v : p->grad.values()) scale = std::max(scale, std::abs(v));
    // The deltas amplify w_dt perturbations; a wider step keeps roundoff down.
    const double step = 1e-5;
    double worst = 0.0;
    for (std::size_t t = 0; t < len; ++t) {
        worst = std::max(worst,
                         oracle::fd_max_rel_error(objective, seq.features[t].values(), grad_x[t].values(), step, scale));
    }
    for (auto* p : params) {
        const Tensor analytic = p->grad;
        worst = std::max(worst, oracle::fd_max_rel_error(objective, p->value.values(), analytic.values(), step, scale));
    }
    return worst;
}

inline double cross_entropy_instance(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t k = pick(rng, 2, 5);
    Tensor logits({k});
    randomize(logits, rng, 2.0);
    Tensor weights({k});
    for (auto& w : weights.values()) w = std::uniform_real_distribution<>(0.2, 3.0)(rng);
    const std::size_t label = pick(rng, 0, k - 1);
    const Tensor analytic = cross_entropy(logits, label, weights).grad_logits;
    return oracle::fd_max_rel_error([&] { return cross_entropy(logits, label, weights).loss; }, logits.values(),
                                    analytic.values());
}

inline double cox_instance(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t n = pick(rng, 2, 30);
    const auto labels = oracle::random_labels(n, rng);
    std::vector<double> risks = oracle::random_vector(n, rng);
    const std::vector<double> analytic = cox_loss_grad(risks, labels);
    return oracle::fd_max_rel_error([&] { return cox_loss(risks, labels); }, risks, analytic);
}

}  // namespace gradcheck
