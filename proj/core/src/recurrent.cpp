#include "lcsurv/recurrent.hpp"

#include <cmath>
#include <numbers>

#include "lcsurv/error.hpp"

namespace lcsurv {

std::string to_string(CellKind kind) {
    switch (kind) {
        case CellKind::lstm: return "lstm";
        case CellKind::talstm: return "talstm";
        case CellKind::tlstm: return "tlstm";
    }
    return "unknown";
}

CellKind parse_cell_kind(const std::string& name) {
    if (name == "lstm") return CellKind::lstm;
    if (name == "talstm") return CellKind::talstm;
    if (name == "tlstm") return CellKind::tlstm;
    throw ConfigError("unknown recurrent cell kind '" + name + "'");
}

RnnState RnnState::zeros(std::size_t hidden) { return {Tensor({hidden}), Tensor({hidden})}; }

void IntervalSequence::validate() const {
    if (features.empty()) throw ArgumentError("interval sequence is empty");
    if (deltas.size() != features.size()) {
        throw ArgumentError("interval sequence has " + std::to_string(features.size()) + " features but " +
                            std::to_string(deltas.size()) + " deltas");
    }
    if (deltas[0] != 0.0) throw ArgumentError("first interval must be 0 days");
    for (double d : deltas) {
        if (!(d >= 0.0)) throw ArgumentError("negative or NaN interval in sequence");
    }
}

namespace {

inline double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

void orthogonal(Tensor& w, std::size_t row0, std::size_t n, Rng& rng) {
    // Gram-Schmidt on an n x n Gaussian block written at rows [row0, row0 + n).
    const std::size_t cols = w.dim(1);
    std::normal_distribution<double> normal;
    std::vector<std::vector<double>> q(n, std::vector<double>(cols));
    for (std::size_t r = 0; r < n; ++r) {
        for (;;) {
            for (auto& v : q[r]) v = normal(rng);
            for (std::size_t k = 0; k < r; ++k) {
                const double proj = dot(q[r], q[k]);
                for (std::size_t c = 0; c < cols; ++c) q[r][c] -= proj * q[k][c];
            }
            const double norm = std::sqrt(dot(q[r], q[r]));
            if (norm > 1e-8) {
                for (auto& v : q[r]) v /= norm;
                break;
            }
        }
        for (std::size_t c = 0; c < cols; ++c) w[(row0 + r) * cols + c] = q[r][c];
    }
}

// y += M x for M [rows, cols] row-major.
void matvec_add(const Tensor& m, const double* x, double* y) {
    const std::size_t rows = m.dim(0), cols = m.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* mr = m.data() + r * cols;
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += mr[c] * x[c];
        y[r] += s;
    }
}

// y += M^T g, and dM += g x^T.
void matvec_backward(const Tensor& m, Tensor& dm, const double* x, const double* g, double* y) {
    const std::size_t rows = m.dim(0), cols = m.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
        const double gr = g[r];
        if (gr == 0.0) continue;
        const double* mr = m.data() + r * cols;
        double* dmr = dm.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) {
            dmr[c] += gr * x[c];
            if (y) y[c] += mr[c] * gr;
        }
    }
}

}  // namespace

RecurrentCell::RecurrentCell(CellKind kind, std::size_t input_size, std::size_t hidden, double delta_scale_days)
    : kind_(kind), input_(input_size), hidden_(hidden), delta_scale_(delta_scale_days) {
    if (input_size == 0 || hidden == 0) throw ConfigError("recurrent cell needs positive input and hidden sizes");
    if (!(delta_scale_days > 0.0)) throw ConfigError("delta scale must be positive");
    params_.kind = kind == CellKind::lstm ? LayerKind::lstm : kind == CellKind::talstm ? LayerKind::talstm
                                                                                       : LayerKind::tlstm;
    params_.weights.emplace_back("w_x", Tensor({4 * hidden, input_size}));
    params_.weights.emplace_back("w_h", Tensor({4 * hidden, hidden}));
    params_.biases.emplace_back("b", Tensor({4 * hidden}));
    if (kind == CellKind::talstm) {
        params_.weights.emplace_back("w_d", Tensor({hidden, hidden}));
        params_.biases.emplace_back("b_d", Tensor({hidden}));
    } else if (kind == CellKind::tlstm) {
        params_.weights.emplace_back("w_dt", Tensor({4 * hidden}));
    }
}

Parameter& RecurrentCell::param(const std::string& name) {
    for (auto* group : {&params_.weights, &params_.biases}) {
        for (auto& p : *group) {
            if (p.name == name) return p;
        }
    }
    throw ArgumentError(to_string(kind_) + " cell has no parameter '" + name + "'");
}

const Parameter& RecurrentCell::param(const std::string& name) const {
    return const_cast<RecurrentCell*>(this)->param(name);
}

void RecurrentCell::init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_));
    std::uniform_real_distribution<double> uniform(-bound, bound);
    for (auto& v : param("w_x").value.values()) v = uniform(rng);
    auto& wh = param("w_h").value;
    for (std::size_t gate = 0; gate < 4; ++gate) orthogonal(wh, gate * hidden_, hidden_, rng);
    param("b").value.zero();
    if (kind_ == CellKind::talstm) {
        orthogonal(param("w_d").value, 0, hidden_, rng);
        param("b_d").value.zero();
    } else if (kind_ == CellKind::tlstm) {
        for (auto& v : param("w_dt").value.values()) v = uniform(rng);
    }
}

double RecurrentCell::scale_delta(double delta_days) const { return delta_days / delta_scale_; }

double RecurrentCell::decay(double delta_days) const {
    return 1.0 / std::log(std::numbers::e + scale_delta(delta_days));
}

RnnState RecurrentCell::step(const Tensor& x, const RnnState& state, double delta_days, StepCache* cache) const {
    if (x.size() != input_) {
        throw DimensionError("recurrent step: input has " + std::to_string(x.size()) + " features, cell expects " +
                             std::to_string(input_));
    }
    if (state.h.size() != hidden_ || state.c.size() != hidden_) {
        throw DimensionError("recurrent step: state size differs from hidden size " + std::to_string(hidden_));
    }
    if (!x.all_finite()) throw NumericError("recurrent step: non-finite value in input features");
    if (!(delta_days >= 0.0)) throw ArgumentError("recurrent step: negative interval " + std::to_string(delta_days));

    const std::size_t H = hidden_;
    const double dts = scale_delta(delta_days);

    Tensor c_adj = state.c;
    Tensor short_term;
    if (kind_ == CellKind::talstm) {
        short_term = param("b_d").value;
        matvec_add(param("w_d").value, state.c.data(), short_term.data());
        const double g = decay(delta_days);
        for (std::size_t k = 0; k < H; ++k) {
            short_term[k] = std::tanh(short_term[k]);
            c_adj[k] = (state.c[k] - short_term[k]) + short_term[k] * g;
        }
    }

    Tensor pre = param("b").value;
    matvec_add(param("w_x").value, x.data(), pre.data());
    matvec_add(param("w_h").value, state.h.data(), pre.data());
    if (kind_ == CellKind::tlstm) {
        const auto& wdt = param("w_dt").value;
        for (std::size_t k = 0; k < 4 * H; ++k) pre[k] += wdt[k] * dts;
    }

    Tensor gi({H}), gf({H}), gg({H}), go({H}), tanh_c({H});
    RnnState next = RnnState::zeros(H);
    for (std::size_t k = 0; k < H; ++k) {
        gi[k] = sigmoid(pre[k]);
        gf[k] = sigmoid(pre[H + k]);
        gg[k] = std::tanh(pre[2 * H + k]);
        go[k] = sigmoid(pre[3 * H + k]);
        next.c[k] = gf[k] * c_adj[k] + gi[k] * gg[k];
        tanh_c[k] = std::tanh(next.c[k]);
        next.h[k] = go[k] * tanh_c[k];
    }
    if (!next.h.all_finite() || !next.c.all_finite()) throw NumericError("recurrent step produced a non-finite state");

    if (cache) {
        *cache = StepCache{x, state.h, state.c, std::move(c_adj), std::move(short_term),
                           std::move(gi), std::move(gf), std::move(gg), std::move(go), std::move(tanh_c), dts};
    }
    return next;
}

RecurrentCell::StepGrad RecurrentCell::backward(const StepCache& s, const Tensor& dh, const Tensor& dc) {
    const std::size_t H = hidden_;
    Tensor dpre({4 * H});
    Tensor dc_adj({H});
    for (std::size_t k = 0; k < H; ++k) {
        const double dct = dc[k] + dh[k] * s.go[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
        dpre[k] = dct * s.gg[k] * s.gi[k] * (1.0 - s.gi[k]);
        dpre[H + k] = dct * s.c_adj[k] * s.gf[k] * (1.0 - s.gf[k]);
        dpre[2 * H + k] = dct * s.gi[k] * (1.0 - s.gg[k] * s.gg[k]);
        dpre[3 * H + k] = dh[k] * s.tanh_c[k] * s.go[k] * (1.0 - s.go[k]);
        dc_adj[k] = dct * s.gf[k];
    }

    StepGrad grad{Tensor({input_}), Tensor({H}), Tensor({H})};
    auto& b = param("b");
    for (std::size_t k = 0; k < 4 * H; ++k) b.grad[k] += dpre[k];
    auto& wx = param("w_x");
    matvec_backward(wx.value, wx.grad, s.x.data(), dpre.data(), grad.x.data());
    auto& wh = param("w_h");
    matvec_backward(wh.value, wh.grad, s.h_prev.data(), dpre.data(), grad.h.data());

    if (kind_ == CellKind::tlstm) {
        auto& wdt = param("w_dt");
        for (std::size_t k = 0; k < 4 * H; ++k) wdt.grad[k] += dpre[k] * s.delta_scaled;
    }

    grad.c = dc_adj;
    if (kind_ == CellKind::talstm) {
        const double g = 1.0 / std::log(std::numbers::e + s.delta_scaled);
        Tensor dz({H});
        auto& bd = param("b_d");
        for (std::size_t k = 0; k < H; ++k) {
            dz[k] = dc_adj[k] * (g - 1.0) * (1.0 - s.short_term[k] * s.short_term[k]);
            bd.grad[k] += dz[k];
        }
        auto& wd = param("w_d");
        matvec_backward(wd.value, wd.grad, s.c_prev.data(), dz.data(), grad.c.data());
    }
    return grad;
}

Tensor unroll(const IntervalSequence& seq, const RecurrentCell& cell) {
    seq.validate();
    RnnState state = RnnState::zeros(cell.hidden_size());
    for (std::size_t t = 0; t < seq.length(); ++t) state = cell.step(seq.features[t], state, seq.deltas[t]);
    return state.h;
}

RecurrentLayer::RecurrentLayer(CellKind kind, std::size_t input_size, std::size_t hidden, std::size_t depth,
                               double delta_scale_days) {
    if (depth == 0) throw ConfigError("recurrent layer depth must be at least 1");
    for (std::size_t l = 0; l < depth; ++l) {
        cells_.emplace_back(kind, l == 0 ? input_size : hidden, hidden, delta_scale_days);
    }
}

void RecurrentLayer::init(Rng& rng) {
    for (auto& c : cells_) c.init(rng);
}

void RecurrentLayer::zero_grad() {
    for (auto& c : cells_) c.params().zero_grad();
}

void RecurrentLayer::visit(const std::string& prefix, const ParameterVisitor& visit) {
    for (std::size_t l = 0; l < cells_.size(); ++l) cells_[l].visit(prefix + ".cell" + std::to_string(l), visit);
}

Tensor RecurrentLayer::run(const IntervalSequence& seq, SequenceCache* cache) const {
    seq.validate();
    std::vector<Tensor> inputs = seq.features;
    if (cache) cache->assign(cells_.size(), {});
    for (std::size_t l = 0; l < cells_.size(); ++l) {
        RnnState state = RnnState::zeros(cells_[l].hidden_size());
        if (cache) (*cache)[l].resize(seq.length());
        for (std::size_t t = 0; t < seq.length(); ++t) {
            state = cells_[l].step(inputs[t], state, seq.deltas[t], cache ? &(*cache)[l][t] : nullptr);
            inputs[t] = state.h;
        }
    }
    return inputs.back();
}

Tensor RecurrentLayer::forward(const IntervalSequence& seq) {
    caches_.assign(1, {});
    return run(seq, &caches_[0]);
}

Tensor RecurrentLayer::forward_batch(std::span<const IntervalSequence> batch) {
    if (batch.empty()) throw ArgumentError("recurrent layer: empty batch");
    caches_.assign(batch.size(), {});
    const std::size_t H = hidden_size();
    Tensor out({batch.size(), H});
    for (std::size_t n = 0; n < batch.size(); ++n) {
        Tensor h = run(batch[n], &caches_[n]);
        std::copy(h.raw().begin(), h.raw().end(), out.data() + n * H);
    }
    return out;
}

std::vector<Tensor> RecurrentLayer::backprop(const SequenceCache& cache, const Tensor& grad_h) {
    const std::size_t steps = cache.front().size();
    // Gradient arriving at each step's hidden output from the layer above.
    std::vector<Tensor> external(steps, Tensor({hidden_size()}));
    external.back() = grad_h;
    std::vector<Tensor> grad_inputs;
    for (std::size_t l = cells_.size(); l-- > 0;) {
        auto& cell = cells_[l];
        Tensor dh({cell.hidden_size()}), dc({cell.hidden_size()});
        grad_inputs.assign(steps, Tensor({cell.input_size()}));
        for (std::size_t t = steps; t-- > 0;) {
            for (std::size_t k = 0; k < dh.size(); ++k) dh[k] += external[t][k];
            auto g = cell.backward(cache[l][t], dh, dc);
            grad_inputs[t] = std::move(g.x);
            dh = std::move(g.h);
            dc = std::move(g.c);
        }
        external = grad_inputs;
    }
    return grad_inputs;
}

std::vector<Tensor> RecurrentLayer::backward(const Tensor& grad_h) {
    if (caches_.size() != 1) throw StateError("recurrent layer: backward called before forward");
    if (grad_h.size() != hidden_size()) throw DimensionError("recurrent layer: gradient size differs from hidden size");
    return backprop(caches_[0], grad_h.reshaped({hidden_size()}));
}

std::vector<std::vector<Tensor>> RecurrentLayer::backward_batch(const Tensor& grad_h) {
    if (caches_.empty()) throw StateError("recurrent layer: backward called before forward");
    const std::size_t H = hidden_size();
    if (grad_h.size() != caches_.size() * H) {
        throw DimensionError("recurrent layer: gradient shape " + shape_string(grad_h.shape()) + " does not match batch");
    }
    const Tensor grads = grad_h.reshaped({caches_.size(), H});
    std::vector<std::vector<Tensor>> out;
    out.reserve(caches_.size());
    for (std::size_t n = 0; n < caches_.size(); ++n) out.push_back(backprop(caches_[n], grads.slice(n)));
    return out;
}

}  // namespace lcsurv
