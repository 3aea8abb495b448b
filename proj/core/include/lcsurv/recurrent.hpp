#pragma once

// Recurrent cells over irregularly spaced screening timepoints.
//
// All three cells share the gate layout (input, forget, cell, output) with
// W_x: [4h, f], W_h: [4h, h], b: [4h]. Interval-aware variants add:
//   talstm  W_d: [h, h], b_d: [h]. The cell memory is split before the update:
//           s = tanh(W_d c + b_d), c_adj = (c - s) + s * g(dt), g(dt) = 1 / log(e + dt)
//   tlstm   w_dt: [4h]. Every gate pre-activation gains w_dt * dt.
// dt is the elapsed time in days divided by delta_scale_days (365.25 by default).

#include <optional>
#include <span>
#include <vector>

#include "lcsurv/layers.hpp"

namespace lcsurv {

enum class CellKind { lstm, talstm, tlstm };

std::string to_string(CellKind kind);
CellKind parse_cell_kind(const std::string& name);

struct RnnState {
    Tensor h;
    Tensor c;

    static RnnState zeros(std::size_t hidden);
};

// One feature vector per screening point in time order; deltas[i] is the
// number of days since the previous point, deltas[0] == 0.
struct IntervalSequence {
    std::vector<Tensor> features;
    std::vector<double> deltas;

    std::size_t length() const { return features.size(); }
    void validate() const;
};

class RecurrentCell {
public:
    struct StepCache {
        Tensor x, h_prev, c_prev, c_adj, short_term;
        Tensor gi, gf, gg, go, tanh_c;
        double delta_scaled = 0.0;
    };
    struct StepGrad {
        Tensor x, h, c;
    };

    RecurrentCell() = default;
    RecurrentCell(CellKind kind, std::size_t input_size, std::size_t hidden, double delta_scale_days = 365.25);

    // Orthogonal recurrent kernels, uniform input kernels, zero biases.
    void init(Rng& rng);

    RnnState step(const Tensor& x, const RnnState& state, double delta_days, StepCache* cache = nullptr) const;
    // Accumulates parameter gradients; dh, dc are the gradients w.r.t. the
    // step's output state.
    StepGrad backward(const StepCache& cache, const Tensor& dh, const Tensor& dc);

    // Elapsed-time decay used by the talstm memory adjustment.
    double decay(double delta_days) const;
    double scale_delta(double delta_days) const;

    CellKind kind() const { return kind_; }
    std::size_t input_size() const { return input_; }
    std::size_t hidden_size() const { return hidden_; }
    double delta_scale_days() const { return delta_scale_; }
    LayerParams& params() { return params_; }
    const LayerParams& params() const { return params_; }
    Parameter& param(const std::string& name);
    const Parameter& param(const std::string& name) const;
    void visit(const std::string& prefix, const ParameterVisitor& visit) { visit_params(params_, prefix, visit); }

private:
    CellKind kind_ = CellKind::lstm;
    std::size_t input_ = 0, hidden_ = 0;
    double delta_scale_ = 365.25;
    LayerParams params_;
};

// Runs one cell from the zero state over a whole sequence and returns the final
// hidden state. No caches are kept.
Tensor unroll(const IntervalSequence& seq, const RecurrentCell& cell);

// Stack of recurrent cells unrolled over sequences, with BPTT.
class RecurrentLayer {
public:
    RecurrentLayer() = default;
    RecurrentLayer(CellKind kind, std::size_t input_size, std::size_t hidden, std::size_t depth = 1,
                   double delta_scale_days = 365.25);

    void init(Rng& rng);
    // Final hidden state of the top cell, [hx].
    Tensor forward(const IntervalSequence& seq);
    // [N, hx] for a batch of sequences (lengths may differ).
    Tensor forward_batch(std::span<const IntervalSequence> batch);
    std::vector<Tensor> backward(const Tensor& grad_h);
    std::vector<std::vector<Tensor>> backward_batch(const Tensor& grad_h);

    std::size_t hidden_size() const { return cells_.front().hidden_size(); }
    std::size_t depth() const { return cells_.size(); }
    CellKind kind() const { return cells_.front().kind(); }
    RecurrentCell& cell(std::size_t i = 0) { return cells_.at(i); }
    const RecurrentCell& cell(std::size_t i = 0) const { return cells_.at(i); }
    void zero_grad();
    void visit(const std::string& prefix, const ParameterVisitor& visit);

private:
    using SequenceCache = std::vector<std::vector<RecurrentCell::StepCache>>;  // [layer][step]
    Tensor run(const IntervalSequence& seq, SequenceCache* cache) const;
    std::vector<Tensor> backprop(const SequenceCache& cache, const Tensor& grad_h);

    std::vector<RecurrentCell> cells_;
    std::vector<SequenceCache> caches_;
};

}  // namespace lcsurv
