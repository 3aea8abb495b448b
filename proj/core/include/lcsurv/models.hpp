#pragma once

// Network assembly: the CNN (ResNet-10 backbone or, for feature fixtures, the
// fully connected encoder alone) with classifier or Cox heads, the CRNN that
// runs a recurrent layer over frozen CNN features, two-step cause
// classification and Grad-CAM.

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lcsurv/checkpoint.hpp"
#include "lcsurv/cohort.hpp"
#include "lcsurv/layers.hpp"
#include "lcsurv/optimize.hpp"
#include "lcsurv/recurrent.hpp"

namespace lcsurv {

enum class HeadKind { classifier2, classifier_cause2, cox };

std::string to_string(HeadKind kind);
HeadKind parse_head_kind(const std::string& name);

struct ModelConfig {
    // features: per-timepoint vectors go straight into the FC encoder.
    // volumes: [1, V, V, V] volumes pass through the ResNet-10 backbone first.
    InputMode input = InputMode::features;
    Shape input_shape{3};
    double width = 0.25;
    std::size_t stem_channels = 64;
    std::array<std::size_t, 4> backbone_channels{64, 128, 256, 512};
    std::array<std::size_t, 2> fc_dims{512, 32};
    CellKind rnn_kind = CellKind::lstm;
    std::size_t rnn_hx = 32;
    HeadKind head = HeadKind::classifier2;
    double dropout_fc = 0.5;
    double dropout_rnn = 0.3;

    static std::size_t scaled(std::size_t base, double width);
    std::size_t fc1_dim() const { return scaled(fc_dims[0], width); }
    std::size_t feature_dim() const { return scaled(fc_dims[1], width); }
    std::size_t head_outputs() const { return head == HeadKind::cox ? 1 : 2; }
    void validate() const;

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

// Adds the batch axis: [N, input_shape...].
Shape batch_shape(const ModelConfig& cfg, std::size_t n);

class CnnModel {
public:
    struct Output {
        Tensor features;  // [N, feature_dim]
        Tensor head;      // [N, head_outputs]
    };

    CnnModel() = default;
    explicit CnnModel(ModelConfig cfg);

    void init(Rng& rng);
    const ModelConfig& config() const { return cfg_; }
    bool has_backbone() const { return !blocks_.empty(); }

    // x: [N, input_shape...]. Dropout draws from rng in training mode.
    Output forward(const Tensor& x, Mode mode, Rng& rng);
    // Eval-mode features for a batch.
    Tensor encode(const Tensor& x);

    // Accumulates parameter gradients from d(loss)/d(head) and, optionally,
    // d(loss)/d(features). Returns d(loss)/d(input).
    Tensor backward(const Tensor& grad_head, const Tensor* grad_features = nullptr);
    // Backpropagates d(target)/d(features) down to the last residual block and
    // returns the gradient there; requires a backbone.
    Tensor backward_features_to_backbone(const Tensor& grad_features);
    Tensor backward_head_to_backbone(const Tensor& grad_head);
    // Output of the last residual block from the most recent forward.
    const Tensor& backbone_activation() const;

    void visit(const std::string& prefix, const ParameterVisitor& visit);
    void visit_buffers(const std::string& prefix, const BufferVisitor& visit);
    void zero_grad();
    Dense& head() { return head_; }

private:
    Tensor features_backward(const Tensor& grad_features, bool to_input);

    ModelConfig cfg_;
    Conv3d stem_;
    BatchNorm3d stem_bn_;
    Relu stem_relu_;
    std::vector<ResidualBlock> blocks_;
    GlobalAvgPool3d pool_;
    Dense fc1_, fc2_, head_;
    Relu relu1_, relu2_;
    Dropout drop1_{0.5}, drop2_{0.5};
    std::optional<Tensor> backbone_out_;
};

// Recurrent model over frozen CNN features. Only the recurrent layer, the FC
// layer and the head are trainable.
class CrnnModel {
public:
    CrnnModel() = default;
    explicit CrnnModel(ModelConfig cfg);

    void init(Rng& rng);
    const ModelConfig& config() const { return cfg_; }

    void set_encoder(CnnModel encoder);
    bool has_encoder() const { return encoder_.has_value(); }
    CnnModel& encoder();

    // Eval-mode CNN features per timepoint; deltas in days (deltas[0] == 0).
    IntervalSequence encode(std::span<const Tensor> timepoints, std::span<const double> deltas);

    // [N, head_outputs].
    Tensor forward(std::span<const IntervalSequence> batch, Mode mode, Rng& rng);
    // Accumulates gradients of the trainable subset; returns d/d(features) per
    // sequence and timepoint.
    std::vector<std::vector<Tensor>> backward(const Tensor& grad_head);

    // Trainable parameters only.
    void visit(const std::string& prefix, const ParameterVisitor& visit);
    void zero_grad();
    RecurrentLayer& rnn() { return rnn_; }
    Dense& head() { return head_; }

private:
    ModelConfig cfg_;
    std::optional<CnnModel> encoder_;
    RecurrentLayer rnn_;
    Dense fc_, head_;
    Relu relu_;
    Dropout drop_{0.3};
};

ParamRefs collect_params(CnnModel& model);
ParamRefs collect_params(CrnnModel& model);

// Probability of the positive class (index 1) for classifier heads, the risk
// itself for Cox heads. head: [N, K].
std::vector<double> head_scores(const Tensor& head, HeadKind kind);

// Survivor when mortality_prob < 0.5, otherwise the more probable cause
// (cardiac on ties). cause_prob = (cardiac, respiratory).
MortalityClass two_step_classify(double mortality_prob, const std::array<double, 2>& cause_prob);

struct GradcamResult {
    Tensor heatmap;          // input spatial shape, values in [0, 1]
    bool zero_gradient = false;
};

// target_class selects the logit for classifier heads and is ignored for Cox
// heads, where the risk itself is the target.
GradcamResult gradcam(CnnModel& model, const Tensor& volume, std::size_t target_class = 1);
// One heatmap per timepoint of a CRNN subject.
std::vector<GradcamResult> gradcam(CrnnModel& model, std::span<const Tensor> timepoints, std::span<const double> deltas,
                                   std::size_t target_class = 1);

// Checkpoints carry the model config in their metadata plus every parameter
// and batch-norm buffer. CRNN checkpoints embed the encoder under "encoder.".
Checkpoint to_checkpoint(CnnModel& model, const std::string& extra_metadata = "{}");
Checkpoint to_checkpoint(CrnnModel& model, const std::string& extra_metadata = "{}");
CnnModel cnn_from_checkpoint(const Checkpoint& ckpt);
CrnnModel crnn_from_checkpoint(const Checkpoint& ckpt);
bool is_crnn_checkpoint(const Checkpoint& ckpt);

// Parameter snapshot helpers for best-epoch tracking.
void load_tensors(CnnModel& model, const Checkpoint& ckpt, const std::string& prefix = "");
void load_tensors(CrnnModel& model, const Checkpoint& ckpt);

}  // namespace lcsurv
