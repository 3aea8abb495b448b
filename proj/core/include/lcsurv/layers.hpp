#pragma once

// Differentiable building blocks with explicit forward/backward calls.
//
// Every layer caches what its backward pass needs during forward(). backward()
// accumulates into the parameter gradient buffers (it never overwrites them);
// call zero_grad() between mini-batches. Tensors carry a leading batch axis
// where noted; unbatched input is accepted and treated as a batch of one.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lcsurv/tensor.hpp"

namespace lcsurv {

enum class LayerKind { dense, conv3d, batchnorm, lstm, talstm, tlstm };
enum class Mode { train, eval };

std::string to_string(LayerKind kind);

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string name_, Tensor value_);
};

struct LayerParams {
    LayerKind kind = LayerKind::dense;
    std::vector<Parameter> weights;
    std::vector<Parameter> biases;

    void zero_grad();
    void set_dtype(Dtype dtype);
    // Throws DimensionError if a gradient buffer does not match its parameter.
    void check_consistent() const;
};

using ParameterVisitor = std::function<void(const std::string& name, Parameter& param)>;
using BufferVisitor = std::function<void(const std::string& name, Tensor& buffer)>;

void visit_params(LayerParams& params, const std::string& prefix, const ParameterVisitor& visit);

// out = W x + b, W: [n_out, n_in]. Input [n_in] or [N, n_in].
class Dense {
public:
    Dense() = default;
    Dense(std::size_t n_in, std::size_t n_out);
    explicit Dense(LayerParams params);

    void init(Rng& rng);
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_out);

    std::size_t in_features() const { return params_.weights[0].value.dim(1); }
    std::size_t out_features() const { return params_.weights[0].value.dim(0); }
    LayerParams& params() { return params_; }
    const LayerParams& params() const { return params_; }
    Parameter& weight() { return params_.weights[0]; }
    Parameter& bias() { return params_.biases[0]; }
    void visit(const std::string& prefix, const ParameterVisitor& visit) { visit_params(params_, prefix, visit); }

private:
    LayerParams params_;
    std::optional<Tensor> cached_x_;
};

// 3D cross-correlation with a cubic odd kernel. Weight [C_out, C_in, k, k, k].
// Input [N, C_in, D, H, W] or [C_in, D, H, W].
class Conv3d {
public:
    Conv3d() = default;
    Conv3d(std::size_t c_in, std::size_t c_out, std::size_t kernel, std::size_t stride = 1, std::size_t padding = 0);

    void init(Rng& rng);
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_out);

    Shape output_shape(const Shape& input_shape) const;
    std::size_t in_channels() const { return c_in_; }
    std::size_t out_channels() const { return c_out_; }
    std::size_t kernel() const { return k_; }
    std::size_t stride() const { return stride_; }
    std::size_t padding() const { return pad_; }
    LayerParams& params() { return params_; }
    const LayerParams& params() const { return params_; }
    Parameter& weight() { return params_.weights[0]; }
    Parameter& bias() { return params_.biases[0]; }
    void visit(const std::string& prefix, const ParameterVisitor& visit) { visit_params(params_, prefix, visit); }

private:
    std::size_t c_in_ = 0, c_out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
    LayerParams params_;
    std::optional<Tensor> cached_x_;
};

// Per-channel batch normalization over [N, C, ...]. Training mode normalizes
// with batch statistics and updates the running estimates; eval mode uses the
// running estimates.
class BatchNorm3d {
public:
    BatchNorm3d() = default;
    explicit BatchNorm3d(std::size_t channels, double momentum = 0.1, double eps = 1e-5);

    void init(Rng&) {}
    Tensor forward(const Tensor& x, Mode mode);
    Tensor backward(const Tensor& grad_out);

    std::size_t channels() const { return running_mean_.size(); }
    LayerParams& params() { return params_; }
    const LayerParams& params() const { return params_; }
    Parameter& gamma() { return params_.weights[0]; }
    Parameter& beta() { return params_.biases[0]; }
    Tensor& running_mean() { return running_mean_; }
    Tensor& running_var() { return running_var_; }
    double eps() const { return eps_; }
    void visit(const std::string& prefix, const ParameterVisitor& visit) { visit_params(params_, prefix, visit); }
    void visit_buffers(const std::string& prefix, const BufferVisitor& visit);

private:
    struct Cache {
        Tensor x_hat;
        std::vector<double> inv_std;
        Mode mode;
    };
    LayerParams params_;
    Tensor running_mean_;
    Tensor running_var_;
    double momentum_ = 0.1;
    double eps_ = 1e-5;
    std::optional<Cache> cache_;
};

class Relu {
public:
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_out);

private:
    std::optional<Tensor> cached_x_;
};

// Inverted dropout: survivors are scaled by 1/(1-p) in training, eval is identity.
class Dropout {
public:
    explicit Dropout(double p = 0.5);
    Tensor forward(const Tensor& x, Mode mode, Rng& rng);
    Tensor backward(const Tensor& grad_out);
    double probability() const { return p_; }

private:
    double p_;
    std::optional<Tensor> mask_;
};

// [N, C, D, H, W] -> [N, C] (or [C, D, H, W] -> [C]).
class GlobalAvgPool3d {
public:
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_out);

private:
    std::optional<Shape> input_shape_;
};

// relu(conv-bn-relu-conv-bn(x) + skip(x)); the skip path is a strided 1x1x1
// conv + bn projection when downsampling, identity otherwise.
class ResidualBlock {
public:
    ResidualBlock() = default;
    ResidualBlock(std::size_t c_in, std::size_t c_out, bool downsample);

    void init(Rng& rng);
    Tensor forward(const Tensor& x, Mode mode);
    Tensor backward(const Tensor& grad_out);

    bool downsamples() const { return projection_.has_value(); }
    Conv3d& conv1() { return conv1_; }
    Conv3d& conv2() { return conv2_; }
    BatchNorm3d& bn1() { return bn1_; }
    BatchNorm3d& bn2() { return bn2_; }
    void visit(const std::string& prefix, const ParameterVisitor& visit);
    void visit_buffers(const std::string& prefix, const BufferVisitor& visit);

private:
    struct Projection {
        Conv3d conv;
        BatchNorm3d bn;
    };
    Conv3d conv1_, conv2_;
    BatchNorm3d bn1_, bn2_;
    Relu relu1_, relu_out_;
    std::optional<Projection> projection_;
};

}  // namespace lcsurv
