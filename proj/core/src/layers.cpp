#include "lcsurv/layers.hpp"

#include <algorithm>
#include <cmath>

#include "lcsurv/error.hpp"

namespace lcsurv {

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv3d: return "conv3d";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::lstm: return "lstm";
        case LayerKind::talstm: return "talstm";
        case LayerKind::tlstm: return "tlstm";
    }
    return "unknown";
}

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)), value(std::move(value_)), grad(value.shape(), 0.0, value.dtype()) {}

void LayerParams::zero_grad() {
    for (auto& p : weights) p.grad.zero();
    for (auto& p : biases) p.grad.zero();
}

void LayerParams::set_dtype(Dtype dtype) {
    for (auto* group : {&weights, &biases}) {
        for (auto& p : *group) {
            p.value.set_dtype(dtype);
            p.grad.set_dtype(dtype);
        }
    }
}

void LayerParams::check_consistent() const {
    for (const auto* group : {&weights, &biases}) {
        for (const auto& p : *group) {
            if (p.grad.shape() != p.value.shape()) {
                throw DimensionError(to_string(kind) + " parameter '" + p.name + "' has shape " +
                                     shape_string(p.value.shape()) + " but gradient " + shape_string(p.grad.shape()));
            }
        }
    }
}

void visit_params(LayerParams& params, const std::string& prefix, const ParameterVisitor& visit) {
    for (auto& p : params.weights) visit(prefix + "." + p.name, p);
    for (auto& p : params.biases) visit(prefix + "." + p.name, p);
}

namespace {

void he_normal(Tensor& t, std::size_t fan_in, Rng& rng) {
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (auto& v : t.values()) v = normal(rng);
    t.round_to_dtype();
}

void accumulate(Tensor& into, const Tensor& from) {
    for (std::size_t i = 0; i < into.size(); ++i) into[i] += from[i];
    into.round_to_dtype();
}

// Views an input as [N, rest...] with N = 1 for unbatched tensors of the given rank.
std::size_t batch_of(const Tensor& x, std::size_t unbatched_rank) {
    return x.rank() == unbatched_rank ? 1 : x.dim(0);
}

}  // namespace

// ---------------------------------------------------------------- Dense

Dense::Dense(std::size_t n_in, std::size_t n_out) {
    params_.kind = LayerKind::dense;
    params_.weights.emplace_back("weight", Tensor({n_out, n_in}));
    params_.biases.emplace_back("bias", Tensor({n_out}));
}

Dense::Dense(LayerParams params) : params_(std::move(params)) {
    if (params_.kind != LayerKind::dense || params_.weights.size() != 1 || params_.biases.size() != 1) {
        throw ConfigError("dense layer needs exactly one weight and one bias");
    }
    const auto& w = params_.weights[0].value;
    const auto& b = params_.biases[0].value;
    if (w.rank() != 2 || b.rank() != 1 || b.dim(0) != w.dim(0)) {
        throw DimensionError("dense weight " + shape_string(w.shape()) + " incompatible with bias " +
                             shape_string(b.shape()));
    }
    params_.check_consistent();
}

void Dense::init(Rng& rng) {
    he_normal(weight().value, in_features(), rng);
    bias().value.zero();
}

Tensor Dense::forward(const Tensor& x) {
    const std::size_t n_in = in_features(), n_out = out_features();
    if (x.rank() < 1 || x.rank() > 2 || x.shape().back() != n_in) {
        throw DimensionError("dense: input axis " + std::to_string(x.rank() - 1) + " has size " +
                             std::to_string(x.rank() ? x.shape().back() : 0) + ", weight axis 1 expects " +
                             std::to_string(n_in));
    }
    const std::size_t batch = batch_of(x, 1);
    const auto& w = params_.weights[0].value;
    const auto& b = params_.biases[0].value;
    Tensor out(x.rank() == 1 ? Shape{n_out} : Shape{batch, n_out}, 0.0, x.dtype());
    for (std::size_t n = 0; n < batch; ++n) {
        const double* xi = x.data() + n * n_in;
        double* yi = out.data() + n * n_out;
        for (std::size_t o = 0; o < n_out; ++o) {
            const double* wr = w.data() + o * n_in;
            double s = b[o];
            for (std::size_t i = 0; i < n_in; ++i) s += wr[i] * xi[i];
            yi[o] = s;
        }
    }
    out.round_to_dtype();
    cached_x_ = x;
    return out;
}

Tensor Dense::backward(const Tensor& grad_out) {
    if (!cached_x_) throw StateError("dense: backward called before forward");
    const Tensor& x = *cached_x_;
    const std::size_t n_in = in_features(), n_out = out_features();
    const std::size_t batch = batch_of(x, 1);
    if (grad_out.size() != batch * n_out) {
        throw DimensionError("dense: gradient shape " + shape_string(grad_out.shape()) + " does not match output");
    }
    const auto& w = params_.weights[0].value;
    auto& gw = params_.weights[0].grad;
    auto& gb = params_.biases[0].grad;
    Tensor grad_x(x.shape(), 0.0, x.dtype());
    for (std::size_t n = 0; n < batch; ++n) {
        const double* xi = x.data() + n * n_in;
        const double* go = grad_out.data() + n * n_out;
        double* gx = grad_x.data() + n * n_in;
        for (std::size_t o = 0; o < n_out; ++o) {
            const double g = go[o];
            if (g == 0.0) continue;
            gb[o] += g;
            double* gwr = gw.data() + o * n_in;
            const double* wr = w.data() + o * n_in;
            for (std::size_t i = 0; i < n_in; ++i) {
                gwr[i] += g * xi[i];
                gx[i] += wr[i] * g;
            }
        }
    }
    gw.round_to_dtype();
    gb.round_to_dtype();
    grad_x.round_to_dtype();
    return grad_x;
}

// ---------------------------------------------------------------- Conv3d

Conv3d::Conv3d(std::size_t c_in, std::size_t c_out, std::size_t kernel, std::size_t stride, std::size_t padding)
    : c_in_(c_in), c_out_(c_out), k_(kernel), stride_(stride), pad_(padding) {
    if (kernel % 2 == 0) throw ConfigError("conv3d: kernel size " + std::to_string(kernel) + " must be odd");
    if (stride == 0) throw ConfigError("conv3d: stride must be positive");
    params_.kind = LayerKind::conv3d;
    params_.weights.emplace_back("weight", Tensor({c_out, c_in, kernel, kernel, kernel}));
    params_.biases.emplace_back("bias", Tensor({c_out}));
}

void Conv3d::init(Rng& rng) {
    he_normal(weight().value, c_in_ * k_ * k_ * k_, rng);
    bias().value.zero();
}

Shape Conv3d::output_shape(const Shape& in) const {
    if (in.size() != 4 && in.size() != 5) {
        throw DimensionError("conv3d: expected [C,D,H,W] or [N,C,D,H,W], got " + shape_string(in));
    }
    const std::size_t off = in.size() - 4;
    if (in[off] != c_in_) {
        throw DimensionError("conv3d: input channel axis " + std::to_string(off) + " has " + std::to_string(in[off]) +
                             " channels, weight expects " + std::to_string(c_in_));
    }
    Shape out = in;
    out[off] = c_out_;
    for (std::size_t a = 1; a <= 3; ++a) {
        const long span = static_cast<long>(in[off + a]) + 2 * static_cast<long>(pad_) - static_cast<long>(k_);
        if (span < 0) {
            throw ConfigError("conv3d: output axis " + std::to_string(off + a) + " would be empty for input " +
                              shape_string(in));
        }
        out[off + a] = static_cast<std::size_t>(span) / stride_ + 1;
    }
    return out;
}

namespace {

// Range of output positions o with 0 <= o*stride - pad + k_off < in_size.
inline void valid_range(std::size_t k_off, std::size_t pad, std::size_t stride, std::size_t in_size,
                        std::size_t out_size, std::size_t& lo, std::size_t& hi) {
    const long k = static_cast<long>(k_off), p = static_cast<long>(pad), s = static_cast<long>(stride);
    long first = 0;
    if (p > k) first = (p - k + s - 1) / s;
    long last = (static_cast<long>(in_size) - 1 + p - k);
    last = last < 0 ? -1 : last / s;
    lo = static_cast<std::size_t>(std::max<long>(first, 0));
    hi = static_cast<std::size_t>(std::min<long>(last + 1, static_cast<long>(out_size)));
    if (hi < lo) hi = lo;
}

}  // namespace

Tensor Conv3d::forward(const Tensor& x) {
    const Shape out_shape = output_shape(x.shape());
    const std::size_t off = x.rank() - 4;
    const std::size_t batch = off ? x.dim(0) : 1;
    const std::size_t D = x.shape()[off + 1], H = x.shape()[off + 2], W = x.shape()[off + 3];
    const std::size_t OD = out_shape[off + 1], OH = out_shape[off + 2], OW = out_shape[off + 3];
    const auto& w = params_.weights[0].value;
    const auto& b = params_.biases[0].value;
    Tensor out(out_shape, 0.0, x.dtype());
    const std::size_t in_vol = D * H * W, out_vol = OD * OH * OW, kk = k_ * k_ * k_;

    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t co = 0; co < c_out_; ++co) {
            double* y = out.data() + (n * c_out_ + co) * out_vol;
            std::fill(y, y + out_vol, b[co]);
            for (std::size_t ci = 0; ci < c_in_; ++ci) {
                const double* xin = x.data() + (n * c_in_ + ci) * in_vol;
                const double* wk = w.data() + (co * c_in_ + ci) * kk;
                for (std::size_t kd = 0; kd < k_; ++kd) {
                    std::size_t d0, d1;
                    valid_range(kd, pad_, stride_, D, OD, d0, d1);
                    for (std::size_t kh = 0; kh < k_; ++kh) {
                        std::size_t h0, h1;
                        valid_range(kh, pad_, stride_, H, OH, h0, h1);
                        for (std::size_t kw = 0; kw < k_; ++kw) {
                            std::size_t w0, w1;
                            valid_range(kw, pad_, stride_, W, OW, w0, w1);
                            const double wv = wk[(kd * k_ + kh) * k_ + kw];
                            if (wv == 0.0) continue;
                            for (std::size_t od = d0; od < d1; ++od) {
                                const std::size_t id = od * stride_ + kd - pad_;
                                for (std::size_t oh = h0; oh < h1; ++oh) {
                                    const std::size_t ih = oh * stride_ + kh - pad_;
                                    const double* xrow = xin + (id * H + ih) * W;
                                    double* yrow = y + (od * OH + oh) * OW;
                                    for (std::size_t ow = w0; ow < w1; ++ow) {
                                        yrow[ow] += wv * xrow[ow * stride_ + kw - pad_];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out.round_to_dtype();
    cached_x_ = x;
    return out;
}

Tensor Conv3d::backward(const Tensor& grad_out) {
    if (!cached_x_) throw StateError("conv3d: backward called before forward");
    const Tensor& x = *cached_x_;
    const Shape out_shape = output_shape(x.shape());
    if (grad_out.shape() != out_shape) {
        throw DimensionError("conv3d: gradient shape " + shape_string(grad_out.shape()) + " does not match output " +
                             shape_string(out_shape));
    }
    const std::size_t off = x.rank() - 4;
    const std::size_t batch = off ? x.dim(0) : 1;
    const std::size_t D = x.shape()[off + 1], H = x.shape()[off + 2], W = x.shape()[off + 3];
    const std::size_t OD = out_shape[off + 1], OH = out_shape[off + 2], OW = out_shape[off + 3];
    const auto& w = params_.weights[0].value;
    auto& gw = params_.weights[0].grad;
    auto& gb = params_.biases[0].grad;
    Tensor grad_x(x.shape(), 0.0, x.dtype());
    const std::size_t in_vol = D * H * W, out_vol = OD * OH * OW, kk = k_ * k_ * k_;

    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t co = 0; co < c_out_; ++co) {
            const double* go = grad_out.data() + (n * c_out_ + co) * out_vol;
            double bsum = 0.0;
            for (std::size_t i = 0; i < out_vol; ++i) bsum += go[i];
            gb[co] += bsum;
            for (std::size_t ci = 0; ci < c_in_; ++ci) {
                const double* xin = x.data() + (n * c_in_ + ci) * in_vol;
                double* gx = grad_x.data() + (n * c_in_ + ci) * in_vol;
                const double* wk = w.data() + (co * c_in_ + ci) * kk;
                double* gwk = gw.data() + (co * c_in_ + ci) * kk;
                for (std::size_t kd = 0; kd < k_; ++kd) {
                    std::size_t d0, d1;
                    valid_range(kd, pad_, stride_, D, OD, d0, d1);
                    for (std::size_t kh = 0; kh < k_; ++kh) {
                        std::size_t h0, h1;
                        valid_range(kh, pad_, stride_, H, OH, h0, h1);
                        for (std::size_t kw = 0; kw < k_; ++kw) {
                            std::size_t w0, w1;
                            valid_range(kw, pad_, stride_, W, OW, w0, w1);
                            const double wv = wk[(kd * k_ + kh) * k_ + kw];
                            double wgrad = 0.0;
                            for (std::size_t od = d0; od < d1; ++od) {
                                const std::size_t id = od * stride_ + kd - pad_;
                                for (std::size_t oh = h0; oh < h1; ++oh) {
                                    const std::size_t ih = oh * stride_ + kh - pad_;
                                    const double* xrow = xin + (id * H + ih) * W;
                                    double* gxrow = gx + (id * H + ih) * W;
                                    const double* gorow = go + (od * OH + oh) * OW;
                                    for (std::size_t ow = w0; ow < w1; ++ow) {
                                        const std::size_t iw = ow * stride_ + kw - pad_;
                                        wgrad += gorow[ow] * xrow[iw];
                                        gxrow[iw] += wv * gorow[ow];
                                    }
                                }
                            }
                            gwk[(kd * k_ + kh) * k_ + kw] += wgrad;
                        }
                    }
                }
            }
        }
    }
    gw.round_to_dtype();
    gb.round_to_dtype();
    grad_x.round_to_dtype();
    return grad_x;
}

// ---------------------------------------------------------------- BatchNorm3d

BatchNorm3d::BatchNorm3d(std::size_t channels, double momentum, double eps)
    : running_mean_({channels}, 0.0), running_var_({channels}, 1.0), momentum_(momentum), eps_(eps) {
    params_.kind = LayerKind::batchnorm;
    params_.weights.emplace_back("gamma", Tensor({channels}, 1.0));
    params_.biases.emplace_back("beta", Tensor({channels}, 0.0));
}

void BatchNorm3d::visit_buffers(const std::string& prefix, const BufferVisitor& visit) {
    visit(prefix + ".running_mean", running_mean_);
    visit(prefix + ".running_var", running_var_);
}

Tensor BatchNorm3d::forward(const Tensor& x, Mode mode) {
    const std::size_t C = channels();
    if (x.rank() < 2 || x.dim(1) != C) {
        throw DimensionError("batchnorm: expected channel axis 1 of size " + std::to_string(C) + ", got shape " +
                             shape_string(x.shape()));
    }
    const std::size_t N = x.dim(0);
    if (mode == Mode::train && N < 2) {
        throw ConfigError("batchnorm: training mode needs a batch of at least 2, got " + std::to_string(N));
    }
    const std::size_t spatial = x.size() / (N * C);
    const auto& g = params_.weights[0].value;
    const auto& b = params_.biases[0].value;
    Cache cache{Tensor(x.shape(), 0.0, x.dtype()), std::vector<double>(C), mode};
    Tensor out(x.shape(), 0.0, x.dtype());
    const double count = static_cast<double>(N * spatial);

    for (std::size_t c = 0; c < C; ++c) {
        double mean, var;
        if (mode == Mode::train) {
            double s = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                const double* p = x.data() + (n * C + c) * spatial;
                for (std::size_t i = 0; i < spatial; ++i) s += p[i];
            }
            mean = s / count;
            double ss = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                const double* p = x.data() + (n * C + c) * spatial;
                for (std::size_t i = 0; i < spatial; ++i) ss += (p[i] - mean) * (p[i] - mean);
            }
            var = ss / count;
            const double unbiased = count > 1 ? ss / (count - 1) : var;
            running_mean_[c] = (1 - momentum_) * running_mean_[c] + momentum_ * mean;
            running_var_[c] = (1 - momentum_) * running_var_[c] + momentum_ * unbiased;
        } else {
            mean = running_mean_[c];
            var = running_var_[c];
        }
        const double inv_std = 1.0 / std::sqrt(var + eps_);
        cache.inv_std[c] = inv_std;
        for (std::size_t n = 0; n < N; ++n) {
            const std::size_t base = (n * C + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
                const double xh = (x[base + i] - mean) * inv_std;
                cache.x_hat[base + i] = xh;
                out[base + i] = g[c] * xh + b[c];
            }
        }
    }
    out.round_to_dtype();
    cache_ = std::move(cache);
    return out;
}

Tensor BatchNorm3d::backward(const Tensor& grad_out) {
    if (!cache_) throw StateError("batchnorm: backward called before forward");
    const Tensor& xh = cache_->x_hat;
    if (grad_out.shape() != xh.shape()) {
        throw DimensionError("batchnorm: gradient shape " + shape_string(grad_out.shape()) + " does not match output");
    }
    const std::size_t C = channels(), N = xh.dim(0), spatial = xh.size() / (N * C);
    const double count = static_cast<double>(N * spatial);
    const auto& g = params_.weights[0].value;
    auto& gg = params_.weights[0].grad;
    auto& gb = params_.biases[0].grad;
    Tensor grad_x(xh.shape(), 0.0, xh.dtype());

    for (std::size_t c = 0; c < C; ++c) {
        double sum_dy = 0.0, sum_dy_xh = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
            const std::size_t base = (n * C + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
                sum_dy += grad_out[base + i];
                sum_dy_xh += grad_out[base + i] * xh[base + i];
            }
        }
        gb[c] += sum_dy;
        gg[c] += sum_dy_xh;
        const double scale = g[c] * cache_->inv_std[c];
        for (std::size_t n = 0; n < N; ++n) {
            const std::size_t base = (n * C + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
                if (cache_->mode == Mode::train) {
                    grad_x[base + i] = scale * (grad_out[base + i] - sum_dy / count - xh[base + i] * sum_dy_xh / count);
                } else {
                    grad_x[base + i] = scale * grad_out[base + i];
                }
            }
        }
    }
    gg.round_to_dtype();
    gb.round_to_dtype();
    grad_x.round_to_dtype();
    return grad_x;
}

// ---------------------------------------------------------------- Relu / Dropout / Pool

Tensor Relu::forward(const Tensor& x) {
    Tensor out = x;
    for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
    cached_x_ = x;
    return out;
}

Tensor Relu::backward(const Tensor& grad_out) {
    if (!cached_x_) throw StateError("relu: backward called before forward");
    if (grad_out.size() != cached_x_->size()) throw DimensionError("relu: gradient size mismatch");
    Tensor grad = grad_out;
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!((*cached_x_)[i] > 0.0)) grad[i] = 0.0;
    }
    return grad;
}

Dropout::Dropout(double p) : p_(p) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: probability " + std::to_string(p) + " outside [0, 1)");
}

Tensor Dropout::forward(const Tensor& x, Mode mode, Rng& rng) {
    if (mode == Mode::eval || p_ == 0.0) {
        mask_ = Tensor(x.shape(), 1.0);
        return x;
    }
    Tensor mask(x.shape(), 0.0);
    std::bernoulli_distribution keep(1.0 - p_);
    const double scale = 1.0 / (1.0 - p_);
    Tensor out = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mask[i] = keep(rng) ? scale : 0.0;
        out[i] *= mask[i];
    }
    out.round_to_dtype();
    mask_ = std::move(mask);
    return out;
}

Tensor Dropout::backward(const Tensor& grad_out) {
    if (!mask_) throw StateError("dropout: backward called before forward");
    if (grad_out.size() != mask_->size()) throw DimensionError("dropout: gradient size mismatch");
    Tensor grad = grad_out;
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= (*mask_)[i];
    grad.round_to_dtype();
    return grad;
}

Tensor GlobalAvgPool3d::forward(const Tensor& x) {
    if (x.rank() != 4 && x.rank() != 5) {
        throw DimensionError("global_avg_pool3d: expected rank 4 or 5, got " + shape_string(x.shape()));
    }
    const bool batched = x.rank() == 5;
    const std::size_t N = batched ? x.dim(0) : 1, C = x.dim(batched ? 1 : 0);
    const std::size_t spatial = x.size() / (N * C);
    Tensor out(batched ? Shape{N, C} : Shape{C}, 0.0, x.dtype());
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const double* p = x.data() + nc * spatial;
        double s = 0.0;
        for (std::size_t i = 0; i < spatial; ++i) s += p[i];
        out[nc] = s / static_cast<double>(spatial);
    }
    out.round_to_dtype();
    input_shape_ = x.shape();
    return out;
}

Tensor GlobalAvgPool3d::backward(const Tensor& grad_out) {
    if (!input_shape_) throw StateError("global_avg_pool3d: backward called before forward");
    Tensor grad(*input_shape_, 0.0, grad_out.dtype());
    const std::size_t nc_count = grad_out.size();
    if (nc_count == 0 || grad.size() % nc_count != 0) throw DimensionError("global_avg_pool3d: gradient size mismatch");
    const std::size_t spatial = grad.size() / nc_count;
    for (std::size_t nc = 0; nc < nc_count; ++nc) {
        const double g = grad_out[nc] / static_cast<double>(spatial);
        std::fill(grad.data() + nc * spatial, grad.data() + (nc + 1) * spatial, g);
    }
    grad.round_to_dtype();
    return grad;
}

// ---------------------------------------------------------------- ResidualBlock

ResidualBlock::ResidualBlock(std::size_t c_in, std::size_t c_out, bool downsample) {
    if (c_in != c_out && !downsample) {
        throw ConfigError("residual block: " + std::to_string(c_in) + " -> " + std::to_string(c_out) +
                          " channels needs a projection skip path");
    }
    const std::size_t stride = downsample ? 2 : 1;
    conv1_ = Conv3d(c_in, c_out, 3, stride, 1);
    bn1_ = BatchNorm3d(c_out);
    conv2_ = Conv3d(c_out, c_out, 3, 1, 1);
    bn2_ = BatchNorm3d(c_out);
    if (downsample) projection_ = Projection{Conv3d(c_in, c_out, 1, stride, 0), BatchNorm3d(c_out)};
}

void ResidualBlock::init(Rng& rng) {
    conv1_.init(rng);
    conv2_.init(rng);
    if (projection_) projection_->conv.init(rng);
}

Tensor ResidualBlock::forward(const Tensor& x, Mode mode) {
    Tensor y = conv1_.forward(x);
    y = bn1_.forward(y, mode);
    y = relu1_.forward(y);
    y = conv2_.forward(y);
    y = bn2_.forward(y, mode);
    Tensor skip = projection_ ? projection_->bn.forward(projection_->conv.forward(x), mode) : x;
    if (skip.shape() != y.shape()) {
        throw ConfigError("residual block: skip path shape " + shape_string(skip.shape()) + " differs from " +
                          shape_string(y.shape()));
    }
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += skip[i];
    return relu_out_.forward(y);
}

Tensor ResidualBlock::backward(const Tensor& grad_out) {
    Tensor g = relu_out_.backward(grad_out);
    Tensor g_main = bn2_.backward(g);
    g_main = conv2_.backward(g_main);
    g_main = relu1_.backward(g_main);
    g_main = bn1_.backward(g_main);
    g_main = conv1_.backward(g_main);
    if (projection_) {
        Tensor g_skip = projection_->conv.backward(projection_->bn.backward(g));
        accumulate(g_main, g_skip);
    } else {
        accumulate(g_main, g);
    }
    return g_main;
}

void ResidualBlock::visit(const std::string& prefix, const ParameterVisitor& visit) {
    conv1_.visit(prefix + ".conv1", visit);
    bn1_.visit(prefix + ".bn1", visit);
    conv2_.visit(prefix + ".conv2", visit);
    bn2_.visit(prefix + ".bn2", visit);
    if (projection_) {
        projection_->conv.visit(prefix + ".proj_conv", visit);
        projection_->bn.visit(prefix + ".proj_bn", visit);
    }
}

void ResidualBlock::visit_buffers(const std::string& prefix, const BufferVisitor& visit) {
    bn1_.visit_buffers(prefix + ".bn1", visit);
    bn2_.visit_buffers(prefix + ".bn2", visit);
    if (projection_) projection_->bn.visit_buffers(prefix + ".proj_bn", visit);
}

}  // namespace lcsurv
