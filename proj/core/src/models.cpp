#include "lcsurv/models.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "lcsurv/error.hpp"
#include "lcsurv/preproc.hpp"
#include "lcsurv/survival.hpp"

namespace lcsurv {

using nlohmann::json;

namespace {

std::string join(const std::string& prefix, const std::string& name) {
    return prefix.empty() ? name : prefix + "." + name;
}

}  // namespace

std::string to_string(HeadKind kind) {
    switch (kind) {
        case HeadKind::classifier2: return "classifier2";
        case HeadKind::classifier_cause2: return "classifier_cause2";
        case HeadKind::cox: return "cox";
    }
    return "classifier2";
}

HeadKind parse_head_kind(const std::string& name) {
    if (name == "classifier2") return HeadKind::classifier2;
    if (name == "classifier_cause2") return HeadKind::classifier_cause2;
    if (name == "cox") return HeadKind::cox;
    throw ConfigError("unknown head kind '" + name + "'");
}

std::size_t ModelConfig::scaled(std::size_t base, double width) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(base) * width)));
}

void ModelConfig::validate() const {
    if (!(width > 0.0)) throw ConfigError("model width factor must be positive");
    if (input == InputMode::features && input_shape.size() != 1) {
        throw ConfigError("feature models take [f] inputs, got " + shape_string(input_shape));
    }
    if (input == InputMode::volumes && input_shape.size() != 4) {
        throw ConfigError("volume models take [C, D, H, W] inputs, got " + shape_string(input_shape));
    }
    for (std::size_t d : input_shape) {
        if (d == 0) throw ConfigError("model input shape has an empty axis");
    }
    if (rnn_hx == 0) throw ConfigError("recurrent hidden size must be positive");
    if (!(dropout_fc >= 0.0 && dropout_fc < 1.0) || !(dropout_rnn >= 0.0 && dropout_rnn < 1.0)) {
        throw ConfigError("dropout probabilities must lie in [0, 1)");
    }
}

std::string ModelConfig::to_json() const {
    json j{{"input", lcsurv::to_string(input)},
           {"input_shape", input_shape},
           {"width", width},
           {"stem_channels", stem_channels},
           {"backbone_channels", backbone_channels},
           {"fc_dims", fc_dims},
           {"rnn_kind", lcsurv::to_string(rnn_kind)},
           {"rnn_hx", rnn_hx},
           {"head", lcsurv::to_string(head)},
           {"dropout_fc", dropout_fc},
           {"dropout_rnn", dropout_rnn}};
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    try {
        const json j = json::parse(text);
        ModelConfig c;
        c.input = parse_input_mode(j.at("input").get<std::string>());
        c.input_shape = j.at("input_shape").get<Shape>();
        c.width = j.at("width").get<double>();
        c.stem_channels = j.at("stem_channels").get<std::size_t>();
        c.backbone_channels = j.at("backbone_channels").get<std::array<std::size_t, 4>>();
        c.fc_dims = j.at("fc_dims").get<std::array<std::size_t, 2>>();
        c.rnn_kind = parse_cell_kind(j.at("rnn_kind").get<std::string>());
        c.rnn_hx = j.at("rnn_hx").get<std::size_t>();
        c.head = parse_head_kind(j.at("head").get<std::string>());
        c.dropout_fc = j.at("dropout_fc").get<double>();
        c.dropout_rnn = j.at("dropout_rnn").get<double>();
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw ConfigError("invalid model config: " + std::string(e.what()));
    }
}

Shape batch_shape(const ModelConfig& cfg, std::size_t n) {
    Shape s{n};
    s.insert(s.end(), cfg.input_shape.begin(), cfg.input_shape.end());
    return s;
}

// ---------------------------------------------------------------- CnnModel

CnnModel::CnnModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::size_t fc_in = 0;
    if (cfg_.input == InputMode::volumes) {
        const std::size_t stem = ModelConfig::scaled(cfg_.stem_channels, cfg_.width);
        std::array<std::size_t, 4> ch{};
        for (std::size_t i = 0; i < 4; ++i) ch[i] = ModelConfig::scaled(cfg_.backbone_channels[i], cfg_.width);
        stem_ = Conv3d(cfg_.input_shape[0], stem, 3, 2, 1);
        stem_bn_ = BatchNorm3d(stem);
        blocks_.emplace_back(stem, ch[0], stem != ch[0]);
        for (std::size_t i = 1; i < 4; ++i) blocks_.emplace_back(ch[i - 1], ch[i], true);
        // Fails early with a configuration error when the input is too small.
        stem_.output_shape(batch_shape(cfg_, 1));
        fc_in = ch[3];
    } else {
        fc_in = cfg_.input_shape[0];
    }
    fc1_ = Dense(fc_in, cfg_.fc1_dim());
    fc2_ = Dense(cfg_.fc1_dim(), cfg_.feature_dim());
    head_ = Dense(cfg_.feature_dim(), cfg_.head_outputs());
    drop1_ = Dropout(cfg_.dropout_fc);
    drop2_ = Dropout(cfg_.dropout_fc);
}

void CnnModel::init(Rng& rng) {
    if (has_backbone()) {
        stem_.init(rng);
        for (auto& b : blocks_) b.init(rng);
    }
    fc1_.init(rng);
    fc2_.init(rng);
    head_.init(rng);
}

CnnModel::Output CnnModel::forward(const Tensor& x, Mode mode, Rng& rng) {
    if (x.rank() != cfg_.input_shape.size() + 1 ||
        !std::equal(cfg_.input_shape.begin(), cfg_.input_shape.end(), x.shape().begin() + 1)) {
        throw ConfigError("cnn: input " + shape_string(x.shape()) + " does not match configured item shape " +
                          shape_string(cfg_.input_shape));
    }
    Tensor h = x;
    if (has_backbone()) {
        h = stem_relu_.forward(stem_bn_.forward(stem_.forward(h), mode));
        for (auto& b : blocks_) h = b.forward(h, mode);
        backbone_out_ = h;
        h = pool_.forward(h);
    }
    h = drop1_.forward(relu1_.forward(fc1_.forward(h)), mode, rng);
    h = drop2_.forward(relu2_.forward(fc2_.forward(h)), mode, rng);
    Output out{h, head_.forward(h)};
    return out;
}

Tensor CnnModel::encode(const Tensor& x) {
    Rng unused(0);
    return forward(x, Mode::eval, unused).features;
}

Tensor CnnModel::features_backward(const Tensor& grad_features, bool to_input) {
    Tensor g = fc2_.backward(relu2_.backward(drop2_.backward(grad_features)));
    g = fc1_.backward(relu1_.backward(drop1_.backward(g)));
    if (!has_backbone()) return g;
    g = pool_.backward(g);
    if (!to_input) return g;
    for (std::size_t i = blocks_.size(); i-- > 0;) g = blocks_[i].backward(g);
    return stem_.backward(stem_bn_.backward(stem_relu_.backward(g)));
}

Tensor CnnModel::backward(const Tensor& grad_head, const Tensor* grad_features) {
    Tensor g = head_.backward(grad_head);
    if (grad_features) {
        if (grad_features->size() != g.size()) throw DimensionError("cnn: feature gradient size mismatch");
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*grad_features)[i];
    }
    return features_backward(g, true);
}

Tensor CnnModel::backward_features_to_backbone(const Tensor& grad_features) {
    if (!has_backbone()) throw ConfigError("cnn: feature-input models have no backbone activations");
    return features_backward(grad_features, false);
}

Tensor CnnModel::backward_head_to_backbone(const Tensor& grad_head) {
    if (!has_backbone()) throw ConfigError("cnn: feature-input models have no backbone activations");
    return features_backward(head_.backward(grad_head), false);
}

const Tensor& CnnModel::backbone_activation() const {
    if (!backbone_out_) throw StateError("cnn: no backbone activation recorded; run forward first");
    return *backbone_out_;
}

void CnnModel::visit(const std::string& prefix, const ParameterVisitor& visit) {
    if (has_backbone()) {
        stem_.visit(join(prefix, "stem"), visit);
        stem_bn_.visit(join(prefix, "stem_bn"), visit);
        for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].visit(join(prefix, "block" + std::to_string(i + 1)), visit);
    }
    fc1_.visit(join(prefix, "fc1"), visit);
    fc2_.visit(join(prefix, "fc2"), visit);
    head_.visit(join(prefix, "head"), visit);
}

void CnnModel::visit_buffers(const std::string& prefix, const BufferVisitor& visit) {
    if (!has_backbone()) return;
    stem_bn_.visit_buffers(join(prefix, "stem_bn"), visit);
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].visit_buffers(join(prefix, "block" + std::to_string(i + 1)), visit);
}

void CnnModel::zero_grad() {
    visit("", [](const std::string&, Parameter& p) { p.grad.zero(); });
}

// ---------------------------------------------------------------- CrnnModel

CrnnModel::CrnnModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    rnn_ = RecurrentLayer(cfg_.rnn_kind, cfg_.feature_dim(), cfg_.rnn_hx);
    fc_ = Dense(cfg_.rnn_hx, cfg_.rnn_hx);
    head_ = Dense(cfg_.rnn_hx, cfg_.head_outputs());
    drop_ = Dropout(cfg_.dropout_rnn);
}

void CrnnModel::init(Rng& rng) {
    rnn_.init(rng);
    fc_.init(rng);
    head_.init(rng);
}

void CrnnModel::set_encoder(CnnModel encoder) {
    const auto& ec = encoder.config();
    if (ec.feature_dim() != cfg_.feature_dim() || ec.input != cfg_.input || ec.input_shape != cfg_.input_shape) {
        throw ConfigError("crnn: encoder produces " + std::to_string(ec.feature_dim()) + " features from " +
                          shape_string(ec.input_shape) + " but the recurrent layer expects " +
                          std::to_string(cfg_.feature_dim()) + " from " + shape_string(cfg_.input_shape));
    }
    encoder_ = std::move(encoder);
}

CnnModel& CrnnModel::encoder() {
    if (!encoder_) throw StateError("crnn: no CNN encoder loaded; train or load the CNN checkpoint first");
    return *encoder_;
}

IntervalSequence CrnnModel::encode(std::span<const Tensor> timepoints, std::span<const double> deltas) {
    CnnModel& cnn = encoder();
    if (timepoints.empty()) throw ArgumentError("crnn: no timepoints to encode");
    const Tensor features = cnn.encode(stack(timepoints));
    IntervalSequence seq;
    for (std::size_t t = 0; t < timepoints.size(); ++t) seq.features.push_back(features.slice(t));
    seq.deltas.assign(deltas.begin(), deltas.end());
    seq.validate();
    return seq;
}

Tensor CrnnModel::forward(std::span<const IntervalSequence> batch, Mode mode, Rng& rng) {
    Tensor h = rnn_.forward_batch(batch);
    h = drop_.forward(relu_.forward(fc_.forward(h)), mode, rng);
    return head_.forward(h);
}

std::vector<std::vector<Tensor>> CrnnModel::backward(const Tensor& grad_head) {
    const Tensor g = fc_.backward(relu_.backward(drop_.backward(head_.backward(grad_head))));
    return rnn_.backward_batch(g);
}

void CrnnModel::visit(const std::string& prefix, const ParameterVisitor& visit) {
    rnn_.visit(join(prefix, "rnn"), visit);
    fc_.visit(join(prefix, "fc"), visit);
    head_.visit(join(prefix, "head"), visit);
}

void CrnnModel::zero_grad() {
    visit("", [](const std::string&, Parameter& p) { p.grad.zero(); });
}

ParamRefs collect_params(CnnModel& model) {
    ParamRefs refs;
    model.visit("", [&](const std::string& name, Parameter& p) { refs.push_back({name, &p}); });
    return refs;
}

ParamRefs collect_params(CrnnModel& model) {
    ParamRefs refs;
    model.visit("", [&](const std::string& name, Parameter& p) { refs.push_back({name, &p}); });
    return refs;
}

std::vector<double> head_scores(const Tensor& head, HeadKind kind) {
    const std::size_t k = kind == HeadKind::cox ? 1 : 2;
    if (head.size() % k != 0) throw DimensionError("head output " + shape_string(head.shape()) + " does not match head kind");
    const std::size_t n = head.size() / k;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (kind == HeadKind::cox) {
            out[i] = head[i];
        } else {
            const double a = head[2 * i], b = head[2 * i + 1];
            out[i] = 1.0 / (1.0 + std::exp(a - b));
        }
    }
    return out;
}

MortalityClass two_step_classify(double mortality_prob, const std::array<double, 2>& cause_prob) {
    if (mortality_prob < 0.5) return MortalityClass::survivor;
    return cause_prob[1] > cause_prob[0] ? MortalityClass::respiratory : MortalityClass::cardiac;
}

// ---------------------------------------------------------------- Grad-CAM

namespace {

Tensor target_gradient(const ModelConfig& cfg, std::size_t n, std::size_t target_class) {
    const std::size_t k = cfg.head_outputs();
    if (cfg.head != HeadKind::cox && target_class >= k) {
        throw ArgumentError("gradcam: target class " + std::to_string(target_class) + " out of range");
    }
    Tensor g({n, k});
    for (std::size_t i = 0; i < n; ++i) g[i * k + (cfg.head == HeadKind::cox ? 0 : target_class)] = 1.0;
    return g;
}

// Activations and gradients [N, C, d, h, w]; returns the map for batch item n.
GradcamResult cam_from(const Tensor& act, const Tensor& grad, std::size_t n, const Shape& input_shape) {
    const std::size_t C = act.dim(1);
    const Shape spatial{act.dim(2), act.dim(3), act.dim(4)};
    const std::size_t S = shape_size(spatial);
    Tensor cam(spatial);
    bool any_grad = false;
    for (std::size_t c = 0; c < C; ++c) {
        const double* a = act.data() + (n * C + c) * S;
        const double* g = grad.data() + (n * C + c) * S;
        double alpha = 0.0;
        for (std::size_t i = 0; i < S; ++i) alpha += g[i];
        alpha /= static_cast<double>(S);
        if (alpha != 0.0) any_grad = true;
        for (std::size_t i = 0; i < S; ++i) cam[i] += alpha * a[i];
    }
    for (auto& v : cam.raw()) v = std::max(0.0, v);
    const Shape target{input_shape[1], input_shape[2], input_shape[3]};
    Tensor up(target);
    if (S == 1) {
        up.fill(cam[0]);
    } else {
        Shape padded = spatial;
        // Trilinear resampling needs at least two samples per axis.
        Tensor src = cam;
        for (std::size_t a = 0; a < 3; ++a) {
            if (padded[a] == 1) padded[a] = 2;
        }
        if (padded != spatial) src = resample(cam, padded);
        up = resample(src, target);
    }
    const double mx = *std::max_element(up.raw().begin(), up.raw().end());
    if (mx > 0.0) {
        for (auto& v : up.raw()) v /= mx;
    } else {
        up.zero();
    }
    return {std::move(up), !any_grad};
}

}  // namespace

GradcamResult gradcam(CnnModel& model, const Tensor& volume, std::size_t target_class) {
    const auto& cfg = model.config();
    if (!model.has_backbone()) throw ConfigError("gradcam needs a volume model with a convolutional backbone");
    Rng unused(0);
    Shape batched{1};
    batched.insert(batched.end(), volume.shape().begin(), volume.shape().end());
    model.forward(volume.reshaped(batched), Mode::eval, unused);
    const Tensor grad = model.backward_head_to_backbone(target_gradient(cfg, 1, target_class));
    GradcamResult r = cam_from(model.backbone_activation(), grad, 0, cfg.input_shape);
    model.zero_grad();
    return r;
}

std::vector<GradcamResult> gradcam(CrnnModel& model, std::span<const Tensor> timepoints, std::span<const double> deltas,
                                   std::size_t target_class) {
    CnnModel& cnn = model.encoder();
    if (!cnn.has_backbone()) throw ConfigError("gradcam needs a volume model with a convolutional backbone");
    const IntervalSequence seq = model.encode(timepoints, deltas);
    Rng unused(0);
    model.forward(std::span<const IntervalSequence>(&seq, 1), Mode::eval, unused);
    const auto feature_grads = model.backward(target_gradient(model.config(), 1, target_class));
    std::vector<GradcamResult> out;
    for (std::size_t t = 0; t < timepoints.size(); ++t) {
        Shape batched{1};
        batched.insert(batched.end(), timepoints[t].shape().begin(), timepoints[t].shape().end());
        cnn.forward(timepoints[t].reshaped(batched), Mode::eval, unused);
        const Tensor& gf = feature_grads[0][t];
        const Tensor grad = cnn.backward_features_to_backbone(gf.reshaped({1, gf.size()}));
        out.push_back(cam_from(cnn.backbone_activation(), grad, 0, cnn.config().input_shape));
    }
    cnn.zero_grad();
    model.zero_grad();
    return out;
}

// ---------------------------------------------------------------- checkpoints

namespace {

void store(CnnModel& model, const std::string& prefix, Checkpoint& ckpt) {
    model.visit(prefix, [&](const std::string& name, Parameter& p) { ckpt.tensors[name] = p.value; });
    model.visit_buffers(prefix, [&](const std::string& name, Tensor& b) { ckpt.tensors[name] = b; });
}

void assign(Tensor& dst, const Checkpoint& ckpt, const std::string& name) {
    const Tensor& src = ckpt.at(name);
    if (src.shape() != dst.shape()) {
        throw DimensionError("checkpoint tensor '" + name + "' has shape " + shape_string(src.shape()) +
                             ", model expects " + shape_string(dst.shape()));
    }
    const Dtype dtype = dst.dtype();
    dst = src;
    dst.set_dtype(dtype);
}

json parse_meta(const Checkpoint& ckpt) {
    try {
        return json::parse(ckpt.metadata);
    } catch (const json::exception& e) {
        throw DataError("checkpoint metadata is not valid JSON: " + std::string(e.what()));
    }
}

json parse_extra(const std::string& extra) {
    try {
        return json::parse(extra);
    } catch (const json::exception& e) {
        throw ArgumentError("extra checkpoint metadata is not valid JSON: " + std::string(e.what()));
    }
}

}  // namespace

void load_tensors(CnnModel& model, const Checkpoint& ckpt, const std::string& prefix) {
    model.visit(prefix, [&](const std::string& name, Parameter& p) { assign(p.value, ckpt, name); });
    model.visit_buffers(prefix, [&](const std::string& name, Tensor& b) { assign(b, ckpt, name); });
}

void load_tensors(CrnnModel& model, const Checkpoint& ckpt) {
    model.visit("", [&](const std::string& name, Parameter& p) { assign(p.value, ckpt, name); });
}

Checkpoint to_checkpoint(CnnModel& model, const std::string& extra_metadata) {
    Checkpoint ckpt;
    ckpt.metadata = json{{"kind", "cnn"},
                         {"model", json::parse(model.config().to_json())},
                         {"extra", parse_extra(extra_metadata)}}
                        .dump();
    store(model, "", ckpt);
    return ckpt;
}

Checkpoint to_checkpoint(CrnnModel& model, const std::string& extra_metadata) {
    Checkpoint ckpt;
    CnnModel& cnn = model.encoder();
    ckpt.metadata = json{{"kind", "crnn"},
                         {"model", json::parse(model.config().to_json())},
                         {"encoder_model", json::parse(cnn.config().to_json())},
                         {"extra", parse_extra(extra_metadata)}}
                        .dump();
    model.visit("", [&](const std::string& name, Parameter& p) { ckpt.tensors[name] = p.value; });
    store(cnn, "encoder", ckpt);
    return ckpt;
}

bool is_crnn_checkpoint(const Checkpoint& ckpt) { return parse_meta(ckpt).value("kind", "") == "crnn"; }

CnnModel cnn_from_checkpoint(const Checkpoint& ckpt) {
    const json meta = parse_meta(ckpt);
    if (meta.value("kind", "") != "cnn") throw ConfigError("checkpoint does not hold a CNN model");
    CnnModel model(ModelConfig::from_json(meta.at("model").dump()));
    load_tensors(model, ckpt);
    return model;
}

CrnnModel crnn_from_checkpoint(const Checkpoint& ckpt) {
    const json meta = parse_meta(ckpt);
    if (meta.value("kind", "") != "crnn") throw ConfigError("checkpoint does not hold a CRNN model");
    CrnnModel model(ModelConfig::from_json(meta.at("model").dump()));
    CnnModel cnn(ModelConfig::from_json(meta.at("encoder_model").dump()));
    load_tensors(cnn, ckpt, "encoder");
    model.set_encoder(std::move(cnn));
    load_tensors(model, ckpt);
    return model;
}

}  // namespace lcsurv
