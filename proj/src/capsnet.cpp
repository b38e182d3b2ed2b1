#include "polysed/capsnet.h"

#include "polysed/errors.h"
#include "polysed/rng.h"

#include <cmath>

namespace polysed {

CapsNetConfig CapsNetConfig::home(std::size_t n_events) {
    CapsNetConfig c;
    c.cnn_kernels = {32, 32, 8};
    c.cnn_kernel_dim = 6;
    c.pool_dims = {4, 3, 2};
    c.n_primary_caps = 8;
    c.primary_cap_dim = 9;
    c.output_cap_dim = 11;
    c.routing_iters = 3;
    c.n_events = n_events;
    return c;
}

CapsNetConfig CapsNetConfig::residential(std::size_t n_events) {
    CapsNetConfig c;
    c.cnn_kernels = {4, 16, 32, 4};
    c.cnn_kernel_dim = 4;
    c.pool_dims = {2, 2, 2, 2};
    c.n_primary_caps = 7;
    c.primary_cap_dim = 16;
    c.output_cap_dim = 8;
    c.routing_iters = 4;
    c.n_events = n_events;
    return c;
}

CapsNetConfig CapsNetConfig::desk(std::size_t n_events) {
    CapsNetConfig c;
    c.cnn_kernels = {8, 8};
    c.cnn_kernel_dim = 3;
    c.pool_dims = {4, 2};
    c.n_primary_caps = 8;
    c.primary_cap_dim = 8;
    c.output_cap_dim = 8;
    c.routing_iters = 3;
    c.n_events = n_events;
    return c;
}

CapsNetConfig CapsNetConfig::preset(const std::string& name, std::size_t n_events) {
    if (name == "home") {
        return home(n_events);
    }
    if (name == "residential") {
        return residential(n_events);
    }
    if (name == "desk") {
        return desk(n_events);
    }
    throw ConfigError("unknown model preset '" + name + "' (expected home, residential or desk)");
}

void CapsNetConfig::validate(std::size_t num_bins) const {
    if (cnn_kernels.empty() || cnn_kernels.size() != pool_dims.size()) {
        throw ShapeError("capsnet: need one pooling size per conv layer (" +
                         std::to_string(cnn_kernels.size()) + " kernels, " +
                         std::to_string(pool_dims.size()) + " pools)");
    }
    if (cnn_kernel_dim == 0 || n_primary_caps == 0 || primary_cap_dim == 0 ||
        output_cap_dim == 0 || n_events == 0 || routing_iters == 0) {
        throw ShapeError("capsnet: layer sizes and routing iterations must be positive");
    }
    for (const auto k : cnn_kernels) {
        if (k == 0) {
            throw ShapeError("capsnet: conv layers need at least one kernel");
        }
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0) || !(l2_weight >= 0.0)) {
        throw ShapeError("capsnet: dropout must be in [0, 1) and l2 weight nonnegative");
    }
    std::size_t total_pool = 1;
    for (const auto p : pool_dims) {
        if (p == 0) {
            throw ShapeError("capsnet: pooling sizes must be positive");
        }
        total_pool *= p;
    }
    if (num_bins == 0 || num_bins % total_pool != 0) {
        throw ShapeError("capsnet: product of pooling sizes (" + std::to_string(total_pool) +
                         ") does not divide F=" + std::to_string(num_bins));
    }
}

Var squash(Var s, std::size_t axis) {
    const Var norm = ops::l2norm(s, axis, true);
    const Var factor = ops::div(norm, ops::add_scalar(ops::square(norm), 1.0));
    return ops::mul(s, factor);
}

Var dynamic_routing(Var predictions, std::size_t iters, RoutingTrace* trace) {
    if (iters < 1) {
        throw ConfigError("dynamic routing: needs at least one iteration");
    }
    const Shape shape = predictions.shape();
    if (shape.size() < 3) {
        throw ShapeError("dynamic routing: predictions need shape (..., I, J, D), got " +
                         to_string(shape));
    }
    const std::size_t r = shape.size();
    const std::size_t in_caps = shape[r - 3];
    const std::size_t out_caps = shape[r - 2];
    const std::size_t dim = shape[r - 1];
    const Shape lead(shape.begin(), shape.end() - 3);
    const std::size_t batch = numel(lead);

    Tape& tape = predictions.tape();
    const Var votes = ops::reshape(predictions, {batch, in_caps, out_caps, dim});
    Var logits = tape.constant(Tensor(Shape{batch, in_caps, out_caps}));
    Var out;
    for (std::size_t it = 0; it < iters; ++it) {
        const Var coupling = ops::softmax(logits, 2);
        if (trace) {
            Shape cs = lead;
            cs.push_back(in_caps);
            cs.push_back(out_caps);
            trace->couplings.push_back(coupling.value().reshaped(cs));
        }
        const Var weighted = ops::mul(ops::reshape(coupling, {batch, in_caps, out_caps, 1}), votes);
        out = squash(ops::sum(weighted, 1), 2);
        if (it + 1 < iters) {
            const Var agreement =
                ops::sum(ops::mul(votes, ops::reshape(out, {batch, 1, out_caps, dim})), 3);
            logits = ops::add(logits, agreement);
        }
    }
    Shape out_shape = lead;
    out_shape.push_back(out_caps);
    out_shape.push_back(dim);
    return ops::reshape(out, out_shape);
}

namespace {

std::string conv_weight(std::size_t l) { return "conv" + std::to_string(l) + ".weight"; }
std::string conv_bias(std::size_t l) { return "conv" + std::to_string(l) + ".bias"; }

std::size_t final_bins(const CapsNetConfig& c, std::size_t num_bins) {
    std::size_t f = num_bins;
    for (const auto p : c.pool_dims) {
        f /= p;
    }
    return f;
}

}  // namespace

std::map<std::string, Shape> CapsNetModel::parameter_shapes(const CapsNetConfig& c,
                                                            std::size_t num_bins,
                                                            std::size_t channels) {
    c.validate(num_bins);
    if (channels == 0) {
        throw ShapeError("capsnet: input needs at least one channel");
    }
    std::map<std::string, Shape> shapes;
    std::size_t in = channels;
    for (std::size_t l = 0; l < c.cnn_kernels.size(); ++l) {
        shapes[conv_weight(l)] = {c.cnn_kernels[l], in, c.time_kernel(), c.cnn_kernel_dim};
        shapes[conv_bias(l)] = {c.cnn_kernels[l], 1, 1};
        in = c.cnn_kernels[l];
    }
    const std::size_t features = c.cnn_kernels.back() * final_bins(c, num_bins);
    shapes["primary.weight"] = {features, c.n_primary_caps * c.primary_cap_dim};
    shapes["primary.bias"] = {c.n_primary_caps * c.primary_cap_dim};
    shapes["routing.weight"] = {c.n_primary_caps, c.primary_cap_dim, c.n_events * c.output_cap_dim};
    return shapes;
}

CapsNetModel::CapsNetModel(CapsNetConfig config, std::size_t num_bins, std::size_t channels,
                           SeededRng& rng)
    : config_(std::move(config)), num_bins_(num_bins), channels_(channels) {
    const auto shapes = parameter_shapes(config_, num_bins_, channels_);
    for (const auto& [name, shape] : shapes) {
        const bool is_bias = name.ends_with(".bias");
        if (is_bias) {
            params_.emplace(name, Tensor(shape));
            continue;
        }
        double fan_in = 0.0;
        double fan_out = 0.0;
        if (shape.size() == 4) {
            const double field = static_cast<double>(shape[2] * shape[3]);
            fan_in = static_cast<double>(shape[1]) * field;
            fan_out = static_cast<double>(shape[0]) * field;
        } else if (name == "routing.weight") {
            fan_in = static_cast<double>(config_.primary_cap_dim);
            fan_out = static_cast<double>(config_.output_cap_dim);
        } else {
            fan_in = static_cast<double>(shape[0]);
            fan_out = static_cast<double>(shape[1]);
        }
        params_.emplace(name, Tensor::uniform(shape, std::sqrt(6.0 / (fan_in + fan_out)), rng));
    }
}

CapsNetModel::CapsNetModel(CapsNetConfig config, std::size_t num_bins, std::size_t channels,
                           ParameterMap parameters)
    : config_(std::move(config)), num_bins_(num_bins), channels_(channels),
      params_(std::move(parameters)) {
    const auto shapes = parameter_shapes(config_, num_bins_, channels_);
    if (shapes.size() != params_.size()) {
        throw ShapeError("capsnet: expected " + std::to_string(shapes.size()) + " parameters, got " +
                         std::to_string(params_.size()));
    }
    for (const auto& [name, shape] : shapes) {
        const auto it = params_.find(name);
        if (it == params_.end()) {
            throw ShapeError("capsnet: missing parameter '" + name + "'");
        }
        if (it->second.shape() != shape) {
            throw ShapeError("capsnet: parameter '" + name + "' has shape " +
                             to_string(it->second.shape()) + ", expected " + to_string(shape));
        }
    }
}

ForwardPass CapsNetModel::forward(Tape& tape, const Tensor& window, bool train_mode,
                                  SeededRng* dropout_rng) const {
    return run(tape, window, train_mode, dropout_rng, true);
}

Tensor CapsNetModel::predict(const Tensor& window) const {
    Tape tape;
    return run(tape, window, false, nullptr, false).activity.value();
}

ForwardPass CapsNetModel::run(Tape& tape, const Tensor& window, bool train_mode,
                              SeededRng* dropout_rng, bool track_gradients) const {
    if (window.rank() != 3 || window.dim(1) != num_bins_ || window.dim(2) != channels_) {
        throw ShapeError("capsnet: window shape " + to_string(window.shape()) +
                         " does not match model input (T," + std::to_string(num_bins_) + "," +
                         std::to_string(channels_) + ")");
    }
    if (train_mode && config_.dropout_rate > 0.0 && dropout_rng == nullptr) {
        throw Error("capsnet: train-mode forward needs a dropout generator");
    }
    const std::size_t frames = window.dim(0);

    ForwardPass pass;
    std::map<std::string, Var> p;
    for (const auto& [name, value] : params_) {
        const Var v = track_gradients ? tape.parameter(name, value) : tape.constant(value);
        p.emplace(name, v);
        pass.parameters.push_back(v);
    }

    // (T, F, C) -> (C, T, F) so convolution sees channels first.
    Tensor chw(Shape{channels_, frames, num_bins_});
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t f = 0; f < num_bins_; ++f) {
            for (std::size_t c = 0; c < channels_; ++c) {
                chw[(c * frames + t) * num_bins_ + f] = window[(t * num_bins_ + f) * channels_ + c];
            }
        }
    }
    Var h = tape.constant(std::move(chw));

    const std::size_t kt = config_.time_kernel();
    const std::size_t kf = config_.cnn_kernel_dim;
    for (std::size_t l = 0; l < config_.cnn_kernels.size(); ++l) {
        // Time keeps its length with edge replication; frequency is zero padded
        // so only pooling shrinks it.
        h = ops::pad(h, 1, (kt - 1) / 2, kt - 1 - (kt - 1) / 2, PadMode::edge);
        h = ops::pad(h, 2, (kf - 1) / 2, kf - 1 - (kf - 1) / 2, PadMode::zero);
        h = ops::conv2d(h, p.at(conv_weight(l)));
        h = ops::relu(ops::add(h, p.at(conv_bias(l))));
        h = ops::maxpool_last(h, config_.pool_dims[l]);
        if (train_mode && config_.dropout_rate > 0.0) {
            const double keep = 1.0 - config_.dropout_rate;
            Tensor mask(h.shape());
            for (double& m : mask.values()) {
                m = dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
            }
            h = ops::mul(h, tape.constant(std::move(mask)));
        }
    }

    const std::size_t kernels = config_.cnn_kernels.back();
    const std::size_t bins = final_bins(config_, num_bins_);
    const std::size_t caps = config_.n_primary_caps;
    const std::size_t cap_dim = config_.primary_cap_dim;
    const std::size_t events = config_.n_events;
    const std::size_t out_dim = config_.output_cap_dim;

    // Per-frame features (T, K*F') -> primary capsules (T, I, Dp).
    Var features = ops::reshape(ops::permute(h, {1, 0, 2}), {frames, kernels * bins});
    Var primary = ops::add(ops::matmul(features, p.at("primary.weight")), p.at("primary.bias"));
    primary = squash(ops::reshape(primary, {frames, caps, cap_dim}), 2);

    // Votes u_hat(t, i, j) = W_ij^T u(t, i), one W_ij shared by all frames.
    Var votes = ops::matmul(ops::permute(primary, {1, 0, 2}), p.at("routing.weight"));
    votes = ops::permute(ops::reshape(votes, {caps, frames, events, out_dim}), {1, 0, 2, 3});

    const Var capsules = dynamic_routing(votes, config_.routing_iters);
    pass.activity = ops::l2norm(capsules, 2);
    return pass;
}

Var detection_loss(Var prediction, const Tensor& target, const std::vector<double>& mask,
                   double l2_weight, const std::vector<Var>& params) {
    const Shape& shape = prediction.shape();
    if (shape.size() != 2 || target.shape() != shape) {
        throw ShapeError("loss: prediction " + to_string(shape) + " and target " +
                         to_string(target.shape()) + " must be equal (T,N) shapes");
    }
    if (mask.size() != shape[0]) {
        throw ShapeError("loss: mask has " + std::to_string(mask.size()) + " frames, prediction has " +
                         std::to_string(shape[0]));
    }
    for (const double v : target.values()) {
        if (v != 0.0 && v != 1.0) {
            throw DataError("loss: target values must be 0 or 1");
        }
    }
    constexpr double kEps = 1e-7;
    Tape& tape = prediction.tape();
    const Var p = ops::clamp(prediction, kEps, 1.0 - kEps);
    const Var y = tape.constant(target);
    Tensor not_target(shape);
    for (std::size_t i = 0; i < not_target.size(); ++i) {
        not_target[i] = 1.0 - target[i];
    }
    const Var log_p = ops::log(p);
    const Var log_q = ops::log(ops::add_scalar(ops::scale(p, -1.0), 1.0));
    const Var ll = ops::add(ops::mul(y, log_p), ops::mul(tape.constant(std::move(not_target)), log_q));
    const Var masked = ops::mul(ll, tape.constant(Tensor(Shape{shape[0], 1}, mask)));

    double count = 0.0;
    for (const double m : mask) {
        count += m;
    }
    count *= static_cast<double>(shape[1]);
    Var loss = count > 0.0 ? ops::scale(ops::sum(masked), -1.0 / count)
                           : ops::scale(ops::sum(masked), 0.0);
    if (l2_weight > 0.0) {
        for (const Var& w : params) {
            loss = ops::add(loss, ops::scale(ops::sum(ops::square(w)), l2_weight));
        }
    }
    return loss;
}

}  // namespace polysed
