#pragma once

#include "polysed/adadelta.h"
#include "polysed/autodiff.h"
#include "polysed/tensor.h"

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace polysed {

class SeededRng;

/// Layer sizes of one CapsNet. The CNN stack convolves (time, frequency)
/// maps, pools frequency only, and keeps every time frame.
struct CapsNetConfig {
    std::vector<std::size_t> cnn_kernels;   // output channels per conv layer
    std::size_t cnn_kernel_dim = 3;         // square kernel side
    std::size_t time_kernel_dim = 0;        // kernel extent along time; 0 = cnn_kernel_dim
    std::vector<std::size_t> pool_dims;     // frequency pooling per conv layer
    std::size_t n_primary_caps = 8;
    std::size_t primary_cap_dim = 8;
    std::size_t output_cap_dim = 8;
    std::size_t routing_iters = 3;
    std::size_t n_events = 1;
    double dropout_rate = 0.2;
    double l2_weight = 1e-4;

    /// TUT 2016 "Home" hyper-parameters.
    static CapsNetConfig home(std::size_t n_events);
    /// TUT 2016 "Residential Area" hyper-parameters.
    static CapsNetConfig residential(std::size_t n_events);
    /// Small network used for the synthetic desk-scale experiments.
    static CapsNetConfig desk(std::size_t n_events);
    /// "home", "residential" or "desk".
    static CapsNetConfig preset(const std::string& name, std::size_t n_events);

    std::size_t time_kernel() const { return time_kernel_dim == 0 ? cnn_kernel_dim : time_kernel_dim; }

    /// Throws ShapeError if the config cannot process `num_bins` frequency bins.
    void validate(std::size_t num_bins) const;

    friend bool operator==(const CapsNetConfig&, const CapsNetConfig&) = default;
};

/// Capsule squash along `axis`: s * |s| / (1 + |s|^2). Zero maps to zero.
Var squash(Var s, std::size_t axis);

/// Coupling coefficients per routing iteration, each shaped like the logits (..., I, J).
struct RoutingTrace {
    std::vector<Tensor> couplings;
};

/// Routing-by-agreement over predictions shaped (..., I, J, D): input capsule
/// i's vote for output capsule j. Returns output capsules (..., J, D).
Var dynamic_routing(Var predictions, std::size_t iters, RoutingTrace* trace = nullptr);

/// Result of one forward pass: the (T, N) activity and the parameter leaves
/// it was computed from, in name order.
struct ForwardPass {
    Var activity;
    std::vector<Var> parameters;
};

class CapsNetModel {
public:
    /// Builds and initializes parameters (Glorot uniform weights, zero biases).
    CapsNetModel(CapsNetConfig config, std::size_t num_bins, std::size_t channels, SeededRng& rng);
    /// Wraps existing parameters; names and shapes must match the config.
    CapsNetModel(CapsNetConfig config, std::size_t num_bins, std::size_t channels,
                 ParameterMap parameters);

    static std::map<std::string, Shape> parameter_shapes(const CapsNetConfig& config,
                                                         std::size_t num_bins, std::size_t channels);

    const CapsNetConfig& config() const noexcept { return config_; }
    std::size_t num_bins() const noexcept { return num_bins_; }
    std::size_t channels() const noexcept { return channels_; }
    const ParameterMap& parameters() const noexcept { return params_; }
    ParameterMap& parameters() noexcept { return params_; }

    /// Activity (T, N) in [0, 1] for a window shaped (T, F, C). Parameters are
    /// registered on `tape` by name; dropout is applied only in train mode and
    /// draws its masks from `dropout_rng`.
    ForwardPass forward(Tape& tape, const Tensor& window, bool train_mode,
                        SeededRng* dropout_rng = nullptr) const;

    /// Inference-mode forward pass without gradients.
    Tensor predict(const Tensor& window) const;

private:
    CapsNetConfig config_;
    std::size_t num_bins_;
    std::size_t channels_;
    ParameterMap params_;

    ForwardPass run(Tape& tape, const Tensor& window, bool train_mode, SeededRng* dropout_rng,
                    bool track_gradients) const;
};

/// Mean binary cross-entropy over unmasked frames plus l2_weight * sum of
/// squared parameters. Predictions are clamped to (1e-7, 1 - 1e-7).
/// `target` is (T, N) with entries in {0, 1}; `mask` has length T.
Var detection_loss(Var prediction, const Tensor& target, const std::vector<double>& mask,
                   double l2_weight, const std::vector<Var>& params);

}  // namespace polysed
