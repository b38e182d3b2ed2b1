#pragma once

#include "polysed/autodiff.h"
#include "polysed/rng.h"
#include "polysed/tensor.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace polysed::test {

inline Tensor random_tensor(Shape shape, SeededRng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) {
        v = rng.uniform(lo, hi);
    }
    return t;
}

using GraphFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Largest relative difference between reverse-mode gradients and central
/// differences of L = sum(f(inputs) * R), R a fixed random projection.
inline double gradient_check(const std::vector<Tensor>& inputs, const GraphFn& f, std::uint64_t seed = 1,
                             double h = 1e-5) {
    Tensor projection;
    const auto loss_of = [&](const std::vector<Tensor>& xs, Tape& tape, std::vector<Var>* leaves) {
        std::vector<Var> vars;
        for (const auto& x : xs) {
            vars.push_back(tape.variable(x));
        }
        const Var out = f(tape, vars);
        if (projection.shape() != out.shape()) {
            SeededRng rng(seed);
            projection = random_tensor(out.shape(), rng, 0.5, 1.5);
        }
        if (leaves != nullptr) {
            *leaves = vars;
        }
        return ops::sum(ops::mul(out, tape.constant(projection)));
    };

    Tape tape;
    std::vector<Var> leaves;
    const Var loss = loss_of(inputs, tape, &leaves);
    tape.backward(loss);

    double worst = 0.0;
    std::vector<Tensor> xs = inputs;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const Tensor analytic = tape.grad(leaves[i]);
        for (std::size_t k = 0; k < xs[i].size(); ++k) {
            const double saved = xs[i][k];
            xs[i][k] = saved + h;
            Tape tp;
            const double up = loss_of(xs, tp, nullptr).value().item();
            xs[i][k] = saved - h;
            Tape tm;
            const double down = loss_of(xs, tm, nullptr).value().item();
            xs[i][k] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[k];
            const double err = std::abs(a - numeric) / (std::max(std::abs(a), std::abs(numeric)) + 1e-8);
            worst = std::max(worst, err);
        }
    }
    return worst;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("polysed_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace polysed::test

#include "polysed/capsnet.h"

namespace polysed::test {

/// Small network with every CapsNet stage: 2 conv layers, pooling, primary
/// and output capsules, N = 2.
inline CapsNetConfig mini_config(std::size_t routing_iters) {
    CapsNetConfig c;
    c.cnn_kernels = {3, 2};
    c.cnn_kernel_dim = 3;
    c.pool_dims = {2, 2};
    c.n_primary_caps = 3;
    c.primary_cap_dim = 4;
    c.output_cap_dim = 3;
    c.routing_iters = routing_iters;
    c.n_events = 2;
    c.dropout_rate = 0.0;
    c.l2_weight = 1e-3;
    return c;
}

/// Max relative error between tape gradients of the detection loss and
/// central differences, over every parameter entry of a seeded mini model.
inline double model_gradient_error(std::size_t routing_iters, std::uint64_t seed, double h = 1e-5) {
    const std::size_t frames = 4;
    const std::size_t bins = 8;
    const std::size_t channels = 2;
    SeededRng rng(seed);
    CapsNetModel model(mini_config(routing_iters), bins, channels, rng);
    // Biases start at zero; move them off so every path carries gradient.
    for (auto& [name, value] : model.parameters()) {
        if (name.ends_with(".bias")) {
            value = random_tensor(value.shape(), rng, -0.2, 0.2);
        }
    }
    const Tensor window = random_tensor({frames, bins, channels}, rng, -1.0, 1.0);
    Tensor target({frames, 2});
    for (double& v : target.values()) {
        v = rng.uniform() < 0.5 ? 1.0 : 0.0;
    }
    std::vector<double> mask(frames, 1.0);
    mask[frames - 1] = 0.0;

    const auto loss_value = [&](Gradients* grads) {
        Tape tape;
        const ForwardPass pass = model.forward(tape, window, false);
        const Var loss = detection_loss(pass.activity, target, mask, model.config().l2_weight, pass.parameters);
        if (grads != nullptr) {
            *grads = tape.backward(loss);
        }
        return loss.value().item();
    };

    Gradients grads;
    loss_value(&grads);
    double worst = 0.0;
    for (auto& [name, value] : model.parameters()) {
        const Tensor& analytic = grads.at(name);
        for (std::size_t k = 0; k < value.size(); ++k) {
            const double saved = value[k];
            value[k] = saved + h;
            const double up = loss_value(nullptr);
            value[k] = saved - h;
            const double down = loss_value(nullptr);
            value[k] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[k];
            worst = std::max(worst, std::abs(a - numeric) / (std::max(std::abs(a), std::abs(numeric)) + 1e-8));
        }
    }
    return worst;
}

}  // namespace polysed::test
