#pragma once

#include "polysed/tensor.h"

#include <map>
#include <string>

namespace polysed {

using ParameterMap = std::map<std::string, Tensor>;

struct AdaDeltaOptions {
    double lr = 1.0;
    double rho = 0.95;
    double epsilon = 1e-6;
};

/// Per-parameter running averages E[g^2] and E[dx^2] (Zeiler 2012).
struct AdaDeltaState {
    AdaDeltaOptions options;
    std::map<std::string, Tensor> mean_sq_grad;
    std::map<std::string, Tensor> mean_sq_update;

    AdaDeltaState() = default;
    explicit AdaDeltaState(AdaDeltaOptions opts) : options(opts) {}
};

/// One AdaDelta update of every parameter that has a gradient.
///
/// Parameters without an entry in `grads` are left alone. Throws
/// NumericError before touching anything if a gradient is non-finite,
/// ShapeError if a gradient shape disagrees with its parameter.
void adadelta_step(ParameterMap& params, const std::map<std::string, Tensor>& grads,
                   AdaDeltaState& state);

}  // namespace polysed
