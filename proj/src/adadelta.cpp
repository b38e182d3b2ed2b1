#include "polysed/adadelta.h"

#include "polysed/errors.h"

#include <cmath>

namespace polysed {

void adadelta_step(ParameterMap& params, const std::map<std::string, Tensor>& grads,
                   AdaDeltaState& state) {
    for (const auto& [name, g] : grads) {
        const auto it = params.find(name);
        if (it == params.end()) {
            throw ShapeError("adadelta: gradient for unknown parameter '" + name + "'");
        }
        if (it->second.shape() != g.shape()) {
            throw ShapeError("adadelta: gradient shape " + to_string(g.shape()) +
                             " != parameter shape " + to_string(it->second.shape()) + " for '" +
                             name + "'");
        }
        if (!g.all_finite()) {
            throw NumericError("adadelta: non-finite gradient for '" + name + "'");
        }
    }

    const double rho = state.options.rho;
    const double eps = state.options.epsilon;
    const double lr = state.options.lr;
    for (const auto& [name, g] : grads) {
        Tensor& p = params.at(name);
        auto [gi, g_new] = state.mean_sq_grad.try_emplace(name, p.shape());
        auto [ui, u_new] = state.mean_sq_update.try_emplace(name, p.shape());
        Tensor& acc_g = gi->second;
        Tensor& acc_u = ui->second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            acc_g[i] = rho * acc_g[i] + (1.0 - rho) * g[i] * g[i];
            const double update = -std::sqrt(acc_u[i] + eps) / std::sqrt(acc_g[i] + eps) * g[i];
            acc_u[i] = rho * acc_u[i] + (1.0 - rho) * update * update;
            p[i] += lr * update;
        }
    }
}

}  // namespace polysed
