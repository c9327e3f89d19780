#include "dlcfm/adam.hpp"

#include <cmath>

#include "dlcfm/errors.hpp"

namespace dlcfm::ad {

void adam_step(ParamMap& params, const ParamMap& grads, AdamState& state) {
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

    for (auto& [name, theta] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) throw NumericError("adam: missing gradient for parameter '" + name + "'");
        const Array& g = git->second;
        if (g.shape != theta.shape)
            throw NumericError("adam: gradient shape " + shape_str(g.shape) + " != parameter shape " +
                               shape_str(theta.shape) + " for '" + name + "'");
        for (double v : g.data)
            if (std::isnan(v)) throw NumericError("adam: NaN gradient for parameter '" + name + "'");

        Array& m = state.m.try_emplace(name, Array(theta.shape)).first->second;
        Array& v = state.v.try_emplace(name, Array(theta.shape)).first->second;
        if (m.shape != theta.shape || v.shape != theta.shape)
            throw NumericError("adam: moment shape mismatch for '" + name + "'");

        for (std::size_t i = 0; i < theta.numel(); ++i) {
            const double gi = g.data[i];
            m.data[i] = state.beta1 * m.data[i] + (1.0 - state.beta1) * gi;
            v.data[i] = state.beta2 * v.data[i] + (1.0 - state.beta2) * gi * gi;
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            theta.data[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

}  // namespace dlcfm::ad
