#include "nodetrans/optim.hpp"

#include <cmath>
#include <vector>

namespace nodetrans {

OptimizerState make_optimizer(const ModelConfig& config, double learning_rate,
                              double decay_factor, int decay_every) {
    OptimizerState s;
    s.learning_rate = learning_rate;
    s.decay_factor = decay_factor;
    s.decay_every = decay_every;
    s.first_moment = make_param_tensors(config);
    s.second_moment = make_param_tensors(config);
    return s;
}

double learning_rate_for_epoch(const OptimizerState& state, int epoch) {
    int decays = state.decay_every > 0 ? epoch / state.decay_every : 0;
    return state.learning_rate * std::pow(state.decay_factor, decays);
}

void adam_step(OptimizerState& state, ParamTensors& params, const ParamTensors& grads,
               double lr) {
    ++state.step;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

    struct Slot {
        Tensor* p;
        const Tensor* g;
        Tensor* m;
        Tensor* v;
    };
    std::vector<Slot> slots;
    std::vector<Tensor*> ps, ms, vs;
    std::vector<const Tensor*> gs;
    params.for_each([&](const std::string&, Tensor& t) { ps.push_back(&t); });
    grads.for_each([&](const std::string&, const Tensor& t) { gs.push_back(&t); });
    state.first_moment.for_each([&](const std::string&, Tensor& t) { ms.push_back(&t); });
    state.second_moment.for_each([&](const std::string&, Tensor& t) { vs.push_back(&t); });
    if (ps.size() != gs.size() || ps.size() != ms.size()) {
        throw ModelError("adam_step: tensor set mismatch");
    }

    for (std::size_t s = 0; s < ps.size(); ++s) {
        Tensor& p = *ps[s];
        const Tensor& g = *gs[s];
        Tensor& m = *ms[s];
        Tensor& v = *vs[s];
        if (!p.same_shape(g)) throw ModelError("adam_step: gradient shape mismatch");
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            double m_hat = m[i] / bc1;
            double v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

}  // namespace nodetrans
