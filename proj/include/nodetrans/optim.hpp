#pragma once

#include "nodetrans/model.hpp"

namespace nodetrans {

struct OptimizerState {
    double learning_rate = 0.003;
    double decay_factor = 0.3;
    int decay_every = 50;  // epochs
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step = 0;
    ParamTensors first_moment;
    ParamTensors second_moment;
};

OptimizerState make_optimizer(const ModelConfig& config, double learning_rate,
                              double decay_factor, int decay_every);

// Learning rate after the stated epoch-based decay schedule.
double learning_rate_for_epoch(const OptimizerState& state, int epoch);

// Standard bias-corrected Adam update, in place.
void adam_step(OptimizerState& state, ParamTensors& params, const ParamTensors& grads,
               double lr);

}  // namespace nodetrans
