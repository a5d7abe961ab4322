#pragma once

#include <optional>

#include "nodetrans/cluster.hpp"
#include "nodetrans/data.hpp"
#include "nodetrans/model.hpp"

namespace nodetrans {

// Mean squared error over all N*H*C entries.
double prediction_loss(const Tensor& pred, const Tensor& truth);

// Reverse-mode gradients of a scalar loss through the full forward pass.
// `d_prediction` is dLoss/dX-hat; gradients accumulate into `grads`, which
// must be shaped by make_param_tensors(params.config).
void stgnet_backward(const StgNetParams& params, const Tensor& x,
                     const ForwardWorkspace& ws, const Tensor& d_prediction,
                     ParamTensors& grads);

struct BatchGradients {
    double loss = 0.0;          // L_p (+ alpha * R when regularized)
    double prediction_loss = 0.0;
    double regularizer = 0.0;
    ParamTensors grads;
};

struct RegularizerTerm {
    const ClusterState* state = nullptr;  // centers are constants under differentiation
    double alpha = 0.0;
};

// Mean loss over the batch; windows are S x N x C and transposed internally.
// The serial version is the reference; the parallel version computes
// per-sample gradients concurrently and reduces them in sample order, so both
// produce bit-identical results.
BatchGradients compute_batch_gradients_serial(const StgNetParams& params,
                                              const std::vector<const WindowedSample*>& batch,
                                              const RegularizerTerm& reg = {});
BatchGradients compute_batch_gradients(const StgNetParams& params,
                                       const std::vector<const WindowedSample*>& batch,
                                       const RegularizerTerm& reg = {});

// S x N x C -> N x S x C (model input layout).
Tensor window_to_model_input(const Tensor& window);
// H x N x C -> N x H x C.
Tensor window_to_model_target(const Tensor& window);

int worker_thread_count();

}  // namespace nodetrans
