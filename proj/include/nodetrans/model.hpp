#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nodetrans/rng.hpp"
#include "nodetrans/tensor.hpp"

namespace nodetrans {

class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ModelConfig {
    int history = 12;        // S
    int horizon = 12;        // H
    int channels = 1;        // C; GCN output width F is forced to C
    int nodes = 0;           // N, domain-specific
    int embed_dim = 10;      // d
    int tcn_hidden = 32;     // O
    int kernel_len = 3;      // K
    std::vector<int> dilations = {1, 2};  // one residual block per entry
    int clusters = 5;        // G
    double alpha = 1.0;      // regularizer trade-off
    double beta = 0.2;       // EMA smoothing weight

    int gcn_out() const { return channels; }
    int conv_layers() const { return static_cast<int>(dilations.size()) * 2; }
    // In/out channel widths of flattened conv layer l (two per block).
    int conv_in(int l) const { return l == 0 ? channels : tcn_hidden; }
    int conv_out(int) const { return tcn_hidden; }

    void validate() const;
    bool same_except_nodes(const ModelConfig& o, std::vector<std::string>* diffs = nullptr) const;
};

// Every tensor except `embedding` has a shape independent of the node count.
struct ParamTensors {
    Tensor embedding;                    // N x d
    std::vector<Tensor> conv_pools;      // per conv layer: d x (co*K*ci)
    Tensor conv_bias;                    // one scalar per conv layer
    std::vector<Tensor> residual_weights;  // per block, ci x O; empty when ci == O
    Tensor spatial_pool;                 // d x (O*F)
    Tensor gcn_bias;                     // F
    Tensor predictor_pool;               // d x (H*S)
    Tensor predictor_bias_pool;          // d x H

    // Fixed iteration order; names double as checkpoint tensor keys.
    void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
    void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;
    std::size_t element_count() const;
    void add(const ParamTensors& o);  // elementwise; shapes must match
    void zero();
};

struct StgNetParams {
    ModelConfig config;
    ParamTensors tensors;
};

// Zero-valued tensors shaped for `config`; node_count overrides config.nodes
// when building gradients for a different embedding size.
ParamTensors make_param_tensors(const ModelConfig& config);
StgNetParams init_params(const ModelConfig& config, Rng rng);
std::size_t parameter_count(const ModelConfig& config);

struct ForwardTrace {
    Tensor tcn_output;   // Q: N x S x O
    Tensor gcn_output;   // Z: N x S x F
    Tensor prediction;   // X-hat: N x H x C
    Tensor adjacency;    // A-bar: N x N
};

// Intermediates retained for the backward pass.
struct ForwardWorkspace {
    Tensor row_weights;                 // row_softmax(E), N x d
    Tensor adjacency;                   // N x N
    std::vector<Tensor> conv_inputs;    // per conv layer, N x S x ci
    std::vector<Tensor> conv_pre;       // per conv layer, N x S x O (pre-activation)
    std::vector<Tensor> conv_kernels;   // per conv layer, N x (co*K*ci) materialized
    std::vector<Tensor> block_inputs;   // per block, N x S x ci
    std::vector<Tensor> block_pre;      // per block, residual + conv2 output before final ReLU
    Tensor tcn_output;                  // Q
    Tensor gcn_mixed;                   // M = (I + A-bar) Q, N x S x O
    Tensor gcn_weights;                 // per-node W, N x (O*F)
    Tensor gcn_output;                  // Z
    Tensor predictor_weights;           // per-node V, N x (H*S)
    Tensor predictor_bias;              // per-node c, N x H
    Tensor prediction;                  // X-hat
};

Tensor row_softmax(const Tensor& m);

// node block i = row_softmax(E)_i * pool; returns N x pool_cols (caller
// interprets columns row-major as the target shape).
Tensor materialize_node_params(const Tensor& row_weights, const Tensor& pool,
                               std::size_t expected_cols);

// Single-series dilated causal convolution; x is time x in, kernel out x K x in.
Tensor dilated_causal_conv(const Tensor& x, const Tensor& kernel, int dilation, double bias);

Tensor adaptive_adjacency(const Tensor& embedding);

// Full forward pass; x is N x S x C.
ForwardTrace stgnet_forward(const Tensor& x, const StgNetParams& params,
                            ForwardWorkspace* ws = nullptr);

}  // namespace nodetrans
