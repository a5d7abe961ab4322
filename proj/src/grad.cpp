#include "nodetrans/grad.hpp"

#include <cmath>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace nodetrans {

double prediction_loss(const Tensor& pred, const Tensor& truth) {
    if (!pred.same_shape(truth)) throw ModelError("prediction_loss: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double d = pred[i] - truth[i];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.size());
}

namespace {

// dWsm and dPool from a per-node materialized-parameter gradient
// (node_grads is N x cols, pool is d x cols).
void materialize_backward(const Tensor& row_weights, const Tensor& pool,
                          const Tensor& node_grads, Tensor& d_pool, Tensor& d_row_weights) {
    std::size_t n = row_weights.dim(0);
    std::size_t d = row_weights.dim(1);
    std::size_t cols = pool.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
        const double* g = node_grads.data() + i * cols;
        for (std::size_t j = 0; j < d; ++j) {
            double w = row_weights.at(i, j);
            const double* pr = pool.data() + j * cols;
            double* dpr = d_pool.data() + j * cols;
            double dot = 0.0;
            for (std::size_t cidx = 0; cidx < cols; ++cidx) {
                dpr[cidx] += w * g[cidx];
                dot += pr[cidx] * g[cidx];
            }
            d_row_weights.at(i, j) += dot;
        }
    }
}

// Backward of the per-node dilated causal convolution. Accumulates kernel
// gradients (N x cols), the scalar bias gradient, and dIn.
void node_conv_backward(const Tensor& in, const Tensor& kernels, int k, int ci, int co,
                        int dilation, const Tensor& d_out, Tensor& d_kernels,
                        double& d_bias, Tensor& d_in) {
    std::size_t n = in.dim(0);
    std::size_t s = in.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
        const double* kern = kernels.data() + i * kernels.dim(1);
        double* dkern = d_kernels.data() + i * d_kernels.dim(1);
        for (std::size_t t = 0; t < s; ++t) {
            for (int o = 0; o < co; ++o) {
                double g = d_out.at(i, t, static_cast<std::size_t>(o));
                if (g == 0.0) continue;
                d_bias += g;
                for (int tap = 0; tap < k; ++tap) {
                    std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) -
                                         static_cast<std::ptrdiff_t>(tap) * dilation;
                    if (src < 0) continue;
                    std::size_t st = static_cast<std::size_t>(src);
                    const double* kr = kern + (o * k + tap) * ci;
                    double* dkr = dkern + (o * k + tap) * ci;
                    for (int c = 0; c < ci; ++c) {
                        double xin = in.at(i, st, static_cast<std::size_t>(c));
                        dkr[c] += g * xin;
                        d_in.at(i, st, static_cast<std::size_t>(c)) += g * kr[c];
                    }
                }
            }
        }
    }
}

}  // namespace

void stgnet_backward(const StgNetParams& params, const Tensor& x,
                     const ForwardWorkspace& ws, const Tensor& d_prediction,
                     ParamTensors& grads) {
    const ModelConfig& cfg = params.config;
    const ParamTensors& p = params.tensors;
    std::size_t n = static_cast<std::size_t>(cfg.nodes);
    std::size_t s = static_cast<std::size_t>(cfg.history);
    std::size_t h = static_cast<std::size_t>(cfg.horizon);
    std::size_t c = static_cast<std::size_t>(cfg.channels);
    std::size_t o = static_cast<std::size_t>(cfg.tcn_hidden);
    std::size_t f = static_cast<std::size_t>(cfg.gcn_out());
    int k = cfg.kernel_len;

    Tensor d_row_weights({n, static_cast<std::size_t>(cfg.embed_dim)});

    // --- MFDense backward ---
    Tensor d_z({n, s, f});
    Tensor d_v({n, h * s});
    Tensor d_c_bias({n, h});
    for (std::size_t i = 0; i < n; ++i) {
        const double* vi = ws.predictor_weights.data() + i * (h * s);
        double* dvi = d_v.data() + i * (h * s);
        double* dci = d_c_bias.data() + i * h;
        for (std::size_t hh = 0; hh < h; ++hh) {
            for (std::size_t cc = 0; cc < c; ++cc) {
                double g = d_prediction.at(i, hh, cc);
                if (g == 0.0) continue;
                dci[hh] += g;
                for (std::size_t t = 0; t < s; ++t) {
                    dvi[hh * s + t] += g * ws.gcn_output.at(i, t, cc);
                    d_z.at(i, t, cc) += g * vi[hh * s + t];
                }
            }
        }
    }
    materialize_backward(ws.row_weights, p.predictor_pool, d_v,
                         grads.predictor_pool, d_row_weights);
    materialize_backward(ws.row_weights, p.predictor_bias_pool, d_c_bias,
                         grads.predictor_bias_pool, d_row_weights);

    // --- GCN backward ---
    Tensor d_w({n, o * f});
    Tensor d_mixed({n, s, o});
    for (std::size_t i = 0; i < n; ++i) {
        const double* wi = ws.gcn_weights.data() + i * (o * f);
        double* dwi = d_w.data() + i * (o * f);
        for (std::size_t t = 0; t < s; ++t) {
            for (std::size_t ff = 0; ff < f; ++ff) {
                double g = d_z.at(i, t, ff);
                if (g == 0.0) continue;
                grads.gcn_bias[ff] += g;
                for (std::size_t oo = 0; oo < o; ++oo) {
                    dwi[oo * f + ff] += g * ws.gcn_mixed.at(i, t, oo);
                    d_mixed.at(i, t, oo) += g * wi[oo * f + ff];
                }
            }
        }
    }
    materialize_backward(ws.row_weights, p.spatial_pool, d_w, grads.spatial_pool,
                         d_row_weights);

    // Mixed = (I + A-bar) Q: split into dQ and dA-bar.
    Tensor d_q = d_mixed;
    Tensor d_adj({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double a = ws.adjacency.at(i, j);
            double dot = 0.0;
            for (std::size_t t = 0; t < s; ++t) {
                for (std::size_t oo = 0; oo < o; ++oo) {
                    double dm = d_mixed.at(i, t, oo);
                    d_q.at(j, t, oo) += a * dm;
                    dot += dm * ws.tcn_output.at(j, t, oo);
                }
            }
            d_adj.at(i, j) = dot;
        }
    }

    // --- adaptive adjacency backward: row softmax over ReLU(E E^T) ---
    const Tensor& e = p.embedding;
    std::size_t ed = e.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += ws.adjacency.at(i, j) * d_adj.at(i, j);
        for (std::size_t j = 0; j < n; ++j) {
            double d_logit = ws.adjacency.at(i, j) * (d_adj.at(i, j) - dot);
            if (d_logit == 0.0) continue;
            double raw = 0.0;
            for (std::size_t q = 0; q < ed; ++q) raw += e.at(i, q) * e.at(j, q);
            if (raw <= 0.0) continue;  // ReLU subgradient 0 at and below 0
            for (std::size_t q = 0; q < ed; ++q) {
                grads.embedding.at(i, q) += d_logit * e.at(j, q);
                grads.embedding.at(j, q) += d_logit * e.at(i, q);
            }
        }
    }

    // --- TCN backward, blocks in reverse ---
    Tensor d_cur = std::move(d_q);
    int blocks = static_cast<int>(cfg.dilations.size());
    for (int b = blocks - 1; b >= 0; --b) {
        int l1 = 2 * b;
        int l2 = 2 * b + 1;
        int dil = cfg.dilations[static_cast<std::size_t>(b)];
        int ci = cfg.conv_in(l1);
        const Tensor& block_in = ws.block_inputs[static_cast<std::size_t>(b)];
        const Tensor& block_pre = ws.block_pre[static_cast<std::size_t>(b)];

        // Final block ReLU.
        Tensor d_block_pre = d_cur;
        for (std::size_t i = 0; i < d_block_pre.size(); ++i) {
            if (block_pre[i] <= 0.0) d_block_pre[i] = 0.0;
        }

        // Residual path.
        Tensor d_block_in({n, s, static_cast<std::size_t>(ci)});
        if (static_cast<std::size_t>(ci) == o) {
            d_block_in = d_block_pre;
        } else {
            const Tensor& res = p.residual_weights[static_cast<std::size_t>(b)];
            Tensor& d_res = grads.residual_weights[static_cast<std::size_t>(b)];
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t t = 0; t < s; ++t) {
                    for (std::size_t oo = 0; oo < o; ++oo) {
                        double g = d_block_pre.at(i, t, oo);
                        if (g == 0.0) continue;
                        for (int cc = 0; cc < ci; ++cc) {
                            d_res.at(static_cast<std::size_t>(cc), oo) +=
                                g * block_in.at(i, t, static_cast<std::size_t>(cc));
                            d_block_in.at(i, t, static_cast<std::size_t>(cc)) +=
                                g * res.at(static_cast<std::size_t>(cc), oo);
                        }
                    }
                }
            }
        }

        // Second conv layer (O -> O).
        const Tensor& h1 = ws.conv_inputs[static_cast<std::size_t>(l2)];
        Tensor d_kern2({n, o * static_cast<std::size_t>(k) * o});
        Tensor d_h1({n, s, o});
        double d_bias2 = 0.0;
        node_conv_backward(h1, ws.conv_kernels[static_cast<std::size_t>(l2)], k,
                           static_cast<int>(o), static_cast<int>(o), dil, d_block_pre,
                           d_kern2, d_bias2, d_h1);
        grads.conv_bias[static_cast<std::size_t>(l2)] += d_bias2;
        materialize_backward(ws.row_weights, p.conv_pools[static_cast<std::size_t>(l2)],
                             d_kern2, grads.conv_pools[static_cast<std::size_t>(l2)],
                             d_row_weights);

        // Inner ReLU.
        const Tensor& pre1 = ws.conv_pre[static_cast<std::size_t>(l1)];
        for (std::size_t i = 0; i < d_h1.size(); ++i) {
            if (pre1[i] <= 0.0) d_h1[i] = 0.0;
        }

        // First conv layer (ci -> O).
        Tensor d_kern1({n, o * static_cast<std::size_t>(k) * static_cast<std::size_t>(ci)});
        Tensor d_conv_in({n, s, static_cast<std::size_t>(ci)});
        double d_bias1 = 0.0;
        node_conv_backward(block_in, ws.conv_kernels[static_cast<std::size_t>(l1)], k, ci,
                           static_cast<int>(o), dil, d_h1, d_kern1, d_bias1, d_conv_in);
        grads.conv_bias[static_cast<std::size_t>(l1)] += d_bias1;
        materialize_backward(ws.row_weights, p.conv_pools[static_cast<std::size_t>(l1)],
                             d_kern1, grads.conv_pools[static_cast<std::size_t>(l1)],
                             d_row_weights);

        d_block_in += d_conv_in;
        d_cur = std::move(d_block_in);
    }
    (void)x;

    // --- row_softmax backward (all pool materializations share one Jacobian) ---
    for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < ed; ++j) dot += ws.row_weights.at(i, j) * d_row_weights.at(i, j);
        for (std::size_t j = 0; j < ed; ++j) {
            grads.embedding.at(i, j) += ws.row_weights.at(i, j) * (d_row_weights.at(i, j) - dot);
        }
    }
}

Tensor window_to_model_input(const Tensor& window) {
    std::size_t s = window.dim(0);
    std::size_t n = window.dim(1);
    std::size_t c = window.dim(2);
    Tensor out({n, s, c});
    for (std::size_t t = 0; t < s; ++t)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < c; ++k) out.at(i, t, k) = window.at(t, i, k);
    return out;
}

Tensor window_to_model_target(const Tensor& window) {
    return window_to_model_input(window);
}

int worker_thread_count() {
    const char* env = std::getenv("NODETRANS_THREADS");
    if (!env || *env == '\0') return 1;  // unset: single-threaded deterministic mode
    int v = std::atoi(env);
    return v > 0 ? v : 1;
}

namespace {

struct SampleResult {
    double loss = 0.0;
    ParamTensors grads;
};

SampleResult sample_gradients(const StgNetParams& params, const WindowedSample& sample,
                              double batch_scale) {
    SampleResult res;
    res.grads = make_param_tensors(params.config);
    Tensor x = window_to_model_input(sample.input);
    Tensor y = window_to_model_target(sample.target);
    ForwardWorkspace ws;
    stgnet_forward(x, params, &ws);
    res.loss = prediction_loss(ws.prediction, y);
    Tensor d_pred = ws.prediction;
    double coeff = 2.0 * batch_scale / static_cast<double>(y.size());
    for (std::size_t i = 0; i < d_pred.size(); ++i) {
        d_pred[i] = coeff * (ws.prediction[i] - y[i]);
    }
    stgnet_backward(params, x, ws, d_pred, res.grads);
    return res;
}

void check_finite(const BatchGradients& bg) {
    if (!std::isfinite(bg.loss)) {
        throw ModelError("compute_batch_gradients: non-finite loss");
    }
}

BatchGradients reduce_samples(const StgNetParams& params,
                              std::vector<SampleResult>& per_sample,
                              const RegularizerTerm& reg) {
    BatchGradients out;
    out.grads = make_param_tensors(params.config);
    double inv_b = 1.0 / static_cast<double>(per_sample.size());
    for (SampleResult& sr : per_sample) {
        out.prediction_loss += sr.loss * inv_b;
        out.grads.add(sr.grads);
    }
    out.loss = out.prediction_loss;
    if (reg.state && reg.alpha != 0.0) {
        out.regularizer = cluster_regularizer(params.tensors.embedding, *reg.state);
        out.loss += reg.alpha * out.regularizer;
        cluster_regularizer_grad(params.tensors.embedding, *reg.state, reg.alpha,
                                 out.grads.embedding);
    }
    check_finite(out);
    return out;
}

}  // namespace

BatchGradients compute_batch_gradients_serial(const StgNetParams& params,
                                              const std::vector<const WindowedSample*>& batch,
                                              const RegularizerTerm& reg) {
    if (batch.empty()) throw ModelError("compute_batch_gradients: empty batch");
    double inv_b = 1.0 / static_cast<double>(batch.size());
    std::vector<SampleResult> per_sample(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        per_sample[i] = sample_gradients(params, *batch[i], inv_b);
    }
    return reduce_samples(params, per_sample, reg);
}

BatchGradients compute_batch_gradients(const StgNetParams& params,
                                       const std::vector<const WindowedSample*>& batch,
                                       const RegularizerTerm& reg) {
    if (batch.empty()) throw ModelError("compute_batch_gradients: empty batch");
    int threads = worker_thread_count();
    if (threads <= 1) return compute_batch_gradients_serial(params, batch, reg);

    double inv_b = 1.0 / static_cast<double>(batch.size());
    std::vector<SampleResult> per_sample(batch.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(threads)
#endif
    for (std::size_t i = 0; i < batch.size(); ++i) {
        per_sample[i] = sample_gradients(params, *batch[i], inv_b);
    }
    // Reduction stays in sample order so the result is bit-identical to the
    // serial reference for any thread count.
    return reduce_samples(params, per_sample, reg);
}

}  // namespace nodetrans
