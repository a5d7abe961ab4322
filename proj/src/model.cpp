#include "nodetrans/model.hpp"

#include <cmath>

namespace nodetrans {

void ModelConfig::validate() const {
    if (nodes < 1) throw ModelError("config: nodes must be >= 1");
    if (history < 1 || horizon < 1) throw ModelError("config: history and horizon must be >= 1");
    if (channels < 1) throw ModelError("config: channels must be >= 1");
    if (embed_dim < 1) throw ModelError("config: embed_dim must be >= 1");
    if (tcn_hidden < 1) throw ModelError("config: tcn_hidden must be >= 1");
    if (kernel_len < 2) throw ModelError("config: kernel_len must be >= 2");
    if (dilations.empty()) throw ModelError("config: dilations must be non-empty");
    for (int d : dilations) {
        if (d < 1) throw ModelError("config: dilation factors must be >= 1");
    }
    if (clusters < 1) throw ModelError("config: clusters must be >= 1");
    if (alpha < 0) throw ModelError("config: alpha must be >= 0");
    if (beta <= 0 || beta > 1) throw ModelError("config: beta must be in (0,1]");
}

bool ModelConfig::same_except_nodes(const ModelConfig& o, std::vector<std::string>* diffs) const {
    auto note = [&](const std::string& f) {
        if (diffs) diffs->push_back(f);
    };
    bool ok = true;
    if (history != o.history) { note("history"); ok = false; }
    if (horizon != o.horizon) { note("horizon"); ok = false; }
    if (channels != o.channels) { note("channels"); ok = false; }
    if (embed_dim != o.embed_dim) { note("embed_dim"); ok = false; }
    if (tcn_hidden != o.tcn_hidden) { note("tcn_hidden"); ok = false; }
    if (kernel_len != o.kernel_len) { note("kernel_len"); ok = false; }
    if (dilations != o.dilations) { note("dilations"); ok = false; }
    if (clusters != o.clusters) { note("clusters"); ok = false; }
    return ok;
}

void ParamTensors::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
    fn("embedding", embedding);
    for (std::size_t l = 0; l < conv_pools.size(); ++l) {
        fn("conv_pool_" + std::to_string(l), conv_pools[l]);
    }
    fn("conv_bias", conv_bias);
    for (std::size_t b = 0; b < residual_weights.size(); ++b) {
        if (!residual_weights[b].empty()) {
            fn("residual_1x1_" + std::to_string(b), residual_weights[b]);
        }
    }
    fn("spatial_pool", spatial_pool);
    fn("gcn_bias", gcn_bias);
    fn("predictor_pool", predictor_pool);
    fn("predictor_bias_pool", predictor_bias_pool);
}

void ParamTensors::for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const {
    const_cast<ParamTensors*>(this)->for_each(
        [&](const std::string& name, Tensor& t) { fn(name, t); });
}

void ParamTensors::add(const ParamTensors& o) {
    embedding += o.embedding;
    for (std::size_t l = 0; l < conv_pools.size(); ++l) conv_pools[l] += o.conv_pools[l];
    conv_bias += o.conv_bias;
    for (std::size_t b = 0; b < residual_weights.size(); ++b) {
        if (!residual_weights[b].empty()) residual_weights[b] += o.residual_weights[b];
    }
    spatial_pool += o.spatial_pool;
    gcn_bias += o.gcn_bias;
    predictor_pool += o.predictor_pool;
    predictor_bias_pool += o.predictor_bias_pool;
}

void ParamTensors::zero() {
    for_each([](const std::string&, Tensor& t) { t.fill(0.0); });
}

std::size_t ParamTensors::element_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
}

ParamTensors make_param_tensors(const ModelConfig& cfg) {
    cfg.validate();
    std::size_t n = static_cast<std::size_t>(cfg.nodes);
    std::size_t d = static_cast<std::size_t>(cfg.embed_dim);
    std::size_t s = static_cast<std::size_t>(cfg.history);
    std::size_t h = static_cast<std::size_t>(cfg.horizon);
    std::size_t k = static_cast<std::size_t>(cfg.kernel_len);
    std::size_t o = static_cast<std::size_t>(cfg.tcn_hidden);
    std::size_t f = static_cast<std::size_t>(cfg.gcn_out());

    ParamTensors p;
    p.embedding = Tensor({n, d});
    int layers = cfg.conv_layers();
    for (int l = 0; l < layers; ++l) {
        std::size_t ci = static_cast<std::size_t>(cfg.conv_in(l));
        std::size_t co = static_cast<std::size_t>(cfg.conv_out(l));
        p.conv_pools.emplace_back(std::vector<std::size_t>{d, co * k * ci});
    }
    p.conv_bias = Tensor({static_cast<std::size_t>(layers)});
    for (std::size_t b = 0; b < cfg.dilations.size(); ++b) {
        std::size_t ci = static_cast<std::size_t>(cfg.conv_in(static_cast<int>(2 * b)));
        if (ci != o) {
            p.residual_weights.emplace_back(std::vector<std::size_t>{ci, o});
        } else {
            p.residual_weights.emplace_back();
        }
    }
    p.spatial_pool = Tensor({d, o * f});
    p.gcn_bias = Tensor({f});
    p.predictor_pool = Tensor({d, h * s});
    p.predictor_bias_pool = Tensor({d, h});
    return p;
}

StgNetParams init_params(const ModelConfig& cfg, Rng rng) {
    StgNetParams params;
    params.config = cfg;
    params.tensors = make_param_tensors(cfg);
    double bound = 0.5 / std::sqrt(static_cast<double>(cfg.embed_dim));
    params.tensors.for_each([&](const std::string& name, Tensor& t) {
        if (name == "conv_bias" || name == "gcn_bias") return;  // biases start at zero
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    });
    return params;
}

std::size_t parameter_count(const ModelConfig& cfg) {
    return make_param_tensors(cfg).element_count();
}

Tensor row_softmax(const Tensor& m) {
    Tensor out = m;
    std::size_t rows = m.dim(0);
    std::size_t cols = m.dim(1);
    for (std::size_t i = 0; i < rows; ++i) {
        double mx = out.at(i, 0);
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, out.at(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            double e = std::exp(out.at(i, j) - mx);
            out.at(i, j) = e;
            sum += e;
        }
        for (std::size_t j = 0; j < cols; ++j) out.at(i, j) /= sum;
    }
    return out;
}

Tensor materialize_node_params(const Tensor& row_weights, const Tensor& pool,
                               std::size_t expected_cols) {
    if (pool.dim(1) != expected_cols) {
        throw ModelError("materialize_node_params: pool has " + std::to_string(pool.dim(1)) +
                         " columns, expected " + std::to_string(expected_cols));
    }
    if (row_weights.dim(1) != pool.dim(0)) {
        throw ModelError("materialize_node_params: embedding dim mismatch");
    }
    std::size_t n = row_weights.dim(0);
    std::size_t d = row_weights.dim(1);
    std::size_t m = pool.dim(1);
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            double w = row_weights.at(i, j);
            const double* pr = pool.data() + j * m;
            double* orow = out.data() + i * m;
            for (std::size_t c = 0; c < m; ++c) orow[c] += w * pr[c];
        }
    }
    return out;
}

Tensor dilated_causal_conv(const Tensor& x, const Tensor& kernel, int dilation, double bias) {
    if (dilation < 1) throw ModelError("dilated_causal_conv: dilation must be >= 1");
    std::size_t time = x.dim(0);
    std::size_t ci = x.dim(1);
    std::size_t co = kernel.dim(0);
    std::size_t k = kernel.dim(1);
    if (kernel.dim(2) != ci) throw ModelError("dilated_causal_conv: channel mismatch");
    Tensor out({time, co});
    for (std::size_t t = 0; t < time; ++t) {
        for (std::size_t o = 0; o < co; ++o) {
            double acc = bias;
            for (std::size_t s = 0; s < k; ++s) {
                std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) -
                                     static_cast<std::ptrdiff_t>(s) * dilation;
                if (src < 0) continue;  // left zero padding
                for (std::size_t c = 0; c < ci; ++c) {
                    acc += kernel.at(o, s, c) * x.at(static_cast<std::size_t>(src), c);
                }
            }
            out.at(t, o) = acc;
        }
    }
    return out;
}

Tensor adaptive_adjacency(const Tensor& embedding) {
    std::size_t n = embedding.dim(0);
    std::size_t d = embedding.dim(1);
    Tensor logits({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k) dot += embedding.at(i, k) * embedding.at(j, k);
            logits.at(i, j) = dot > 0 ? dot : 0.0;
        }
    }
    return row_softmax(logits);
}

namespace {

// Per-node conv over an N x S x ci activation using node kernels stored as
// N x (co*K*ci); writes pre-activation into out (N x S x co).
void node_conv(const Tensor& x, const Tensor& kernels, int k, int ci, int co,
               int dilation, double bias, Tensor& out) {
    std::size_t n = x.dim(0);
    std::size_t s = x.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
        const double* kern = kernels.data() + i * kernels.dim(1);
        for (std::size_t t = 0; t < s; ++t) {
            for (int o = 0; o < co; ++o) {
                double acc = bias;
                for (int tap = 0; tap < k; ++tap) {
                    std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) -
                                         static_cast<std::ptrdiff_t>(tap) * dilation;
                    if (src < 0) continue;
                    const double* kr = kern + (o * k + tap) * ci;
                    for (int c = 0; c < ci; ++c) {
                        acc += kr[c] * x.at(i, static_cast<std::size_t>(src),
                                            static_cast<std::size_t>(c));
                    }
                }
                out.at(i, t, static_cast<std::size_t>(o)) = acc;
            }
        }
    }
}

}  // namespace

ForwardTrace stgnet_forward(const Tensor& x, const StgNetParams& params, ForwardWorkspace* ws) {
    const ModelConfig& cfg = params.config;
    std::size_t n = static_cast<std::size_t>(cfg.nodes);
    std::size_t s = static_cast<std::size_t>(cfg.history);
    std::size_t h = static_cast<std::size_t>(cfg.horizon);
    std::size_t c = static_cast<std::size_t>(cfg.channels);
    std::size_t o = static_cast<std::size_t>(cfg.tcn_hidden);
    std::size_t f = static_cast<std::size_t>(cfg.gcn_out());
    int k = cfg.kernel_len;
    if (x.rank() != 3 || x.dim(0) != n || x.dim(1) != s || x.dim(2) != c) {
        throw ModelError("stgnet_forward: input must be N x S x C");
    }

    ForwardWorkspace local;
    ForwardWorkspace& w = ws ? *ws : local;
    w = ForwardWorkspace{};

    const ParamTensors& p = params.tensors;
    w.row_weights = row_softmax(p.embedding);
    w.adjacency = adaptive_adjacency(p.embedding);

    // TCN residual blocks.
    Tensor cur = x;
    int layer = 0;
    for (std::size_t b = 0; b < cfg.dilations.size(); ++b) {
        int dil = cfg.dilations[b];
        int ci = cfg.conv_in(layer);
        w.block_inputs.push_back(cur);

        Tensor kern1 = materialize_node_params(
            w.row_weights, p.conv_pools[static_cast<std::size_t>(layer)],
            o * static_cast<std::size_t>(k) * static_cast<std::size_t>(ci));
        Tensor pre1({n, s, o});
        node_conv(cur, kern1, k, ci, static_cast<int>(o), dil,
                  p.conv_bias[static_cast<std::size_t>(layer)], pre1);
        w.conv_inputs.push_back(cur);
        w.conv_kernels.push_back(std::move(kern1));
        w.conv_pre.push_back(pre1);
        Tensor h1 = pre1;
        for (std::size_t i = 0; i < h1.size(); ++i) h1[i] = h1[i] > 0 ? h1[i] : 0.0;
        ++layer;

        Tensor kern2 = materialize_node_params(
            w.row_weights, p.conv_pools[static_cast<std::size_t>(layer)],
            o * static_cast<std::size_t>(k) * o);
        Tensor pre2({n, s, o});
        node_conv(h1, kern2, k, static_cast<int>(o), static_cast<int>(o), dil,
                  p.conv_bias[static_cast<std::size_t>(layer)], pre2);
        w.conv_inputs.push_back(std::move(h1));
        w.conv_kernels.push_back(std::move(kern2));
        w.conv_pre.push_back(pre2);
        ++layer;

        // Residual path: identity when widths match, shared 1x1 conv otherwise.
        Tensor block_pre = std::move(pre2);
        if (static_cast<std::size_t>(ci) == o) {
            block_pre += cur;
        } else {
            const Tensor& res = p.residual_weights[b];
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t t = 0; t < s; ++t) {
                    for (std::size_t oo = 0; oo < o; ++oo) {
                        double acc = 0.0;
                        for (int cc = 0; cc < ci; ++cc) {
                            acc += res.at(static_cast<std::size_t>(cc), oo) *
                                   cur.at(i, t, static_cast<std::size_t>(cc));
                        }
                        block_pre.at(i, t, oo) += acc;
                    }
                }
            }
        }
        w.block_pre.push_back(block_pre);
        cur = std::move(block_pre);
        for (std::size_t i = 0; i < cur.size(); ++i) cur[i] = cur[i] > 0 ? cur[i] : 0.0;
    }
    w.tcn_output = cur;

    // Adaptive GCN: aggregate with I + A-bar, then each destination node
    // applies its own O x F transform drawn from the spatial pool.
    w.gcn_weights = materialize_node_params(w.row_weights, p.spatial_pool, o * f);
    Tensor mixed({n, s, o});
    for (std::size_t t = 0; t < s; ++t) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t oo = 0; oo < o; ++oo) {
                double acc = cur.at(i, t, oo);
                for (std::size_t j = 0; j < n; ++j) {
                    acc += w.adjacency.at(i, j) * cur.at(j, t, oo);
                }
                mixed.at(i, t, oo) = acc;
            }
        }
    }
    w.gcn_mixed = mixed;
    Tensor z({n, s, f});
    for (std::size_t i = 0; i < n; ++i) {
        const double* wi = w.gcn_weights.data() + i * (o * f);
        for (std::size_t t = 0; t < s; ++t) {
            for (std::size_t ff = 0; ff < f; ++ff) {
                double acc = p.gcn_bias[ff];
                for (std::size_t oo = 0; oo < o; ++oo) {
                    acc += mixed.at(i, t, oo) * wi[oo * f + ff];
                }
                z.at(i, t, ff) = acc;
            }
        }
    }
    w.gcn_output = z;

    // MFDense prediction: per-node H x S map over the time axis, per channel.
    w.predictor_weights = materialize_node_params(w.row_weights, p.predictor_pool, h * s);
    w.predictor_bias = materialize_node_params(w.row_weights, p.predictor_bias_pool, h);
    Tensor pred({n, h, c});
    for (std::size_t i = 0; i < n; ++i) {
        const double* vi = w.predictor_weights.data() + i * (h * s);
        const double* bi = w.predictor_bias.data() + i * h;
        for (std::size_t hh = 0; hh < h; ++hh) {
            for (std::size_t cc = 0; cc < c; ++cc) {
                double acc = bi[hh];
                for (std::size_t t = 0; t < s; ++t) {
                    acc += vi[hh * s + t] * z.at(i, t, cc);
                }
                pred.at(i, hh, cc) = acc;
            }
        }
    }
    w.prediction = pred;

    ForwardTrace trace;
    trace.tcn_output = w.tcn_output;
    trace.gcn_output = w.gcn_output;
    trace.prediction = std::move(pred);
    trace.adjacency = w.adjacency;
    return trace;
}

}  // namespace nodetrans
