#include "nodetrans/gradcheck.hpp"

#include <cmath>

#include "nodetrans/cluster.hpp"
#include "nodetrans/grad.hpp"

namespace nodetrans {

GradCheckResult gradient_check(const ModelConfig& config, std::uint64_t seed,
                               int batch_size, double step, int min_samples) {
    ModelConfig cfg = config;
    cfg.validate();
    Rng rng(seed);

    StgNetParams params = init_params(cfg, rng.fork("params"));

    // Freshly initialised biases are zero, so a post-ReLU zero region feeding a
    // later conv layer can leave pre-activations sitting exactly on the ReLU
    // kink, where central differences see a one-sided slope the subgradient
    // does not.  Nudge the biases off zero so the check probes a point where
    // the loss is differentiable.
    Rng bias_rng = rng.fork("bias-nudge");
    for (double& v : params.tensors.conv_bias.vec()) v = bias_rng.uniform(0.05, 0.15);

    // Random windows; entries well away from zero to stay off ReLU kinks.
    std::vector<WindowedSample> samples;
    Rng data_rng = rng.fork("data");
    std::size_t n = static_cast<std::size_t>(cfg.nodes);
    std::size_t s = static_cast<std::size_t>(cfg.history);
    std::size_t h = static_cast<std::size_t>(cfg.horizon);
    std::size_t c = static_cast<std::size_t>(cfg.channels);
    for (int b = 0; b < batch_size; ++b) {
        WindowedSample w;
        w.input = Tensor({s, n, c});
        w.target = Tensor({h, n, c});
        for (std::size_t i = 0; i < w.input.size(); ++i) w.input[i] = data_rng.uniform(-1.5, 1.5);
        for (std::size_t i = 0; i < w.target.size(); ++i) w.target[i] = data_rng.uniform(-1.5, 1.5);
        samples.push_back(std::move(w));
    }
    std::vector<const WindowedSample*> batch;
    for (const WindowedSample& w : samples) batch.push_back(&w);

    ClusterState cluster;
    RegularizerTerm reg;
    if (cfg.alpha > 0.0) {
        Rng center_rng = rng.fork("centers");
        cluster.centers = Tensor({static_cast<std::size_t>(cfg.clusters),
                                  static_cast<std::size_t>(cfg.embed_dim)});
        for (std::size_t i = 0; i < cluster.centers.size(); ++i) {
            cluster.centers[i] = center_rng.uniform(-0.5, 0.5);
        }
        cluster.assignments = assign_clusters(params.tensors.embedding, cluster.centers);
        cluster.beta = cfg.beta;
        reg.state = &cluster;
        reg.alpha = cfg.alpha;
    }

    BatchGradients analytic = compute_batch_gradients_serial(params, batch, reg);

    auto loss_at = [&]() {
        double acc = 0.0;
        for (const WindowedSample* w : batch) {
            Tensor x = window_to_model_input(w->input);
            Tensor y = window_to_model_target(w->target);
            ForwardTrace trace = stgnet_forward(x, params);
            acc += prediction_loss(trace.prediction, y);
        }
        acc /= static_cast<double>(batch.size());
        if (reg.state) acc += reg.alpha * cluster_regularizer(params.tensors.embedding, *reg.state);
        return acc;
    };

    // Collect parameter/gradient tensor pairs in the shared iteration order.
    std::vector<std::pair<std::string, Tensor*>> ptensors;
    std::vector<const Tensor*> gtensors;
    params.tensors.for_each([&](const std::string& name, Tensor& t) {
        ptensors.emplace_back(name, &t);
    });
    analytic.grads.for_each([&](const std::string&, const Tensor& t) {
        gtensors.push_back(&t);
    });

    GradCheckResult res;
    Rng pick = rng.fork("pick");
    int per_tensor = static_cast<int>(
        (static_cast<std::size_t>(min_samples) + ptensors.size() - 1) / ptensors.size()) + 8;
    for (std::size_t ti = 0; ti < ptensors.size(); ++ti) {
        Tensor& t = *ptensors[ti].second;
        const Tensor& g = *gtensors[ti];
        std::size_t count = std::min<std::size_t>(t.size(), static_cast<std::size_t>(per_tensor));
        for (std::size_t k = 0; k < count; ++k) {
            std::size_t idx = t.size() <= count ? k : pick.index(t.size());
            double saved = t[idx];
            t[idx] = saved + step;
            double lp = loss_at();
            t[idx] = saved - step;
            double lm = loss_at();
            t[idx] = saved;
            double fd = (lp - lm) / (2.0 * step);
            double rel = std::abs(g[idx] - fd) / std::max(1e-8, std::abs(fd));
            ++res.checked;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_tensor = ptensors[ti].first;
            }
        }
    }
    return res;
}

}  // namespace nodetrans
