#include "nodetrans/train.hpp"

#include <chrono>
#include <limits>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "nodetrans/grad.hpp"
#include "nodetrans/optim.hpp"

namespace nodetrans {

namespace {

using Clock = std::chrono::steady_clock;

MetricsReport eval_windows(const StgNetParams& params,
                           const std::vector<WindowedSample>& windows,
                           const NormStats& stats) {
    MetricsAccumulator acc;
    for (const WindowedSample& w : windows) {
        Tensor x = window_to_model_input(w.input);
        ForwardTrace trace = stgnet_forward(x, params);
        Tensor pred = invert_normalizer(trace.prediction, stats);
        Tensor truth = invert_normalizer(window_to_model_target(w.target), stats);
        acc.add(pred, truth);
    }
    return acc.finalize();
}

struct LoopResult {
    StgNetParams best_params;
    ClusterState cluster;  // final state (centers drift under EMA)
    TrainReport report;
    int best_epoch = -1;
};

// Shared epoch loop for pre-training, fine-tuning, and the scratch arm.
// `cluster` may be null; when present, every step recomputes assignments,
// differentiates L_p + alpha * R with centers constant, then EMA-updates them.
LoopResult run_training_loop(StgNetParams params, ClusterState* cluster, double alpha,
                             const std::vector<WindowedSample>& train_windows,
                             const std::vector<WindowedSample>& val_windows,
                             const NormStats& stats, const TrainOptions& options,
                             Rng rng) {
    if (train_windows.empty()) throw TrainError("no training windows");
    if (val_windows.empty()) throw TrainError("no validation windows");

    OptimizerState opt = make_optimizer(params.config, options.learning_rate,
                                        options.decay_factor, options.decay_every);
    LoopResult res;
    res.best_params = params;
    double best_rmse = std::numeric_limits<double>::infinity();
    int since_best = 0;

    std::vector<std::size_t> order(train_windows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < options.max_epochs; ++epoch) {
        auto t0 = Clock::now();
        double lr = learning_rate_for_epoch(opt, epoch);
        Rng shuffle_rng = rng.fork("shuffle", static_cast<std::uint64_t>(epoch));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        std::size_t batch_size = static_cast<std::size_t>(options.batch_size);
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            std::size_t end = std::min(order.size(), start + batch_size);
            std::vector<const WindowedSample*> batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) batch.push_back(&train_windows[order[i]]);

            RegularizerTerm reg;
            if (cluster) {
                cluster->assignments =
                    assign_clusters(params.tensors.embedding, cluster->centers);
                reg.state = cluster;
                reg.alpha = alpha;
            }
            BatchGradients bg;
            try {
                bg = compute_batch_gradients(params, batch, reg);
            } catch (const ModelError&) {
                res.report.diverged = true;
                res.report.best_epoch = res.best_epoch;
                return res;
            }
            adam_step(opt, params.tensors, bg.grads, lr);
            if (cluster) ema_update_centers(*cluster, params.tensors.embedding);
            loss_sum += bg.loss;
            ++batches;
        }

        MetricsReport val = eval_windows(params, val_windows, stats);
        double seconds = std::chrono::duration<double>(Clock::now() - t0).count();
        EpochRow row;
        row.epoch = epoch;
        row.train_loss = loss_sum / static_cast<double>(batches);
        row.val_rmse = val.aggregate.rmse;
        row.val_mae = val.aggregate.mae;
        row.val_mape = val.aggregate.mape_defined ? val.aggregate.mape : 0.0;
        row.lr = lr;
        row.seconds = seconds;
        res.report.rows.push_back(row);

        if (!std::isfinite(row.train_loss) || !std::isfinite(row.val_rmse)) {
            res.report.diverged = true;
            break;
        }
        if (row.val_rmse < best_rmse) {
            best_rmse = row.val_rmse;
            res.best_params = params;
            res.best_epoch = epoch;
            if (cluster) res.cluster = *cluster;
            since_best = 0;
        } else if (++since_best >= options.patience) {
            break;
        }
    }
    if (cluster && res.best_epoch < 0) res.cluster = *cluster;
    res.report.best_epoch = res.best_epoch;
    return res;
}

}  // namespace

MetricsReport evaluate_params(const StgNetParams& params,
                              const std::vector<WindowedSample>& windows,
                              const NormStats& stats) {
    return eval_windows(params, windows, stats);
}

TrainResult pretrain(const ModelConfig& config, const RoadNetworkDataset& dataset,
                     const SplitRanges& split, const TrainOptions& options,
                     std::uint64_t seed) {
    ModelConfig cfg = config;
    cfg.nodes = dataset.node_count;
    cfg.channels = dataset.feature_count;
    cfg.validate();

    NormStats stats = fit_normalizer(dataset.signals, split.train);
    Tensor normalized = apply_normalizer(dataset.signals, stats);
    auto train_w = make_windows(normalized, split.train, cfg.history, cfg.horizon);
    auto val_w = make_windows(normalized, split.val, cfg.history, cfg.horizon);

    Rng rng(seed);
    StgNetParams params = init_params(cfg, rng.fork("init"));
    LoopResult loop = run_training_loop(std::move(params), nullptr, 0.0, train_w, val_w,
                                        stats, options, rng.fork("loop"));

    TrainResult out;
    out.report = loop.report;
    out.stats = stats;
    out.split = split;
    out.checkpoint.config = cfg;
    out.checkpoint.tensors = loop.best_params.tensors;
    // Pattern distillation: cluster the final source embedding once.
    ClusterState cluster = kmeans(loop.best_params.tensors.embedding, cfg.clusters,
                                  rng.fork("kmeans").next_u64());
    cluster.beta = cfg.beta;
    out.checkpoint.cluster = std::move(cluster);
    out.checkpoint.provenance = {seed, loop.best_epoch, "source",
                                 dataset_fingerprint(dataset)};
    return out;
}

StgNetParams build_target_params(const Checkpoint& source, int target_nodes,
                                 std::uint64_t seed, ClusterState* cluster_out) {
    if (!source.has_cluster()) {
        throw TrainError("build_target_params: source checkpoint has no cluster state");
    }
    ModelConfig cfg = source.config;
    cfg.nodes = target_nodes;

    StgNetParams params;
    params.config = cfg;
    params.tensors = make_param_tensors(cfg);

    // Fresh node embedding; everything else copied bit-exactly.
    Rng rng(seed);
    StgNetParams seeded = init_params(cfg, rng.fork("target-init"));
    params.tensors.embedding = seeded.tensors.embedding;
    params.tensors.conv_pools = source.tensors.conv_pools;
    params.tensors.conv_bias = source.tensors.conv_bias;
    params.tensors.residual_weights = source.tensors.residual_weights;
    params.tensors.spatial_pool = source.tensors.spatial_pool;
    params.tensors.gcn_bias = source.tensors.gcn_bias;
    params.tensors.predictor_pool = source.tensors.predictor_pool;
    params.tensors.predictor_bias_pool = source.tensors.predictor_bias_pool;

    if (cluster_out) {
        cluster_out->centers = source.cluster.centers;
        cluster_out->beta = source.cluster.beta;
        cluster_out->assignments =
            assign_clusters(params.tensors.embedding, cluster_out->centers);
    }
    return params;
}

TrainResult finetune(const RoadNetworkDataset& target, const Checkpoint& source,
                     const ModelConfig& config, const SplitRanges& split,
                     const TrainOptions& options, std::uint64_t seed) {
    std::vector<std::string> diffs;
    if (!config.same_except_nodes(source.config, &diffs)) {
        std::string msg = "finetune: target config differs from source beyond node count:";
        for (const std::string& d : diffs) msg += " " + d;
        throw TrainError(msg);
    }
    ModelConfig cfg = config;
    cfg.nodes = target.node_count;
    cfg.channels = target.feature_count;
    cfg.validate();

    // The target fits its own stats on its scarce training window.
    NormStats stats = fit_normalizer(target.signals, split.train);
    Tensor normalized = apply_normalizer(target.signals, stats);
    auto train_w = make_windows(normalized, split.train, cfg.history, cfg.horizon);
    auto val_w = make_windows(normalized, split.val, cfg.history, cfg.horizon);

    Rng rng(seed);
    ClusterState cluster;
    StgNetParams params = build_target_params(source, target.node_count,
                                              rng.fork("build").next_u64(), &cluster);
    params.config = cfg;
    LoopResult loop = run_training_loop(std::move(params), &cluster, cfg.alpha, train_w,
                                        val_w, stats, options, rng.fork("loop"));

    TrainResult out;
    out.report = loop.report;
    out.stats = stats;
    out.split = split;
    out.checkpoint.config = cfg;
    out.checkpoint.tensors = loop.best_params.tensors;
    out.checkpoint.cluster = loop.cluster;
    out.checkpoint.provenance = {seed, loop.best_epoch, "target",
                                 dataset_fingerprint(target)};
    return out;
}

TrainResult train_scratch(const RoadNetworkDataset& target, const ModelConfig& config,
                          const SplitRanges& split, const TrainOptions& options,
                          std::uint64_t seed) {
    ModelConfig cfg = config;
    cfg.nodes = target.node_count;
    cfg.channels = target.feature_count;
    cfg.validate();

    NormStats stats = fit_normalizer(target.signals, split.train);
    Tensor normalized = apply_normalizer(target.signals, stats);
    auto train_w = make_windows(normalized, split.train, cfg.history, cfg.horizon);
    auto val_w = make_windows(normalized, split.val, cfg.history, cfg.horizon);

    Rng rng(seed);
    StgNetParams params = init_params(cfg, rng.fork("init"));
    LoopResult loop = run_training_loop(std::move(params), nullptr, 0.0, train_w, val_w,
                                        stats, options, rng.fork("loop"));

    TrainResult out;
    out.report = loop.report;
    out.stats = stats;
    out.split = split;
    out.checkpoint.config = cfg;
    out.checkpoint.tensors = loop.best_params.tensors;
    out.checkpoint.provenance = {seed, loop.best_epoch, "target-scratch",
                                 dataset_fingerprint(target)};
    return out;
}

void write_train_report_csv(const TrainReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw TrainError("cannot write " + path);
    out << "epoch,train_loss,val_rmse,val_mae,val_mape,lr,seconds\n";
    char buf[200];
    for (const EpochRow& r : report.rows) {
        std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%.12g,%.12g,%.12g,%.4f\n", r.epoch,
                      r.train_loss, r.val_rmse, r.val_mae, r.val_mape, r.lr, r.seconds);
        out << buf;
    }
}

}  // namespace nodetrans
