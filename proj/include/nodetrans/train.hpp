#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nodetrans/checkpoint.hpp"
#include "nodetrans/data.hpp"
#include "nodetrans/metrics.hpp"
#include "nodetrans/model.hpp"

namespace nodetrans {

class TrainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainOptions {
    double learning_rate = 0.003;
    double decay_factor = 0.3;
    int decay_every = 50;       // epochs; 100 for fine-tuning by default
    int batch_size = 64;
    int max_epochs = 200;
    int patience = 20;          // early stop on validation RMSE
};

struct EpochRow {
    int epoch = 0;
    double train_loss = 0.0;
    double val_rmse = 0.0;
    double val_mae = 0.0;
    double val_mape = 0.0;
    double lr = 0.0;
    double seconds = 0.0;
};

struct TrainReport {
    std::vector<EpochRow> rows;
    int best_epoch = -1;
    bool diverged = false;
};

struct TrainResult {
    Checkpoint checkpoint;
    TrainReport report;
    NormStats stats;
    SplitRanges split;
};

// Pre-training on a source domain: z-score fit on the training range,
// best-validation-RMSE parameters kept, K-means on the final embedding
// stored as the checkpoint's cluster state.
TrainResult pretrain(const ModelConfig& config, const RoadNetworkDataset& dataset,
                     const SplitRanges& split, const TrainOptions& options,
                     std::uint64_t seed);

// Transfers the node-count-independent tensors, reseeds the embedding, and
// copies the source cluster centers with fresh assignments.
StgNetParams build_target_params(const Checkpoint& source, int target_nodes,
                                 std::uint64_t seed, ClusterState* cluster_out);

// Fine-tune on a (scarce) target domain. Each step recomputes assignments,
// takes an Adam step on L_p + alpha * R (centers constant), then EMA-updates
// the centers. alpha = 0 disables the regularizer path entirely.
TrainResult finetune(const RoadNetworkDataset& target, const Checkpoint& source,
                     const ModelConfig& config, const SplitRanges& split,
                     const TrainOptions& options, std::uint64_t seed);

// Same budget and loop as finetune but from seeded random initialization and
// with no transferred knowledge; the from-scratch comparison arm.
TrainResult train_scratch(const RoadNetworkDataset& target, const ModelConfig& config,
                          const SplitRanges& split, const TrainOptions& options,
                          std::uint64_t seed);

void write_train_report_csv(const TrainReport& report, const std::string& path);

// Validation RMSE in original units for a parameter set.
MetricsReport evaluate_params(const StgNetParams& params,
                              const std::vector<WindowedSample>& windows,
                              const NormStats& stats);

}  // namespace nodetrans
