#pragma once

#include <string>
#include <vector>

#include "nodetrans/checkpoint.hpp"
#include "nodetrans/data.hpp"

namespace nodetrans {

struct MetricValue {
    double rmse = 0.0;
    double mae = 0.0;
    double mape = 0.0;      // percent, valid only when mape_defined
    bool mape_defined = false;
};

struct MetricsReport {
    MetricValue aggregate;
    std::vector<MetricValue> per_horizon;  // one entry per horizon step
    double masked_fraction = 0.0;          // |truth| <= mask threshold
    std::size_t sample_count = 0;          // total compared entries
};

// Streams (pred, truth) pairs in original units; per-horizon slices use the
// middle axis of rank-3 N x H x C tensors.
class MetricsAccumulator {
public:
    void add(const Tensor& pred, const Tensor& truth);
    MetricsReport finalize() const;

    static constexpr double kMapeMaskThreshold = 1e-6;

private:
    struct Cell {
        double sq_sum = 0.0;
        double abs_sum = 0.0;
        double ape_sum = 0.0;
        std::size_t count = 0;
        std::size_t unmasked = 0;
    };
    Cell total_;
    std::vector<Cell> horizon_;
};

MetricsReport compute_metrics(const Tensor& pred, const Tensor& truth);

MetricsReport evaluate_checkpoint(const Checkpoint& checkpoint,
                                  const RoadNetworkDataset& dataset,
                                  IndexRange test_range, const NormStats& stats);

// Per-node time-of-day slot means from the training range; slots never seen
// in training fall back to the node's global mean.
MetricsReport historical_average_baseline(const RoadNetworkDataset& dataset,
                                          const SplitRanges& split, int history,
                                          int horizon);

void write_metrics_csv(const MetricsReport& report, const std::string& path);
std::string metrics_to_json_string(const MetricsReport& report);

}  // namespace nodetrans
