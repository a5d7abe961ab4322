#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nodetrans/rng.hpp"
#include "nodetrans/tensor.hpp"

namespace nodetrans {

struct Edge {
    int src = 0;
    int dst = 0;
    double weight = 1.0;
};

// Graph plus a T x N x C signal tensor in original units.
struct RoadNetworkDataset {
    int node_count = 0;
    std::vector<Edge> edges;
    Tensor signals;  // T x N x C
    int interval_minutes = 5;
    int feature_count = 1;
    std::string units = "flow";

    std::size_t steps() const { return signals.empty() ? 0 : signals.dim(0); }
    int steps_per_day() const { return 1440 / interval_minutes; }
};

struct NormStats {
    std::vector<double> mean;  // per channel
    std::vector<double> std;   // per channel, strictly positive
};

struct WindowedSample {
    Tensor input;   // S x N x C
    Tensor target;  // H x N x C
    std::size_t origin_index = 0;  // index of the first input step
};

struct IndexRange {
    std::size_t begin = 0;  // inclusive
    std::size_t end = 0;    // exclusive
    std::size_t length() const { return end - begin; }
};

struct SplitRanges {
    IndexRange train, val, test;
};

struct Motif {
    double base = 0.0;
    // Sinusoid terms: value += amplitude * sin(2*pi*cycles_per_day*t_days + phase)
    struct Term {
        double amplitude = 0.0;
        double cycles_per_day = 1.0;
        double phase = 0.0;
    };
    std::vector<Term> terms;

    double eval(double t_days) const;
};

struct SyntheticSpec {
    int node_count = 8;
    int pattern_count = 2;           // ground-truth G
    std::vector<Motif> motifs;       // one per pattern; auto-generated when empty
    double noise_std = 0.0;
    int days = 2;
    int interval_minutes = 30;
    double coupling = 0.1;           // cross-pattern edge probability
};

struct SyntheticDataset {
    RoadNetworkDataset dataset;
    std::vector<int> labels;  // ground-truth pattern per node, oracle use only
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

RoadNetworkDataset load_dataset(const std::string& signals_path,
                                const std::string& edges_path,
                                const std::string& meta_path);
void save_dataset(const RoadNetworkDataset& ds,
                  const std::string& signals_path,
                  const std::string& edges_path,
                  const std::string& meta_path);

NormStats fit_normalizer(const Tensor& signals, IndexRange train_range);
Tensor apply_normalizer(const Tensor& signals, const NormStats& stats);
Tensor invert_normalizer(const Tensor& normalized, const NormStats& stats);

// All windows of a contiguous range, stride 1, chronological.
std::vector<WindowedSample> make_windows(const Tensor& signals, IndexRange range,
                                         int history, int horizon);
std::vector<WindowedSample> make_windows(const RoadNetworkDataset& ds,
                                         int history, int horizon);

SplitRanges split_source(std::size_t steps, double train_ratio, double val_ratio,
                         double test_ratio);
SplitRanges split_target(const RoadNetworkDataset& ds, int train_days, int val_days,
                         double test_fraction);

std::vector<Motif> default_motifs(int pattern_count, Rng rng);
SyntheticDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

std::string dataset_fingerprint(const RoadNetworkDataset& ds);

}  // namespace nodetrans
