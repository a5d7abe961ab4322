#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nodetrans/data.hpp"
#include "nodetrans/model.hpp"
#include "nodetrans/train.hpp"

namespace nodetrans {

class HarnessError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr const char* kVersionString = "nodetrans-0.1.0";

// Either a triplet of on-disk files or a synthetic generator spec.
struct DatasetSource {
    std::string signals, edges, meta;  // file mode when `signals` is non-empty
    bool synthetic = false;
    SyntheticSpec spec;

    bool configured() const { return synthetic || !signals.empty(); }
};

struct SplitSettings {
    // Chronological ratio split (pretrain / evaluate on a source-style set).
    double train_ratio = 0.7;
    double val_ratio = 0.1;
    double test_ratio = 0.2;
    // Scarce-target split (finetune / scratch).
    int train_days = 1;
    int val_days = 1;
    double test_fraction = 0.2;
    bool use_days = false;  // evaluate mode: pick the day-based split instead
};

struct ExperimentConfig {
    std::string mode;
    std::string out_dir = "out";
    std::vector<std::uint64_t> seeds = {1};
    ModelConfig model;        // `nodes` is resolved from the dataset at run time
    TrainOptions train;       // epoch budget defaults depend on the mode
    SplitSettings split;
    DatasetSource source;     // pretrain / synth / evaluate / cluster-report data
    DatasetSource target;     // finetune / scratch data
    std::string checkpoint;   // input checkpoint directory
};

// Parses a config JSON object for `mode`, applying the documented defaults
// (embed dim 10, 5 clusters, alpha 1.0, beta 0.2, batch 64, lr 0.003, decay
// 0.3 every 50/100 epochs, 200/400 epoch budgets, kernel 3, dilations [1,2],
// horizon 12) and rejecting unknown keys or mode/path contradictions.
ExperimentConfig parse_experiment_config(const std::string& mode, const nlohmann::json& j);

// Sets a dotted-path key ("model.embed_dim") in a config JSON object. The
// value text is parsed as JSON when possible and kept as a string otherwise.
void apply_config_override(nlohmann::json& j, const std::string& dotted_key,
                           const std::string& value_text);

nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);

// Runs one experiment: dispatches on cfg.mode, writes all artifacts plus a
// run_manifest.json listing every output file with its sha256. Returns the
// process exit status (0 on success). Errors are reported on stderr and
// flagged in the manifest.
int run_experiment(const ExperimentConfig& cfg);

// Loads the configured dataset, generating and materializing the synthetic
// spec when requested. `synth_rng` seeds the generator deterministically.
SyntheticDataset resolve_dataset(const DatasetSource& src, Rng synth_rng);

// Cluster membership, sizes, and per-cluster time-of-day profiles from the
// checkpoint's cluster state and the training range of `dataset`.
void write_cluster_report(const Checkpoint& checkpoint, const RoadNetworkDataset& dataset,
                          IndexRange train_range, const std::string& dir);

}  // namespace nodetrans
