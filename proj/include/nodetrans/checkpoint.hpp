#pragma once

#include <cstdint>
#include <string>

#include "nodetrans/cluster.hpp"
#include "nodetrans/model.hpp"

namespace nodetrans {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Provenance {
    std::uint64_t seed = 0;
    int epoch = 0;
    std::string domain;            // "source", "target", ...
    std::string data_fingerprint;
};

// Parameters partitioned into transferable (node-count independent) and
// node-bound sets; the embedding is the only node-bound tensor.
struct Checkpoint {
    ModelConfig config;
    ParamTensors tensors;
    ClusterState cluster;  // empty centers when no clustering was run
    Provenance provenance;

    bool has_cluster() const { return !cluster.centers.empty(); }
};

void save_checkpoint(const Checkpoint& cp, const std::string& dir);

// Full load; every tensor in the manifest must be present and hash-clean.
Checkpoint load_checkpoint(const std::string& dir);

// Loads only the node-count-independent tensors (plus cluster centers).
// Never touches node-bound files; the embedding comes back empty.
Checkpoint load_transferable(const std::string& dir);

// JSON round trip for ModelConfig (shared by checkpoints and the CLI).
std::string config_to_json_string(const ModelConfig& config);
ModelConfig config_from_json_string(const std::string& json_text);

}  // namespace nodetrans
