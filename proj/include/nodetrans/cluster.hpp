#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "nodetrans/rng.hpp"
#include "nodetrans/tensor.hpp"

namespace nodetrans {

class ClusterError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ClusterState {
    Tensor centers;            // G x d
    std::vector<int> assignments;  // one per node, in [0, G)
    double beta = 0.2;         // EMA smoothing weight

    int cluster_count() const { return centers.empty() ? 0 : static_cast<int>(centers.dim(0)); }
};

// Lloyd's algorithm with seeded greedy farthest-point initialization.
// Deterministic for a fixed seed; ties break toward the lowest center index;
// empty clusters are re-seeded with the globally farthest point. Runs a few
// deterministic restarts and keeps the lowest-SSE solution.
// `sse_trace`, when given, receives the per-iteration SSE of every restart.
ClusterState kmeans(const Tensor& rows, int clusters, std::uint64_t seed,
                    int max_iters = 300, int restarts = 8,
                    std::vector<std::vector<double>>* sse_trace = nullptr);

std::vector<int> assign_clusters(const Tensor& embedding, const Tensor& centers);

// R(E', mu) = (1 / (N' d)) * sum_i ||e'_i - mu_{z_i}||^2
double cluster_regularizer(const Tensor& embedding, const ClusterState& state);

// dR/de'_i = 2 (e'_i - mu_{z_i}) / (N' d), centers held constant; scaled by
// `scale` and accumulated into d_embedding.
void cluster_regularizer_grad(const Tensor& embedding, const ClusterState& state,
                              double scale, Tensor& d_embedding);

// mu^t = beta * mu_hat + (1 - beta) * mu^{t-1}; clusters with no members keep
// their previous centers.
void ema_update_centers(ClusterState& state, const Tensor& embedding);

double within_cluster_sse(const Tensor& rows, const ClusterState& state);

}  // namespace nodetrans
