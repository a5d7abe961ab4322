#pragma once

#include <cstdint>
#include <string>

#include "nodetrans/model.hpp"

namespace nodetrans {

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    std::string worst_tensor;
};

// Central finite differences against the analytic reverse-mode gradients on a
// random batch, including the clustering-regularizer path when alpha > 0.
// Cluster assignments are held fixed, matching the per-step contract.
GradCheckResult gradient_check(const ModelConfig& config, std::uint64_t seed,
                               int batch_size = 3, double step = 1e-5,
                               int min_samples = 200);

}  // namespace nodetrans
