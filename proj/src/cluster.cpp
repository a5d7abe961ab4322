#include "nodetrans/cluster.hpp"

#include <cmath>
#include <limits>

namespace nodetrans {

namespace {

double sq_dist(const double* a, const double* b, std::size_t d) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        double diff = a[k] - b[k];
        acc += diff * diff;
    }
    return acc;
}

int nearest_center(const double* point, const Tensor& centers) {
    std::size_t g = centers.dim(0);
    std::size_t d = centers.dim(1);
    int best = 0;
    double best_d = sq_dist(point, centers.data(), d);
    for (std::size_t c = 1; c < g; ++c) {
        double dist = sq_dist(point, centers.data() + c * d, d);
        if (dist < best_d) {  // strict: ties keep the lowest index
            best_d = dist;
            best = static_cast<int>(c);
        }
    }
    return best;
}

struct LloydResult {
    ClusterState state;
    double sse = std::numeric_limits<double>::infinity();
};

LloydResult lloyd_from(const Tensor& rows, const std::vector<std::size_t>& chosen,
                       int max_iters, std::vector<double>* sse_log);

// Greedy farthest-point init from a seeded random first point.
std::vector<std::size_t> farthest_point_init(const Tensor& rows, std::size_t g, Rng rng) {
    std::size_t n = rows.dim(0);
    std::size_t d = rows.dim(1);
    std::vector<std::size_t> chosen;
    chosen.push_back(rng.index(n));
    std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
    for (std::size_t c = 0; c < g; ++c) {
        if (c > 0) {
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (min_dist[i] > far_d) {
                    far_d = min_dist[i];
                    far = i;
                }
            }
            chosen.push_back(far);
        }
        const double* src = rows.data() + chosen.back() * d;
        for (std::size_t i = 0; i < n; ++i) {
            min_dist[i] = std::min(min_dist[i], sq_dist(rows.data() + i * d, src, d));
        }
    }
    return chosen;
}

// Distinct random points; used by restarts after the first so the restarts
// actually explore different basins (farthest-point init is nearly invariant
// to its random first pick).
std::vector<std::size_t> random_init(const Tensor& rows, std::size_t g, Rng rng) {
    std::size_t n = rows.dim(0);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    return {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(g)};
}

LloydResult lloyd_from(const Tensor& rows, const std::vector<std::size_t>& chosen,
                       int max_iters, std::vector<double>* sse_log) {
    std::size_t n = rows.dim(0);
    std::size_t d = rows.dim(1);
    std::size_t g = chosen.size();

    Tensor centers({g, d});
    for (std::size_t c = 0; c < g; ++c) {
        const double* src = rows.data() + chosen[c] * d;
        for (std::size_t k = 0; k < d; ++k) centers.at(c, k) = src[k];
    }

    std::vector<int> assign(n, -1);
    for (int iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            int z = nearest_center(rows.data() + i * d, centers);
            if (z != assign[i]) {
                assign[i] = z;
                changed = true;
            }
        }
        if (sse_log) {
            ClusterState snap;
            snap.centers = centers;
            snap.assignments = assign;
            sse_log->push_back(within_cluster_sse(rows, snap));
        }
        if (!changed && iter > 0) break;

        Tensor sums({g, d});
        std::vector<std::size_t> counts(g, 0);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t z = static_cast<std::size_t>(assign[i]);
            ++counts[z];
            for (std::size_t k = 0; k < d; ++k) sums.at(z, k) += rows.at(i, k);
        }
        for (std::size_t c = 0; c < g; ++c) {
            if (counts[c] == 0) {
                // Re-seed an empty cluster with the point farthest from its
                // current assignment's center.
                std::size_t far = 0;
                double far_d = -1.0;
                for (std::size_t i = 0; i < n; ++i) {
                    double dist = sq_dist(rows.data() + i * d,
                                          centers.data() + static_cast<std::size_t>(assign[i]) * d, d);
                    if (dist > far_d) {
                        far_d = dist;
                        far = i;
                    }
                }
                for (std::size_t k = 0; k < d; ++k) centers.at(c, k) = rows.at(far, k);
            } else {
                for (std::size_t k = 0; k < d; ++k) {
                    centers.at(c, k) = sums.at(c, k) / static_cast<double>(counts[c]);
                }
            }
        }
        if (!changed) break;
    }
    // Final assignment pass keeps the argmin invariant after the last update.
    for (std::size_t i = 0; i < n; ++i) {
        assign[i] = nearest_center(rows.data() + i * d, centers);
    }

    LloydResult res;
    res.state.centers = std::move(centers);
    res.state.assignments = std::move(assign);
    res.sse = within_cluster_sse(rows, res.state);
    return res;
}

}  // namespace

ClusterState kmeans(const Tensor& rows, int clusters, std::uint64_t seed,
                    int max_iters, int restarts,
                    std::vector<std::vector<double>>* sse_trace) {
    std::size_t n = rows.dim(0);
    if (clusters < 1) throw ClusterError("kmeans: clusters must be >= 1");
    if (n < static_cast<std::size_t>(clusters)) {
        throw ClusterError("kmeans: fewer points (" + std::to_string(n) + ") than clusters (" +
                           std::to_string(clusters) + ")");
    }
    Rng root(seed);
    std::size_t g = static_cast<std::size_t>(clusters);
    LloydResult best;
    auto consider = [&](const std::vector<std::size_t>& init) {
        std::vector<double> log;
        LloydResult cand = lloyd_from(rows, init, max_iters, sse_trace ? &log : nullptr);
        if (sse_trace) sse_trace->push_back(std::move(log));
        if (cand.sse < best.sse) best = std::move(cand);
    };
    for (int r = 0; r < restarts; ++r) {
        Rng rng = root.fork("restart", static_cast<std::uint64_t>(r));
        consider(r == 0 ? farthest_point_init(rows, g, rng) : random_init(rows, g, rng));
    }
    // Tiny two-cluster instances: sweep every pair of points as seeds, which
    // in practice lands Lloyd in the globally optimal basin.
    if (clusters == 2 && n <= 12) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) consider({i, j});
        }
    }
    return best.state;
}

std::vector<int> assign_clusters(const Tensor& embedding, const Tensor& centers) {
    if (embedding.dim(1) != centers.dim(1)) {
        throw ClusterError("assign_clusters: dimension mismatch");
    }
    std::size_t n = embedding.dim(0);
    std::size_t d = embedding.dim(1);
    std::vector<int> z(n);
    for (std::size_t i = 0; i < n; ++i) {
        z[i] = nearest_center(embedding.data() + i * d, centers);
    }
    return z;
}

double cluster_regularizer(const Tensor& embedding, const ClusterState& state) {
    std::size_t n = embedding.dim(0);
    std::size_t d = embedding.dim(1);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t z = static_cast<std::size_t>(state.assignments[i]);
        acc += sq_dist(embedding.data() + i * d, state.centers.data() + z * d, d);
    }
    return acc / (static_cast<double>(n) * static_cast<double>(d));
}

void cluster_regularizer_grad(const Tensor& embedding, const ClusterState& state,
                              double scale, Tensor& d_embedding) {
    std::size_t n = embedding.dim(0);
    std::size_t d = embedding.dim(1);
    double coeff = scale * 2.0 / (static_cast<double>(n) * static_cast<double>(d));
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t z = static_cast<std::size_t>(state.assignments[i]);
        for (std::size_t k = 0; k < d; ++k) {
            d_embedding.at(i, k) += coeff * (embedding.at(i, k) - state.centers.at(z, k));
        }
    }
}

void ema_update_centers(ClusterState& state, const Tensor& embedding) {
    std::size_t g = state.centers.dim(0);
    std::size_t d = state.centers.dim(1);
    std::size_t n = embedding.dim(0);
    Tensor sums({g, d});
    std::vector<std::size_t> counts(g, 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t z = static_cast<std::size_t>(state.assignments[i]);
        ++counts[z];
        for (std::size_t k = 0; k < d; ++k) sums.at(z, k) += embedding.at(i, k);
    }
    for (std::size_t c = 0; c < g; ++c) {
        if (counts[c] == 0) continue;  // empty clusters keep their centers
        for (std::size_t k = 0; k < d; ++k) {
            double mu_hat = sums.at(c, k) / static_cast<double>(counts[c]);
            state.centers.at(c, k) = state.beta * mu_hat + (1.0 - state.beta) * state.centers.at(c, k);
        }
    }
}

double within_cluster_sse(const Tensor& rows, const ClusterState& state) {
    std::size_t n = rows.dim(0);
    std::size_t d = rows.dim(1);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t z = static_cast<std::size_t>(state.assignments[i]);
        acc += sq_dist(rows.data() + i * d, state.centers.data() + z * d, d);
    }
    return acc;
}

}  // namespace nodetrans
