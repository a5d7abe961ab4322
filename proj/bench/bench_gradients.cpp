// Times per-sample batch-gradient computation: serial reference vs the
// OpenMP-parallel path at several thread counts, verifying bit-identical
// results along the way.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "nodetrans/grad.hpp"

using namespace nodetrans;
using Clock = std::chrono::steady_clock;

namespace {

std::vector<WindowedSample> make_batch(const ModelConfig& cfg, int count, Rng rng) {
    std::vector<WindowedSample> out;
    std::size_t n = static_cast<std::size_t>(cfg.nodes);
    std::size_t s = static_cast<std::size_t>(cfg.history);
    std::size_t h = static_cast<std::size_t>(cfg.horizon);
    std::size_t c = static_cast<std::size_t>(cfg.channels);
    for (int b = 0; b < count; ++b) {
        WindowedSample w;
        w.input = Tensor({s, n, c});
        w.target = Tensor({h, n, c});
        for (double& v : w.input.vec()) v = rng.uniform(-1.5, 1.5);
        for (double& v : w.target.vec()) v = rng.uniform(-1.5, 1.5);
        out.push_back(std::move(w));
    }
    return out;
}

double time_best_of(int reps, const std::function<void()>& fn) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        auto t0 = Clock::now();
        fn();
        double s = std::chrono::duration<double>(Clock::now() - t0).count();
        if (s < best) best = s;
    }
    return best;
}

bool identical(const ParamTensors& a, const ParamTensors& b) {
    bool same = true;
    std::vector<const Tensor*> at, bt;
    a.for_each([&](const std::string&, const Tensor& t) { at.push_back(&t); });
    b.for_each([&](const std::string&, const Tensor& t) { bt.push_back(&t); });
    for (std::size_t i = 0; i < at.size(); ++i) {
        for (std::size_t j = 0; j < at[i]->size(); ++j) {
            if ((*at[i])[j] != (*bt[i])[j]) same = false;
        }
    }
    return same;
}

}  // namespace

int main(int argc, char** argv) {
    int batch = argc > 1 ? std::atoi(argv[1]) : 64;
    int reps = argc > 2 ? std::atoi(argv[2]) : 3;

    ModelConfig cfg;
    cfg.nodes = 40;
    cfg.history = 12;
    cfg.horizon = 12;
    cfg.channels = 1;
    cfg.embed_dim = 10;
    cfg.tcn_hidden = 16;
    cfg.clusters = 5;
    cfg.alpha = 0.0;

    Rng rng(123);
    StgNetParams params = init_params(cfg, rng.fork("params"));
    std::vector<WindowedSample> samples = make_batch(cfg, batch, rng.fork("data"));
    std::vector<const WindowedSample*> ptrs;
    for (const WindowedSample& w : samples) ptrs.push_back(&w);

    std::printf("batch=%d nodes=%d hidden=%d reps=%d (best-of timing)\n", batch, cfg.nodes,
                cfg.tcn_hidden, reps);

    BatchGradients ref;
    double serial = time_best_of(reps, [&] { ref = compute_batch_gradients_serial(params, ptrs); });
    std::printf("%-22s %8.1f ms   %6.2fx\n", "serial reference", serial * 1e3, 1.0);

    for (int threads : {1, 2, 4, 8}) {
        setenv("NODETRANS_THREADS", std::to_string(threads).c_str(), 1);
        BatchGradients par;
        double t = time_best_of(reps, [&] { par = compute_batch_gradients(params, ptrs); });
        bool same = par.loss == ref.loss && identical(par.grads, ref.grads);
        std::printf("parallel, %2d thread%s   %8.1f ms   %6.2fx   %s\n", threads,
                    threads == 1 ? " " : "s", t * 1e3, serial / t,
                    same ? "bit-identical" : "MISMATCH");
        if (!same) {
            unsetenv("NODETRANS_THREADS");
            return 1;
        }
    }
    unsetenv("NODETRANS_THREADS");
    return 0;
}
