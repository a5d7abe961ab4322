#include <doctest.h>

#include <cmath>
#include <cstdlib>

#include "nodetrans/grad.hpp"
#include "nodetrans/gradcheck.hpp"

using namespace nodetrans;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.nodes = 5;
    cfg.history = 8;
    cfg.horizon = 3;
    cfg.channels = 1;
    cfg.embed_dim = 4;
    cfg.tcn_hidden = 6;
    cfg.kernel_len = 3;
    cfg.dilations = {1, 2};
    cfg.clusters = 2;
    cfg.alpha = 1.0;
    return cfg;
}

std::vector<WindowedSample> random_batch(const ModelConfig& cfg, int count,
                                         std::uint64_t seed) {
    Rng rng(seed);
    std::vector<WindowedSample> out;
    std::size_t n = static_cast<std::size_t>(cfg.nodes);
    std::size_t s = static_cast<std::size_t>(cfg.history);
    std::size_t h = static_cast<std::size_t>(cfg.horizon);
    std::size_t c = static_cast<std::size_t>(cfg.channels);
    for (int b = 0; b < count; ++b) {
        WindowedSample w;
        w.input = Tensor({s, n, c});
        w.target = Tensor({h, n, c});
        for (std::size_t i = 0; i < w.input.size(); ++i) w.input[i] = rng.uniform(-1.0, 1.0);
        for (std::size_t i = 0; i < w.target.size(); ++i) w.target[i] = rng.uniform(-1.0, 1.0);
        out.push_back(std::move(w));
    }
    return out;
}

}  // namespace

TEST_CASE("prediction loss basics") {
    Tensor a({1, 1, 1});
    Tensor b({1, 1, 1});
    a[0] = 3.0;
    b[0] = 1.0;
    CHECK(prediction_loss(a, a) == 0.0);
    CHECK(prediction_loss(a, b) == doctest::Approx(4.0));

    Tensor p({2, 2, 1});
    Tensor t({2, 2, 1});
    for (std::size_t i = 0; i < 4; ++i) p[i] = t[i] + 1.0;
    CHECK(prediction_loss(p, t) == doctest::Approx(1.0));
}

TEST_CASE("analytic gradients match finite differences, regularized path") {
    GradCheckResult res = gradient_check(tiny_config(), 42);
    CHECK(res.checked >= 200);
    CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("analytic gradients match finite differences without regularizer") {
    ModelConfig cfg = tiny_config();
    cfg.alpha = 0.0;
    GradCheckResult res = gradient_check(cfg, 7);
    CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("zero-residual batch has zero prediction-loss gradient") {
    ModelConfig cfg = tiny_config();
    cfg.alpha = 0.0;
    Rng rng(11);
    StgNetParams params = init_params(cfg, rng);
    auto batch_data = random_batch(cfg, 1, 5);
    // Make the target equal the model output so the residual is zero.
    Tensor x = window_to_model_input(batch_data[0].input);
    ForwardTrace trace = stgnet_forward(x, params);
    for (std::size_t hh = 0; hh < trace.prediction.dim(1); ++hh)
        for (std::size_t i = 0; i < trace.prediction.dim(0); ++i)
            for (std::size_t c = 0; c < trace.prediction.dim(2); ++c)
                batch_data[0].target.at(hh, i, c) = trace.prediction.at(i, hh, c);

    std::vector<const WindowedSample*> batch{&batch_data[0]};
    BatchGradients bg = compute_batch_gradients_serial(params, batch);
    CHECK(bg.loss == doctest::Approx(0.0));
    bg.grads.for_each([&](const std::string&, const Tensor& t) {
        for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == doctest::Approx(0.0));
    });
}

TEST_CASE("only the embedding gradient scales with the node count") {
    ModelConfig cfg = tiny_config();
    Rng rng(3);
    StgNetParams params = init_params(cfg, rng);
    auto batch_data = random_batch(cfg, 2, 9);
    std::vector<const WindowedSample*> batch;
    for (const auto& w : batch_data) batch.push_back(&w);
    BatchGradients bg = compute_batch_gradients_serial(params, batch);
    bg.grads.for_each([&](const std::string& name, const Tensor& t) {
        if (name == "embedding") {
            CHECK(t.dim(0) == static_cast<std::size_t>(cfg.nodes));
        } else {
            for (std::size_t dim : t.shape()) {
                CHECK(dim != static_cast<std::size_t>(cfg.nodes));
            }
        }
    });
}

TEST_CASE("parallel batch gradients are bit-identical to the serial reference") {
    ModelConfig cfg = tiny_config();
    cfg.alpha = 0.0;
    Rng rng(21);
    StgNetParams params = init_params(cfg, rng);
    auto batch_data = random_batch(cfg, 7, 13);
    std::vector<const WindowedSample*> batch;
    for (const auto& w : batch_data) batch.push_back(&w);

    BatchGradients serial = compute_batch_gradients_serial(params, batch);
    setenv("NODETRANS_THREADS", "4", 1);
    BatchGradients parallel = compute_batch_gradients(params, batch);
    unsetenv("NODETRANS_THREADS");

    CHECK(serial.loss == parallel.loss);
    std::vector<const Tensor*> st, pt;
    serial.grads.for_each([&](const std::string&, const Tensor& t) { st.push_back(&t); });
    parallel.grads.for_each([&](const std::string&, const Tensor& t) { pt.push_back(&t); });
    REQUIRE(st.size() == pt.size());
    for (std::size_t i = 0; i < st.size(); ++i) {
        REQUIRE(st[i]->size() == pt[i]->size());
        for (std::size_t j = 0; j < st[i]->size(); ++j) {
            CHECK((*st[i])[j] == (*pt[i])[j]);
        }
    }
}

TEST_CASE("regularizer gradient matches finite differences with fixed assignments") {
    Rng rng(31);
    Tensor e({6, 3});
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = rng.uniform(-1, 1);
    ClusterState state;
    state.centers = Tensor({2, 3});
    for (std::size_t i = 0; i < state.centers.size(); ++i) state.centers[i] = rng.uniform(-1, 1);
    state.assignments = assign_clusters(e, state.centers);

    Tensor grad({6, 3});
    cluster_regularizer_grad(e, state, 1.0, grad);
    double h = 1e-6;
    for (std::size_t i = 0; i < e.size(); ++i) {
        double saved = e[i];
        e[i] = saved + h;
        double lp = cluster_regularizer(e, state);
        e[i] = saved - h;
        double lm = cluster_regularizer(e, state);
        e[i] = saved;
        double fd = (lp - lm) / (2 * h);
        CHECK(std::abs(grad[i] - fd) / std::max(1e-8, std::abs(fd)) <= 1e-6);
    }
}
