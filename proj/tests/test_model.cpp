#include <doctest.h>

#include <cmath>

#include "nodetrans/model.hpp"

using namespace nodetrans;

namespace {

ModelConfig small_config(int nodes = 6) {
    ModelConfig cfg;
    cfg.nodes = nodes;
    cfg.history = 16;
    cfg.horizon = 4;
    cfg.channels = 1;
    cfg.embed_dim = 5;
    cfg.tcn_hidden = 7;
    cfg.kernel_len = 3;
    cfg.dilations = {1, 2};
    cfg.clusters = 3;
    return cfg;
}

}  // namespace

TEST_CASE("row softmax rows are simplex points for random matrices") {
    Rng rng(99);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor e({4, 6});
        for (double& v : e.vec()) v = rng.uniform(-8.0, 8.0);
        Tensor w = row_softmax(e);
        for (std::size_t i = 0; i < 4; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < 6; ++j) {
                CHECK(w.at(i, j) >= 0.0);
                sum += w.at(i, j);
            }
            CHECK(std::abs(sum - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("row softmax is shift-invariant and handles large magnitudes") {
    Tensor e({1, 3});
    e[0] = 1000.0; e[1] = 1001.0; e[2] = 999.0;
    Tensor w = row_softmax(e);
    double sum = w[0] + w[1] + w[2];
    CHECK(sum == doctest::Approx(1.0));
    CHECK(w[1] > w[0]);
    CHECK(w[0] > w[2]);
}

TEST_CASE("adaptive adjacency rows are simplex points for random embeddings") {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor e({5, 4});
        for (double& v : e.vec()) v = rng.uniform(-2.0, 2.0);
        Tensor a = adaptive_adjacency(e);
        REQUIRE(a.dim(0) == 5);
        REQUIRE(a.dim(1) == 5);
        for (std::size_t i = 0; i < 5; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < 5; ++j) {
                CHECK(a.at(i, j) >= 0.0);
                sum += a.at(i, j);
            }
            CHECK(std::abs(sum - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("dilated causal convolution matches hand-computed values") {
    Tensor x({4, 1});
    x[0] = 1.0; x[1] = 2.0; x[2] = 4.0; x[3] = 6.0;
    Tensor k({1, 2, 1});  // out=1, K=2, in=1; taps f(0)=1, f(1)=1
    k[0] = 1.0; k[1] = 1.0;

    Tensor y1 = dilated_causal_conv(x, k, 1, 0.0);
    REQUIRE(y1.dim(0) == 4);
    CHECK(y1.at(0, 0) == doctest::Approx(1.0));   // x(0) + pad
    CHECK(y1.at(1, 0) == doctest::Approx(3.0));
    CHECK(y1.at(2, 0) == doctest::Approx(6.0));
    CHECK(y1.at(3, 0) == doctest::Approx(10.0));

    Tensor y2 = dilated_causal_conv(x, k, 2, 0.0);
    CHECK(y2.at(0, 0) == doctest::Approx(1.0));
    CHECK(y2.at(1, 0) == doctest::Approx(2.0));
    CHECK(y2.at(2, 0) == doctest::Approx(5.0));   // x(2) + x(0)
    CHECK(y2.at(3, 0) == doctest::Approx(8.0));

    // Weighted taps with bias: y(t) = 2 x(t) - x(t-1) + 0.5
    Tensor kw({1, 2, 1});
    kw[0] = 2.0; kw[1] = -1.0;
    Tensor yw = dilated_causal_conv(x, kw, 1, 0.5);
    CHECK(yw.at(0, 0) == doctest::Approx(2.5));
    CHECK(yw.at(1, 0) == doctest::Approx(3.5));
    CHECK(yw.at(3, 0) == doctest::Approx(8.5));
}

TEST_CASE("temporal outputs are causal: future perturbations never leak backward") {
    ModelConfig cfg = small_config();
    Rng rng(17);
    StgNetParams params = init_params(cfg, rng);
    std::size_t n = 6, s = 16, c = 1;
    Tensor x({n, s, c});
    for (double& v : x.vec()) v = rng.uniform(-1.0, 1.0);

    ForwardTrace base = stgnet_forward(x, params);
    for (std::size_t t = 0; t + 1 < s; ++t) {
        Tensor xp = x;
        for (std::size_t tt = t + 1; tt < s; ++tt)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t k = 0; k < c; ++k) xp.at(i, tt, k) += 0.37 * (1.0 + tt);
        ForwardTrace pert = stgnet_forward(xp, params);
        for (std::size_t tt = 0; tt <= t; ++tt)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t o = 0; o < base.tcn_output.dim(2); ++o)
                    CHECK(base.tcn_output.at(i, tt, o) == pert.tcn_output.at(i, tt, o));
    }
}

TEST_CASE("forward produces the contracted shapes and a node-aligned prediction") {
    ModelConfig cfg = small_config();
    Rng rng(23);
    StgNetParams params = init_params(cfg, rng);
    Tensor x({6, 16, 1});
    for (double& v : x.vec()) v = rng.uniform(-1.0, 1.0);
    ForwardTrace t = stgnet_forward(x, params);
    CHECK(t.tcn_output.shape() == std::vector<std::size_t>{6, 16, 7});
    CHECK(t.gcn_output.shape() == std::vector<std::size_t>{6, 16, 1});
    CHECK(t.prediction.shape() == std::vector<std::size_t>{6, 4, 1});
    CHECK(t.adjacency.shape() == std::vector<std::size_t>{6, 6});
}

TEST_CASE("parameter count matches an allocation walk and scales only by N*d") {
    ModelConfig cfg = small_config(6);
    std::size_t counted = parameter_count(cfg);

    StgNetParams p = init_params(cfg, Rng(1));
    std::size_t walked = 0;
    p.tensors.for_each([&](const std::string&, const Tensor& t) { walked += t.size(); });
    CHECK(counted == walked);
    CHECK(counted == p.tensors.element_count());

    for (int extra : {1, 5, 20}) {
        ModelConfig bigger = small_config(6 + extra);
        CHECK(parameter_count(bigger) - counted ==
              static_cast<std::size_t>(extra * cfg.embed_dim));
    }
}

TEST_CASE("materialized node parameters blend the pool rows by softmax weight") {
    // With a one-hot-like embedding row, the materialized block approaches the
    // corresponding pool row; with equal logits it is the average of rows.
    Tensor e({2, 2});
    e.at(0, 0) = 60.0; e.at(0, 1) = -60.0;  // saturates the softmax
    e.at(1, 0) = 0.0;  e.at(1, 1) = 0.0;
    Tensor pool({2, 3});
    pool.at(0, 0) = 1.0; pool.at(0, 1) = 2.0; pool.at(0, 2) = 3.0;
    pool.at(1, 0) = 5.0; pool.at(1, 1) = 6.0; pool.at(1, 2) = 7.0;
    Tensor w = row_softmax(e);
    Tensor m = materialize_node_params(w, pool, 3);
    CHECK(m.at(0, 0) == doctest::Approx(1.0));
    CHECK(m.at(0, 2) == doctest::Approx(3.0));
    CHECK(m.at(1, 0) == doctest::Approx(3.0));  // average of 1 and 5
    CHECK(m.at(1, 1) == doctest::Approx(4.0));
}

TEST_CASE("config validation rejects malformed settings") {
    ModelConfig cfg = small_config();
    cfg.nodes = 0;
    CHECK_THROWS_AS(cfg.validate(), ModelError);
    cfg = small_config();
    cfg.dilations = {};
    CHECK_THROWS_AS(cfg.validate(), ModelError);
    cfg = small_config();
    cfg.kernel_len = 1;
    CHECK_THROWS_AS(cfg.validate(), ModelError);
    cfg = small_config();
    cfg.beta = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ModelError);
}
