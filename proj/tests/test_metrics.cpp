#include <doctest.h>

#include <cmath>

#include "nodetrans/data.hpp"
#include "nodetrans/metrics.hpp"

using namespace nodetrans;

TEST_CASE("metrics match hand-computed values") {
    Tensor t({1});
    Tensor p({1});
    t[0] = 100.0;
    p[0] = 90.0;
    MetricsReport r = compute_metrics(p, t);
    CHECK(r.aggregate.rmse == doctest::Approx(10.0));
    CHECK(r.aggregate.mae == doctest::Approx(10.0));
    CHECK(r.aggregate.mape == doctest::Approx(10.0));
    CHECK(r.masked_fraction == 0.0);

    Tensor t3({3});
    Tensor p3({3});
    t3[0] = 1.0; t3[1] = 2.0; t3[2] = 4.0;
    p3[0] = 2.0; p3[1] = 2.0; p3[2] = 1.0;
    MetricsReport r3 = compute_metrics(p3, t3);
    CHECK(r3.aggregate.mae == doctest::Approx(4.0 / 3.0));
    CHECK(r3.aggregate.rmse == doctest::Approx(std::sqrt(10.0 / 3.0)));
    CHECK(r3.aggregate.mape == doctest::Approx(100.0 * (1.0 + 0.0 + 0.75) / 3.0));
}

TEST_CASE("identical prediction gives exactly zero everywhere") {
    Tensor t({2, 2});
    t[0] = 1.0; t[1] = -2.0; t[2] = 0.5; t[3] = 4.0;
    MetricsReport r = compute_metrics(t, t);
    CHECK(r.aggregate.rmse == 0.0);
    CHECK(r.aggregate.mae == 0.0);
    CHECK(r.aggregate.mape == 0.0);
}

TEST_CASE("zero ground-truth entries are masked out of MAPE") {
    Tensor t({2});
    Tensor p({2});
    t[0] = 0.0;  t[1] = 10.0;
    p[0] = 5.0;  p[1] = 5.0;
    MetricsReport r = compute_metrics(p, t);
    CHECK(r.aggregate.mape == doctest::Approx(50.0));
    CHECK(r.masked_fraction == doctest::Approx(0.5));

    Tensor tz({2});
    tz.fill(0.0);
    MetricsReport rz = compute_metrics(p, tz);
    CHECK(!rz.aggregate.mape_defined);
    CHECK(rz.masked_fraction == doctest::Approx(1.0));
}

TEST_CASE("RMSE is at least MAE on random reports and scales linearly") {
    Rng rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor t({40});
        Tensor p({40});
        for (double& v : t.vec()) v = rng.uniform(-10.0, 10.0);
        for (double& v : p.vec()) v = rng.uniform(-10.0, 10.0);
        MetricsReport r = compute_metrics(p, t);
        CHECK(r.aggregate.rmse >= r.aggregate.mae);

        Tensor t2 = t;
        Tensor p2 = p;
        for (double& v : t2.vec()) v *= 3.0;
        for (double& v : p2.vec()) v *= 3.0;
        MetricsReport r2 = compute_metrics(p2, t2);
        CHECK(r2.aggregate.rmse == doctest::Approx(3.0 * r.aggregate.rmse));
        CHECK(r2.aggregate.mae == doctest::Approx(3.0 * r.aggregate.mae));
        if (r.aggregate.mape_defined) {
            CHECK(r2.aggregate.mape == doctest::Approx(r.aggregate.mape));
        }
    }
}

TEST_CASE("per-horizon slices partition the aggregate") {
    Rng rng(77);
    MetricsAccumulator acc;
    std::size_t n = 4, h = 3, c = 1;
    for (int b = 0; b < 5; ++b) {
        Tensor p({n, h, c});
        Tensor t({n, h, c});
        for (double& v : p.vec()) v = rng.uniform(-5.0, 5.0);
        for (double& v : t.vec()) v = rng.uniform(-5.0, 5.0);
        acc.add(p, t);
    }
    MetricsReport r = acc.finalize();
    REQUIRE(r.per_horizon.size() == h);
    double sq = 0.0, ab = 0.0;
    for (const MetricValue& m : r.per_horizon) {
        sq += m.rmse * m.rmse;
        ab += m.mae;
    }
    CHECK(r.aggregate.rmse == doctest::Approx(std::sqrt(sq / static_cast<double>(h))));
    CHECK(r.aggregate.mae == doctest::Approx(ab / static_cast<double>(h)));
    CHECK(r.sample_count == 5 * n * h * c);
}

TEST_CASE("single-step horizon reduces per-horizon to the aggregate") {
    Tensor p({3, 1, 1});
    Tensor t({3, 1, 1});
    p[0] = 1; p[1] = 2; p[2] = 3;
    t[0] = 2; t[1] = 2; t[2] = 5;
    MetricsAccumulator acc;
    acc.add(p, t);
    MetricsReport r = acc.finalize();
    REQUIRE(r.per_horizon.size() == 1);
    CHECK(r.per_horizon[0].rmse == doctest::Approx(r.aggregate.rmse));
    CHECK(r.per_horizon[0].mae == doctest::Approx(r.aggregate.mae));
}

TEST_CASE("historical-average baseline is exact on noiseless daily-periodic data") {
    SyntheticSpec spec;
    spec.node_count = 6;
    spec.pattern_count = 2;
    spec.days = 6;
    spec.interval_minutes = 60;
    spec.noise_std = 0.0;
    RoadNetworkDataset ds = generate_synthetic(spec, 9).dataset;
    SplitRanges sp = split_source(ds.steps(), 0.5, 0.25, 0.25);
    MetricsReport r = historical_average_baseline(ds, sp, 6, 3);
    CHECK(r.aggregate.rmse == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(r.aggregate.mae == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("historical-average baseline error approaches the noise level") {
    SyntheticSpec spec;
    spec.node_count = 4;
    spec.pattern_count = 2;
    spec.days = 30;
    spec.interval_minutes = 60;
    spec.noise_std = 2.0;
    RoadNetworkDataset ds = generate_synthetic(spec, 33).dataset;
    SplitRanges sp = split_source(ds.steps(), 0.7, 0.1, 0.2);
    MetricsReport r = historical_average_baseline(ds, sp, 6, 3);
    CHECK(r.aggregate.rmse > 1.5);
    CHECK(r.aggregate.rmse < 3.0);
}
