#include <doctest.h>

#include <algorithm>
#include <vector>

#include "nodetrans/checkpoint.hpp"
#include "nodetrans/train.hpp"

using namespace nodetrans;

namespace {

ModelConfig small_model() {
    ModelConfig cfg;
    cfg.history = 8;
    cfg.horizon = 3;
    cfg.channels = 1;
    cfg.embed_dim = 4;
    cfg.tcn_hidden = 8;
    cfg.kernel_len = 3;
    cfg.dilations = {1, 2};
    cfg.clusters = 2;
    return cfg;
}

RoadNetworkDataset synth(int nodes, int days, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.node_count = nodes;
    spec.pattern_count = 2;
    spec.days = days;
    spec.interval_minutes = 60;
    spec.noise_std = 1.0;
    return generate_synthetic(spec, seed).dataset;
}

Checkpoint quick_source(std::uint64_t seed = 5) {
    RoadNetworkDataset ds = synth(12, 8, 7);
    SplitRanges split = split_source(ds.steps(), 0.7, 0.1, 0.2);
    TrainOptions opts;
    opts.max_epochs = 8;
    return pretrain(small_model(), ds, split, opts, seed).checkpoint;
}

}  // namespace

TEST_CASE("target parameters copy every pool bit-exactly and reseed the embedding") {
    Checkpoint source = quick_source();
    ClusterState cluster;
    StgNetParams target = build_target_params(source, 9, 42, &cluster);

    CHECK(target.config.nodes == 9);
    CHECK(target.tensors.embedding.dim(0) == 9);
    CHECK(target.tensors.embedding.dim(1) == 4);

    for (std::size_t l = 0; l < target.tensors.conv_pools.size(); ++l)
        for (std::size_t i = 0; i < target.tensors.conv_pools[l].size(); ++i)
            CHECK(target.tensors.conv_pools[l][i] == source.tensors.conv_pools[l][i]);
    for (std::size_t i = 0; i < target.tensors.spatial_pool.size(); ++i)
        CHECK(target.tensors.spatial_pool[i] == source.tensors.spatial_pool[i]);
    for (std::size_t i = 0; i < target.tensors.predictor_pool.size(); ++i)
        CHECK(target.tensors.predictor_pool[i] == source.tensors.predictor_pool[i]);

    // Cluster centers transfer unchanged; assignments are for the new nodes.
    for (std::size_t i = 0; i < cluster.centers.size(); ++i)
        CHECK(cluster.centers[i] == source.cluster.centers[i]);
    CHECK(cluster.assignments.size() == 9);

    // Same seed reproduces the embedding; a different seed does not.
    ClusterState c2;
    StgNetParams again = build_target_params(source, 9, 42, &c2);
    for (std::size_t i = 0; i < again.tensors.embedding.size(); ++i)
        CHECK(again.tensors.embedding[i] == target.tensors.embedding[i]);
    StgNetParams other = build_target_params(source, 9, 43, &c2);
    bool all_equal = true;
    for (std::size_t i = 0; i < other.tensors.embedding.size(); ++i)
        if (other.tensors.embedding[i] != target.tensors.embedding[i]) all_equal = false;
    CHECK(!all_equal);
}

TEST_CASE("transfer requires a cluster state and a matching architecture") {
    Checkpoint source = quick_source();
    Checkpoint no_cluster = source;
    no_cluster.cluster = ClusterState{};
    CHECK_THROWS_AS(build_target_params(no_cluster, 9, 1, nullptr), TrainError);

    RoadNetworkDataset target = synth(9, 6, 21);
    SplitRanges split = split_target(target, 1, 1, 0.2);
    ModelConfig wrong = small_model();
    wrong.tcn_hidden = 16;
    TrainOptions opts;
    opts.max_epochs = 1;
    CHECK_THROWS_AS(finetune(target, source, wrong, split, opts, 1), TrainError);
}

TEST_CASE("fine-tuning runs end to end, deterministically, and alpha matters") {
    Checkpoint source = quick_source();
    RoadNetworkDataset target = synth(9, 6, 21);
    SplitRanges split = split_target(target, 1, 1, 0.2);
    TrainOptions opts;
    opts.max_epochs = 6;
    opts.decay_every = 100;

    ModelConfig cfg = small_model();
    cfg.alpha = 1.0;
    TrainResult a = finetune(target, source, cfg, split, opts, 9);
    TrainResult b = finetune(target, source, cfg, split, opts, 9);
    CHECK(!a.report.diverged);
    CHECK(a.checkpoint.provenance.domain == "target");
    REQUIRE(a.report.rows.size() == b.report.rows.size());
    for (std::size_t i = 0; i < a.report.rows.size(); ++i)
        CHECK(a.report.rows[i].train_loss == b.report.rows[i].train_loss);

    // The regularizer changes the optimization trajectory.
    ModelConfig nc = cfg;
    nc.alpha = 0.0;
    TrainResult c = finetune(target, source, nc, split, opts, 9);
    bool differs = false;
    for (std::size_t i = 0; i < std::min(a.report.rows.size(), c.report.rows.size()); ++i)
        if (a.report.rows[i].train_loss != c.report.rows[i].train_loss) differs = true;
    CHECK(differs);

    // With alpha = 0 the combined loss reduces to the prediction loss alone.
    CHECK(c.report.rows[0].train_loss < a.report.rows[0].train_loss);
}

TEST_CASE("scratch training uses the same budget but no transferred tensors") {
    RoadNetworkDataset target = synth(9, 6, 21);
    SplitRanges split = split_target(target, 1, 1, 0.2);
    TrainOptions opts;
    opts.max_epochs = 4;
    TrainResult r = train_scratch(target, small_model(), split, opts, 9);
    CHECK(!r.checkpoint.has_cluster());
    CHECK(r.checkpoint.provenance.domain == "target-scratch");
    CHECK(r.report.rows.size() <= 4);
}

TEST_CASE("source clustering recovers the planted patterns on easy data") {
    // Noiseless two-pattern source: embeddings must cluster along the labels.
    SyntheticSpec spec;
    spec.node_count = 12;
    spec.pattern_count = 2;
    spec.days = 8;
    spec.interval_minutes = 60;
    spec.noise_std = 0.25;
    SyntheticDataset source = generate_synthetic(spec, 3);
    SplitRanges split = split_source(source.dataset.steps(), 0.7, 0.1, 0.2);
    TrainOptions opts;
    opts.max_epochs = 40;
    opts.patience = 40;
    TrainResult r = pretrain(small_model(), source.dataset, split, opts, 1);

    const std::vector<int>& z = r.checkpoint.cluster.assignments;
    // Count pairwise agreement between learned clusters and planted labels.
    std::size_t agree = 0, total = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        for (std::size_t j = i + 1; j < z.size(); ++j) {
            bool same_label = source.labels[i] == source.labels[j];
            bool same_cluster = z[i] == z[j];
            if (same_label == same_cluster) ++agree;
            ++total;
        }
    }
    CHECK(static_cast<double>(agree) / static_cast<double>(total) >= 0.9);
}
