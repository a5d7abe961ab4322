#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

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

RoadNetworkDataset small_source(std::uint64_t seed = 7) {
    SyntheticSpec spec;
    spec.node_count = 12;
    spec.pattern_count = 2;
    spec.days = 8;
    spec.interval_minutes = 60;
    spec.noise_std = 1.0;
    return generate_synthetic(spec, seed).dataset;
}

bool tensors_identical(const ParamTensors& a, const ParamTensors& b) {
    bool same = true;
    std::vector<const Tensor*> at, bt;
    a.for_each([&](const std::string&, const Tensor& t) { at.push_back(&t); });
    b.for_each([&](const std::string&, const Tensor& t) { bt.push_back(&t); });
    if (at.size() != bt.size()) return false;
    for (std::size_t i = 0; i < at.size(); ++i) {
        if (at[i]->size() != bt[i]->size()) return false;
        for (std::size_t j = 0; j < at[i]->size(); ++j)
            if ((*at[i])[j] != (*bt[i])[j]) same = false;
    }
    return same;
}

}  // namespace

TEST_CASE("pretraining descends and keeps the best-validation parameters") {
    RoadNetworkDataset ds = small_source();
    SplitRanges split = split_source(ds.steps(), 0.7, 0.1, 0.2);
    TrainOptions opts;
    opts.max_epochs = 30;
    opts.patience = 30;
    TrainResult r = pretrain(small_model(), ds, split, opts, 7);

    REQUIRE(!r.report.rows.empty());
    CHECK(!r.report.diverged);
    CHECK(r.report.rows.size() >= 6);
    CHECK(r.report.rows[5].train_loss < r.report.rows[0].train_loss);
    CHECK(r.report.best_epoch >= 0);

    // Best epoch has the lowest validation RMSE seen.
    double best = r.report.rows[static_cast<std::size_t>(r.report.best_epoch)].val_rmse;
    for (const EpochRow& row : r.report.rows) CHECK(best <= row.val_rmse);

    // Cluster state was distilled from the source embedding.
    CHECK(r.checkpoint.has_cluster());
    CHECK(r.checkpoint.cluster.assignments.size() == 12);
    CHECK(r.checkpoint.provenance.domain == "source");
}

TEST_CASE("training is deterministic for a fixed seed") {
    RoadNetworkDataset ds = small_source();
    SplitRanges split = split_source(ds.steps(), 0.7, 0.1, 0.2);
    TrainOptions opts;
    opts.max_epochs = 5;
    TrainResult a = pretrain(small_model(), ds, split, opts, 11);
    TrainResult b = pretrain(small_model(), ds, split, opts, 11);
    CHECK(tensors_identical(a.checkpoint.tensors, b.checkpoint.tensors));
    REQUIRE(a.report.rows.size() == b.report.rows.size());
    for (std::size_t i = 0; i < a.report.rows.size(); ++i) {
        CHECK(a.report.rows[i].train_loss == b.report.rows[i].train_loss);
        CHECK(a.report.rows[i].val_rmse == b.report.rows[i].val_rmse);
    }

    TrainResult c = pretrain(small_model(), ds, split, opts, 12);
    CHECK(!tensors_identical(a.checkpoint.tensors, c.checkpoint.tensors));
}

TEST_CASE("checkpoint save/load round trip is bit-exact") {
    RoadNetworkDataset ds = small_source();
    SplitRanges split = split_source(ds.steps(), 0.7, 0.1, 0.2);
    TrainOptions opts;
    opts.max_epochs = 3;
    TrainResult r = pretrain(small_model(), ds, split, opts, 3);

    auto dir = std::filesystem::temp_directory_path() / "nodetrans_test_ckpt";
    std::filesystem::remove_all(dir);
    save_checkpoint(r.checkpoint, dir.string());
    Checkpoint back = load_checkpoint(dir.string());

    CHECK(tensors_identical(back.tensors, r.checkpoint.tensors));
    CHECK(back.cluster.assignments == r.checkpoint.cluster.assignments);
    CHECK(back.cluster.beta == r.checkpoint.cluster.beta);
    for (std::size_t i = 0; i < back.cluster.centers.size(); ++i)
        CHECK(back.cluster.centers[i] == r.checkpoint.cluster.centers[i]);
    CHECK(back.config.same_except_nodes(r.checkpoint.config));
    CHECK(back.config.nodes == r.checkpoint.config.nodes);
    CHECK(back.provenance.seed == r.checkpoint.provenance.seed);
    CHECK(back.provenance.data_fingerprint == r.checkpoint.provenance.data_fingerprint);

    // Corrupted tensor bytes are caught by the manifest hashes.
    std::ofstream corrupt(dir / "embedding.bin", std::ios::binary | std::ios::in);
    corrupt.seekp(0);
    char byte = 0x5a;
    corrupt.write(&byte, 1);
    corrupt.close();
    CHECK_THROWS_AS(load_checkpoint(dir.string()), CheckpointError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("transferable loading skips node-bound tensors entirely") {
    RoadNetworkDataset ds = small_source();
    SplitRanges split = split_source(ds.steps(), 0.7, 0.1, 0.2);
    TrainOptions opts;
    opts.max_epochs = 2;
    TrainResult r = pretrain(small_model(), ds, split, opts, 5);

    auto dir = std::filesystem::temp_directory_path() / "nodetrans_test_ckpt2";
    std::filesystem::remove_all(dir);
    save_checkpoint(r.checkpoint, dir.string());

    // Deleting the embedding file breaks a full load but not a transfer load.
    std::filesystem::remove(dir / "embedding.bin");
    CHECK_THROWS_AS(load_checkpoint(dir.string()), CheckpointError);
    Checkpoint t = load_transferable(dir.string());
    CHECK(t.tensors.embedding.empty());
    CHECK(t.tensors.conv_pools.size() == r.checkpoint.tensors.conv_pools.size());
    for (std::size_t l = 0; l < t.tensors.conv_pools.size(); ++l)
        for (std::size_t i = 0; i < t.tensors.conv_pools[l].size(); ++i)
            CHECK(t.tensors.conv_pools[l][i] == r.checkpoint.tensors.conv_pools[l][i]);
    CHECK(t.has_cluster());
    std::filesystem::remove_all(dir);
}

TEST_CASE("train report CSV carries the documented columns") {
    TrainReport report;
    EpochRow row;
    row.epoch = 0;
    row.train_loss = 1.5;
    row.val_rmse = 2.25;
    row.val_mae = 1.75;
    row.val_mape = 12.5;
    row.lr = 0.003;
    row.seconds = 0.1;
    report.rows.push_back(row);

    auto path = std::filesystem::temp_directory_path() / "nodetrans_report.csv";
    write_train_report_csv(report, path.string());
    std::ifstream in(path);
    std::string header, line;
    std::getline(in, header);
    std::getline(in, line);
    CHECK(header == "epoch,train_loss,val_rmse,val_mae,val_mape,lr,seconds");
    CHECK(line.substr(0, 27) == "0,1.5,2.25,1.75,12.5,0.003,");
    std::filesystem::remove(path);
}
