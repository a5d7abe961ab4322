#include "nodetrans/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "nodetrans/checkpoint.hpp"
#include "nodetrans/gradcheck.hpp"
#include "nodetrans/metrics.hpp"
#include "nodetrans/sha256.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace nodetrans {

namespace {

void require_object(const json& j, const std::string& where) {
    if (!j.is_object()) throw HarnessError(where + ": expected a JSON object");
}

void reject_unknown_keys(const json& j, const std::vector<std::string>& known,
                         const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
            throw HarnessError(where + ": unknown key '" + it.key() + "'");
        }
    }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

ModelConfig parse_model(const json& j) {
    require_object(j, "model");
    reject_unknown_keys(j,
                        {"history", "horizon", "channels", "embed_dim", "tcn_hidden",
                         "kernel_len", "dilations", "clusters", "alpha", "beta"},
                        "model");
    ModelConfig m;  // struct defaults carry the documented hyper-parameters
    read_field(j, "history", m.history);
    read_field(j, "horizon", m.horizon);
    read_field(j, "channels", m.channels);
    read_field(j, "embed_dim", m.embed_dim);
    read_field(j, "tcn_hidden", m.tcn_hidden);
    read_field(j, "kernel_len", m.kernel_len);
    read_field(j, "dilations", m.dilations);
    read_field(j, "clusters", m.clusters);
    read_field(j, "alpha", m.alpha);
    read_field(j, "beta", m.beta);
    return m;
}

TrainOptions parse_train(const json& j, const std::string& mode) {
    TrainOptions t;
    if (mode == "finetune" || mode == "scratch") {
        t.max_epochs = 400;
        t.decay_every = 100;
    }
    if (j.is_null()) return t;
    require_object(j, "train");
    reject_unknown_keys(j,
                        {"learning_rate", "decay_factor", "decay_every", "batch_size",
                         "max_epochs", "patience"},
                        "train");
    read_field(j, "learning_rate", t.learning_rate);
    read_field(j, "decay_factor", t.decay_factor);
    read_field(j, "decay_every", t.decay_every);
    read_field(j, "batch_size", t.batch_size);
    read_field(j, "max_epochs", t.max_epochs);
    read_field(j, "patience", t.patience);
    return t;
}

DatasetSource parse_dataset_source(const json& j, const std::string& where) {
    require_object(j, where);
    reject_unknown_keys(j, {"signals", "edges", "meta", "synthetic"}, where);
    DatasetSource d;
    read_field(j, "signals", d.signals);
    read_field(j, "edges", d.edges);
    read_field(j, "meta", d.meta);
    if (j.contains("synthetic")) {
        const json& s = j.at("synthetic");
        require_object(s, where + ".synthetic");
        reject_unknown_keys(s,
                            {"nodes", "patterns", "days", "interval_minutes", "noise_std",
                             "coupling"},
                            where + ".synthetic");
        d.synthetic = true;
        read_field(s, "nodes", d.spec.node_count);
        read_field(s, "patterns", d.spec.pattern_count);
        read_field(s, "days", d.spec.days);
        read_field(s, "interval_minutes", d.spec.interval_minutes);
        read_field(s, "noise_std", d.spec.noise_std);
        read_field(s, "coupling", d.spec.coupling);
    }
    if (d.synthetic && !d.signals.empty()) {
        throw HarnessError(where + ": give either file paths or a synthetic spec, not both");
    }
    if (!d.synthetic && !d.signals.empty() && (d.edges.empty() || d.meta.empty())) {
        throw HarnessError(where + ": file datasets need signals, edges, and meta paths");
    }
    return d;
}

SplitSettings parse_split(const json& j) {
    SplitSettings s;
    if (j.is_null()) return s;
    require_object(j, "split");
    reject_unknown_keys(j,
                        {"train_ratio", "val_ratio", "test_ratio", "train_days", "val_days",
                         "test_fraction", "use_days"},
                        "split");
    read_field(j, "train_ratio", s.train_ratio);
    read_field(j, "val_ratio", s.val_ratio);
    read_field(j, "test_ratio", s.test_ratio);
    read_field(j, "train_days", s.train_days);
    read_field(j, "val_days", s.val_days);
    read_field(j, "test_fraction", s.test_fraction);
    read_field(j, "use_days", s.use_days);
    if (s.train_days != 1 && s.train_days != 3 && s.train_days != 7) {
        throw HarnessError("split.train_days must be one of {1, 3, 7}");
    }
    return s;
}

json model_to_json(const ModelConfig& m) {
    return json{{"history", m.history},     {"horizon", m.horizon},
                {"channels", m.channels},   {"embed_dim", m.embed_dim},
                {"tcn_hidden", m.tcn_hidden}, {"kernel_len", m.kernel_len},
                {"dilations", m.dilations}, {"clusters", m.clusters},
                {"alpha", m.alpha},         {"beta", m.beta}};
}

json dataset_source_to_json(const DatasetSource& d) {
    json j = json::object();
    if (d.synthetic) {
        j["synthetic"] = json{{"nodes", d.spec.node_count},
                              {"patterns", d.spec.pattern_count},
                              {"days", d.spec.days},
                              {"interval_minutes", d.spec.interval_minutes},
                              {"noise_std", d.spec.noise_std},
                              {"coupling", d.spec.coupling}};
    } else if (!d.signals.empty()) {
        j["signals"] = d.signals;
        j["edges"] = d.edges;
        j["meta"] = d.meta;
    }
    return j;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw HarnessError("cannot write " + path);
    out << text;
}

// Artifacts for one completed training run (any of the three arms).
void write_training_artifacts(const TrainResult& result, const RoadNetworkDataset& dataset,
                              const std::string& dir) {
    save_checkpoint(result.checkpoint, dir + "/checkpoint");
    write_train_report_csv(result.report, dir + "/train_report.csv");
    if (result.report.diverged) {
        throw HarnessError("training diverged; checkpoint and report written to " + dir);
    }
    MetricsReport metrics =
        evaluate_checkpoint(result.checkpoint, dataset, result.split.test, result.stats);
    write_metrics_csv(metrics, dir + "/metrics.csv");
    write_text_file(dir + "/metrics.json", metrics_to_json_string(metrics));
}

SplitRanges resolve_split(const SplitSettings& s, const RoadNetworkDataset& ds,
                          bool day_based) {
    if (day_based) return split_target(ds, s.train_days, s.val_days, s.test_fraction);
    return split_source(ds.steps(), s.train_ratio, s.val_ratio, s.test_ratio);
}

void run_synth(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& dir) {
    if (!cfg.source.synthetic) throw HarnessError("mode synth needs source.synthetic");
    Rng rng(seed);
    SyntheticDataset synth = resolve_dataset(cfg.source, rng.fork("synth-source"));
    save_dataset(synth.dataset, dir + "/signals.csv", dir + "/edges.csv", dir + "/meta.json");
    std::string labels = "node,pattern\n";
    for (std::size_t i = 0; i < synth.labels.size(); ++i) {
        labels += std::to_string(i) + "," + std::to_string(synth.labels[i]) + "\n";
    }
    write_text_file(dir + "/labels.csv", labels);
}

void run_pretrain(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& dir) {
    Rng rng(seed);
    SyntheticDataset data = resolve_dataset(cfg.source, rng.fork("synth-source"));
    SplitRanges split = resolve_split(cfg.split, data.dataset, false);
    TrainResult result = pretrain(cfg.model, data.dataset, split, cfg.train, seed);
    write_training_artifacts(result, data.dataset, dir);
}

void run_finetune(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& dir) {
    if (cfg.checkpoint.empty()) throw HarnessError("mode finetune needs a checkpoint path");
    Checkpoint source = load_transferable(cfg.checkpoint);
    Rng rng(seed);
    SyntheticDataset data = resolve_dataset(cfg.target, rng.fork("synth-target"));
    SplitRanges split = resolve_split(cfg.split, data.dataset, true);
    // Architecture comes from the source checkpoint; the regularizer settings
    // stay overridable so the ablation arms share one config file.
    ModelConfig model = source.config;
    model.alpha = cfg.model.alpha;
    model.beta = cfg.model.beta;
    TrainResult result = finetune(data.dataset, source, model, split, cfg.train, seed);
    write_training_artifacts(result, data.dataset, dir);
}

void run_scratch(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& dir) {
    Rng rng(seed);
    SyntheticDataset data = resolve_dataset(cfg.target, rng.fork("synth-target"));
    SplitRanges split = resolve_split(cfg.split, data.dataset, true);
    // With a checkpoint given, borrow its architecture so the comparison arm
    // matches the fine-tuned model exactly; otherwise use the config's model.
    ModelConfig model = cfg.model;
    if (!cfg.checkpoint.empty()) {
        Checkpoint source = load_transferable(cfg.checkpoint);
        model = source.config;
        model.alpha = cfg.model.alpha;
        model.beta = cfg.model.beta;
    }
    TrainResult result = train_scratch(data.dataset, model, split, cfg.train, seed);
    write_training_artifacts(result, data.dataset, dir);
}

void run_evaluate(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& dir) {
    if (cfg.checkpoint.empty()) throw HarnessError("mode evaluate needs a checkpoint path");
    Checkpoint cp = load_checkpoint(cfg.checkpoint);
    Rng rng(seed);
    SyntheticDataset data = resolve_dataset(cfg.source, rng.fork("synth-source"));
    SplitRanges split = resolve_split(cfg.split, data.dataset, cfg.split.use_days);

    NormStats stats = fit_normalizer(data.dataset.signals, split.train);
    MetricsReport metrics = evaluate_checkpoint(cp, data.dataset, split.test, stats);
    write_metrics_csv(metrics, dir + "/metrics.csv");
    write_text_file(dir + "/metrics.json", metrics_to_json_string(metrics));

    MetricsReport ha = historical_average_baseline(data.dataset, split, cp.config.history,
                                                   cp.config.horizon);
    write_metrics_csv(ha, dir + "/ha_metrics.csv");
}

void run_gradcheck(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& dir) {
    ModelConfig model = cfg.model;
    if (model.nodes == 0) {
        // Default probe configuration: small enough to finish in seconds while
        // exercising multi-block, multi-dilation gradients.
        model.nodes = 5;
        model.history = 8;
        model.horizon = 3;
        model.channels = 1;
        model.embed_dim = 4;
        model.tcn_hidden = 6;
        model.kernel_len = 3;
        model.dilations = {1, 2};
        model.clusters = 2;
    }
    GradCheckResult res = gradient_check(model, seed);
    json j{{"max_rel_err", res.max_rel_err},
           {"checked", res.checked},
           {"worst_tensor", res.worst_tensor},
           {"pass", res.max_rel_err <= 1e-4}};
    write_text_file(dir + "/gradcheck.json", j.dump(2) + "\n");
    std::printf("max relative gradient error: %.3e over %zu sampled parameters (worst: %s)\n",
                res.max_rel_err, res.checked, res.worst_tensor.c_str());
    if (res.max_rel_err > 1e-4) {
        throw HarnessError("gradient check failed: max relative error above 1e-4");
    }
}

void run_cluster_report(const ExperimentConfig& cfg, std::uint64_t seed,
                        const std::string& dir) {
    if (cfg.checkpoint.empty()) throw HarnessError("mode cluster-report needs a checkpoint path");
    Checkpoint cp = load_checkpoint(cfg.checkpoint);
    if (!cp.has_cluster() || cp.cluster.assignments.empty()) {
        throw HarnessError("cluster-report: checkpoint carries no cluster state");
    }
    Rng rng(seed);
    SyntheticDataset data = resolve_dataset(cfg.source, rng.fork("synth-source"));
    SplitRanges split = resolve_split(cfg.split, data.dataset, cfg.split.use_days);
    write_cluster_report(cp, data.dataset, split.train, dir);
}

void write_run_manifest(const ExperimentConfig& cfg, const std::string& status,
                        const std::string& error) {
    json files = json::array();
    std::vector<std::string> paths;
    for (const auto& entry : fs::recursive_directory_iterator(cfg.out_dir)) {
        if (!entry.is_regular_file()) continue;
        std::string rel = fs::relative(entry.path(), cfg.out_dir).generic_string();
        if (rel == "run_manifest.json") continue;
        paths.push_back(rel);
    }
    std::sort(paths.begin(), paths.end());
    for (const std::string& rel : paths) {
        fs::path full = fs::path(cfg.out_dir) / rel;
        files.push_back(json{{"path", rel},
                             {"sha256", sha256_file(full.string())},
                             {"bytes", fs::file_size(full)}});
    }
    json manifest{{"version", kVersionString},
                  {"mode", cfg.mode},
                  {"status", status},
                  {"config", experiment_config_to_json(cfg)},
                  {"files", files}};
    if (!error.empty()) manifest["error"] = error;
    write_text_file((fs::path(cfg.out_dir) / "run_manifest.json").string(),
                    manifest.dump(2) + "\n");
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& mode, const json& j) {
    static const std::vector<std::string> kModes = {
        "pretrain", "finetune", "scratch", "evaluate", "synth", "gradcheck", "cluster-report"};
    if (std::find(kModes.begin(), kModes.end(), mode) == kModes.end()) {
        throw HarnessError("unknown mode '" + mode + "'");
    }
    require_object(j, "config");
    reject_unknown_keys(
        j, {"out", "seed", "seeds", "model", "train", "split", "source", "target", "checkpoint"},
        "config");

    ExperimentConfig cfg;
    cfg.mode = mode;
    read_field(j, "out", cfg.out_dir);
    if (j.contains("seed") && j.contains("seeds")) {
        throw HarnessError("config: give either 'seed' or 'seeds', not both");
    }
    if (j.contains("seed")) cfg.seeds = {j.at("seed").get<std::uint64_t>()};
    if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (cfg.seeds.empty()) throw HarnessError("config: seed list must be non-empty");

    cfg.model = parse_model(j.value("model", json::object()));
    cfg.train = parse_train(j.contains("train") ? j.at("train") : json(), mode);
    cfg.split = parse_split(j.contains("split") ? j.at("split") : json());
    if (j.contains("source")) cfg.source = parse_dataset_source(j.at("source"), "source");
    if (j.contains("target")) cfg.target = parse_dataset_source(j.at("target"), "target");
    read_field(j, "checkpoint", cfg.checkpoint);

    bool needs_source = (mode == "pretrain" || mode == "synth" || mode == "evaluate" ||
                         mode == "cluster-report");
    bool needs_target = (mode == "finetune" || mode == "scratch");
    if (needs_source && !cfg.source.configured()) {
        throw HarnessError("mode " + mode + " needs a 'source' dataset");
    }
    if (needs_target && !cfg.target.configured()) {
        throw HarnessError("mode " + mode + " needs a 'target' dataset");
    }
    if (mode == "finetune" && cfg.checkpoint.empty()) {
        throw HarnessError("mode finetune needs a 'checkpoint' path");
    }
    if ((mode == "evaluate" || mode == "cluster-report") && cfg.checkpoint.empty()) {
        throw HarnessError("mode " + mode + " needs a 'checkpoint' path");
    }
    return cfg;
}

void apply_config_override(json& j, const std::string& dotted_key,
                           const std::string& value_text) {
    if (dotted_key.empty()) throw HarnessError("override: empty key");
    json* cur = &j;
    std::size_t start = 0;
    while (true) {
        std::size_t dot = dotted_key.find('.', start);
        std::string part = dotted_key.substr(start, dot - start);
        if (part.empty()) throw HarnessError("override: malformed key '" + dotted_key + "'");
        if (dot == std::string::npos) {
            json value = json::parse(value_text, nullptr, /*allow_exceptions=*/false);
            (*cur)[part] = value.is_discarded() ? json(value_text) : value;
            return;
        }
        cur = &(*cur)[part];
        if (!cur->is_object() && !cur->is_null()) {
            throw HarnessError("override: '" + part + "' is not an object");
        }
        start = dot + 1;
    }
}

json experiment_config_to_json(const ExperimentConfig& cfg) {
    json j{{"out", cfg.out_dir},
           {"seeds", cfg.seeds},
           {"model", model_to_json(cfg.model)},
           {"train",
            json{{"learning_rate", cfg.train.learning_rate},
                 {"decay_factor", cfg.train.decay_factor},
                 {"decay_every", cfg.train.decay_every},
                 {"batch_size", cfg.train.batch_size},
                 {"max_epochs", cfg.train.max_epochs},
                 {"patience", cfg.train.patience}}},
           {"split",
            json{{"train_ratio", cfg.split.train_ratio},
                 {"val_ratio", cfg.split.val_ratio},
                 {"test_ratio", cfg.split.test_ratio},
                 {"train_days", cfg.split.train_days},
                 {"val_days", cfg.split.val_days},
                 {"test_fraction", cfg.split.test_fraction},
                 {"use_days", cfg.split.use_days}}}};
    if (cfg.source.configured()) j["source"] = dataset_source_to_json(cfg.source);
    if (cfg.target.configured()) j["target"] = dataset_source_to_json(cfg.target);
    if (!cfg.checkpoint.empty()) j["checkpoint"] = cfg.checkpoint;
    return j;
}

SyntheticDataset resolve_dataset(const DatasetSource& src, Rng synth_rng) {
    if (src.synthetic) return generate_synthetic(src.spec, synth_rng.next_u64());
    if (src.signals.empty()) throw HarnessError("dataset source not configured");
    SyntheticDataset out;
    out.dataset = load_dataset(src.signals, src.edges, src.meta);
    return out;
}

void write_cluster_report(const Checkpoint& checkpoint, const RoadNetworkDataset& dataset,
                          IndexRange train_range, const std::string& dir) {
    const std::vector<int>& assign = checkpoint.cluster.assignments;
    int clusters = checkpoint.cluster.cluster_count();
    if (static_cast<int>(assign.size()) != dataset.node_count) {
        throw HarnessError("cluster-report: assignment count does not match the dataset");
    }

    std::string assignments_csv = "node,cluster\n";
    std::vector<int> sizes(static_cast<std::size_t>(clusters), 0);
    for (std::size_t i = 0; i < assign.size(); ++i) {
        assignments_csv += std::to_string(i) + "," + std::to_string(assign[i]) + "\n";
        sizes[static_cast<std::size_t>(assign[i])]++;
    }
    write_text_file(dir + "/assignments.csv", assignments_csv);

    std::string sizes_csv = "cluster,size\n";
    for (int g = 0; g < clusters; ++g) {
        sizes_csv += std::to_string(g) + "," + std::to_string(sizes[static_cast<std::size_t>(g)]) + "\n";
    }
    write_text_file(dir + "/sizes.csv", sizes_csv);

    // Per-cluster mean signal per time-of-day slot, averaged over channels and
    // member nodes across the training range.
    int slots = dataset.steps_per_day();
    std::vector<std::vector<double>> sum(static_cast<std::size_t>(clusters),
                                         std::vector<double>(static_cast<std::size_t>(slots), 0.0));
    std::vector<std::vector<std::size_t>> count(
        static_cast<std::size_t>(clusters),
        std::vector<std::size_t>(static_cast<std::size_t>(slots), 0));
    std::size_t channels = dataset.signals.dim(2);
    for (std::size_t t = train_range.begin; t < train_range.end; ++t) {
        int slot = static_cast<int>(t % static_cast<std::size_t>(slots));
        for (int i = 0; i < dataset.node_count; ++i) {
            std::size_t g = static_cast<std::size_t>(assign[static_cast<std::size_t>(i)]);
            for (std::size_t c = 0; c < channels; ++c) {
                sum[g][static_cast<std::size_t>(slot)] +=
                    dataset.signals.at(t, static_cast<std::size_t>(i), c);
                count[g][static_cast<std::size_t>(slot)]++;
            }
        }
    }
    std::string profiles_csv = "cluster,slot,mean\n";
    char buf[96];
    for (int g = 0; g < clusters; ++g) {
        for (int s = 0; s < slots; ++s) {
            double mean = count[static_cast<std::size_t>(g)][static_cast<std::size_t>(s)] == 0
                              ? 0.0
                              : sum[static_cast<std::size_t>(g)][static_cast<std::size_t>(s)] /
                                    static_cast<double>(
                                        count[static_cast<std::size_t>(g)][static_cast<std::size_t>(s)]);
            std::snprintf(buf, sizeof(buf), "%d,%d,%.12g\n", g, s, mean);
            profiles_csv += buf;
        }
    }
    write_text_file(dir + "/profiles.csv", profiles_csv);

    json summary{{"clusters", clusters},
                 {"nodes", dataset.node_count},
                 {"sizes", sizes},
                 {"beta", checkpoint.cluster.beta}};
    write_text_file(dir + "/summary.json", summary.dump(2) + "\n");
}

int run_experiment(const ExperimentConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    std::string status = "complete";
    std::string error;
    try {
        for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
            std::uint64_t seed = cfg.seeds[si];
            std::string dir = cfg.out_dir;
            if (cfg.seeds.size() > 1) {
                dir = (fs::path(cfg.out_dir) / ("seed_" + std::to_string(seed))).string();
                fs::create_directories(dir);
            }
            if (cfg.mode == "synth") run_synth(cfg, seed, dir);
            else if (cfg.mode == "pretrain") run_pretrain(cfg, seed, dir);
            else if (cfg.mode == "finetune") run_finetune(cfg, seed, dir);
            else if (cfg.mode == "scratch") run_scratch(cfg, seed, dir);
            else if (cfg.mode == "evaluate") run_evaluate(cfg, seed, dir);
            else if (cfg.mode == "gradcheck") run_gradcheck(cfg, seed, dir);
            else if (cfg.mode == "cluster-report") run_cluster_report(cfg, seed, dir);
            else throw HarnessError("unknown mode '" + cfg.mode + "'");
        }
    } catch (const std::exception& e) {
        status = "partial";
        error = e.what();
    }
    try {
        write_run_manifest(cfg, status, error);
    } catch (const std::exception& e) {
        std::cerr << "error: failed to write run manifest: " << e.what() << "\n";
        if (error.empty()) error = e.what();
    }
    if (!error.empty()) {
        std::cerr << "error: " << error << "\n";
        return 1;
    }
    return 0;
}

}  // namespace nodetrans
