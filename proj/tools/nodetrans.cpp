#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nodetrans/harness.hpp"

using nlohmann::json;

int main(int argc, char** argv) {
    CLI::App app{"Spatio-temporal graph forecasting with pattern-based transfer"};
    app.require_subcommand(1);

    struct Flags {
        std::string config_path;
        std::string out_dir;
        std::vector<std::string> overrides;
        std::uint64_t seed = 0;
        bool seed_set = false;
        double alpha = 0.0;
        bool alpha_set = false;
        int train_days = 0;
    } flags;

    std::vector<std::string> modes = {"pretrain", "finetune", "scratch", "evaluate",
                                      "synth",    "gradcheck", "cluster-report"};
    for (const std::string& mode : modes) {
        CLI::App* sub = app.add_subcommand(mode);
        sub->add_option("--config", flags.config_path, "experiment config JSON file");
        sub->add_option("--out", flags.out_dir, "output directory");
        sub->add_option("--seed", flags.seed, "run seed")
            ->each([&](const std::string&) { flags.seed_set = true; });
        sub->add_option("--alpha", flags.alpha, "clustering-regularizer weight")
            ->each([&](const std::string&) { flags.alpha_set = true; });
        sub->add_option("--train-days", flags.train_days, "target training budget in days")
            ->check(CLI::IsMember({1, 3, 7}));
        sub->add_option("--override", flags.overrides,
                        "dotted-key config override, e.g. model.embed_dim=4");
    }

    CLI11_PARSE(app, argc, argv);
    std::string mode = app.get_subcommands().front()->get_name();

    try {
        json j = json::object();
        if (!flags.config_path.empty()) {
            std::ifstream in(flags.config_path);
            if (!in) throw nodetrans::HarnessError("cannot read " + flags.config_path);
            in >> j;
        }
        if (!flags.out_dir.empty()) j["out"] = flags.out_dir;
        if (flags.seed_set) {
            j.erase("seeds");
            j["seed"] = flags.seed;
        }
        if (flags.alpha_set) j["model"]["alpha"] = flags.alpha;
        if (flags.train_days != 0) j["split"]["train_days"] = flags.train_days;
        for (const std::string& ov : flags.overrides) {
            std::size_t eq = ov.find('=');
            if (eq == std::string::npos) {
                throw nodetrans::HarnessError("override must look like key=value: " + ov);
            }
            nodetrans::apply_config_override(j, ov.substr(0, eq), ov.substr(eq + 1));
        }

        nodetrans::ExperimentConfig cfg = nodetrans::parse_experiment_config(mode, j);
        return nodetrans::run_experiment(cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
