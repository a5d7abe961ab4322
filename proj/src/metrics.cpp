#include "nodetrans/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "nodetrans/grad.hpp"
#include <json.hpp>

namespace nodetrans {

void MetricsAccumulator::add(const Tensor& pred, const Tensor& truth) {
    if (!pred.same_shape(truth)) throw DataError("compute_metrics: shape mismatch");
    bool per_h = pred.rank() == 3;
    std::size_t h = per_h ? pred.dim(1) : 1;
    if (horizon_.size() < h) horizon_.resize(h);

    for (std::size_t idx = 0; idx < pred.size(); ++idx) {
        std::size_t hh = 0;
        if (per_h) {
            std::size_t c = pred.dim(2);
            hh = (idx / c) % h;
        }
        double err = pred[idx] - truth[idx];
        double abs_err = std::abs(err);
        bool unmasked = std::abs(truth[idx]) > kMapeMaskThreshold;
        for (Cell* cell : {&total_, &horizon_[hh]}) {
            cell->sq_sum += err * err;
            cell->abs_sum += abs_err;
            ++cell->count;
            if (unmasked) {
                cell->ape_sum += abs_err / std::abs(truth[idx]);
                ++cell->unmasked;
            }
        }
    }
}

MetricsReport MetricsAccumulator::finalize() const {
    auto to_value = [](const Cell& c) {
        MetricValue v;
        if (c.count == 0) return v;
        v.rmse = std::sqrt(c.sq_sum / static_cast<double>(c.count));
        v.mae = c.abs_sum / static_cast<double>(c.count);
        if (c.unmasked > 0) {
            v.mape = 100.0 * c.ape_sum / static_cast<double>(c.unmasked);
            v.mape_defined = true;
        }
        return v;
    };
    MetricsReport r;
    r.aggregate = to_value(total_);
    for (const Cell& c : horizon_) r.per_horizon.push_back(to_value(c));
    r.sample_count = total_.count;
    r.masked_fraction = total_.count == 0
                            ? 0.0
                            : static_cast<double>(total_.count - total_.unmasked) /
                                  static_cast<double>(total_.count);
    return r;
}

MetricsReport compute_metrics(const Tensor& pred, const Tensor& truth) {
    MetricsAccumulator acc;
    acc.add(pred, truth);
    return acc.finalize();
}

MetricsReport evaluate_checkpoint(const Checkpoint& checkpoint,
                                  const RoadNetworkDataset& dataset,
                                  IndexRange test_range, const NormStats& stats) {
    const ModelConfig& cfg = checkpoint.config;
    if (cfg.nodes != dataset.node_count || cfg.channels != dataset.feature_count) {
        throw DataError("evaluate_checkpoint: checkpoint/dataset dimension mismatch");
    }
    Tensor normalized = apply_normalizer(dataset.signals, stats);
    auto windows = make_windows(normalized, test_range, cfg.history, cfg.horizon);
    StgNetParams params{cfg, checkpoint.tensors};
    MetricsAccumulator acc;
    for (const WindowedSample& w : windows) {
        Tensor x = window_to_model_input(w.input);
        ForwardTrace trace = stgnet_forward(x, params);
        Tensor pred = invert_normalizer(trace.prediction, stats);
        // Truth comes from the original-unit signals directly.
        Tensor truth = window_to_model_target(w.target);
        truth = invert_normalizer(truth, stats);
        acc.add(pred, truth);
    }
    return acc.finalize();
}

MetricsReport historical_average_baseline(const RoadNetworkDataset& dataset,
                                          const SplitRanges& split, int history,
                                          int horizon) {
    std::size_t spd = static_cast<std::size_t>(dataset.steps_per_day());
    std::size_t n = static_cast<std::size_t>(dataset.node_count);
    std::size_t c = static_cast<std::size_t>(dataset.feature_count);

    // Slot means over the training range.
    std::vector<double> slot_sum(spd * n * c, 0.0);
    std::vector<std::size_t> slot_count(spd * n * c, 0);
    std::vector<double> global_sum(n * c, 0.0);
    std::size_t global_count = 0;
    for (std::size_t t = split.train.begin; t < split.train.end; ++t) {
        std::size_t slot = t % spd;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < c; ++k) {
                double v = dataset.signals.at(t, i, k);
                slot_sum[(slot * n + i) * c + k] += v;
                ++slot_count[(slot * n + i) * c + k];
                global_sum[i * c + k] += v;
            }
        }
    }
    global_count = split.train.length();

    auto predict = [&](std::size_t t, std::size_t i, std::size_t k) {
        std::size_t slot = t % spd;
        std::size_t idx = (slot * n + i) * c + k;
        if (slot_count[idx] > 0) {
            return slot_sum[idx] / static_cast<double>(slot_count[idx]);
        }
        return global_sum[i * c + k] / static_cast<double>(global_count);
    };

    auto windows = make_windows(dataset.signals, split.test, history, horizon);
    MetricsAccumulator acc;
    std::size_t h = static_cast<std::size_t>(horizon);
    for (const WindowedSample& w : windows) {
        Tensor pred({n, h, c});
        Tensor truth({n, h, c});
        for (std::size_t hh = 0; hh < h; ++hh) {
            std::size_t t = w.origin_index + static_cast<std::size_t>(history) + hh;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t k = 0; k < c; ++k) {
                    pred.at(i, hh, k) = predict(t, i, k);
                    truth.at(i, hh, k) = w.target.at(hh, i, k);
                }
            }
        }
        acc.add(pred, truth);
    }
    return acc.finalize();
}

void write_metrics_csv(const MetricsReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    char buf[40];
    auto row = [&](const std::string& metric, const std::string& horizon, double v, bool defined) {
        if (!defined) {
            out << metric << ',' << horizon << ",\n";
            return;
        }
        std::snprintf(buf, sizeof(buf), "%.12g", v);
        out << metric << ',' << horizon << ',' << buf << "\n";
    };
    out << "metric,horizon,value\n";
    row("rmse", "all", report.aggregate.rmse, true);
    row("mae", "all", report.aggregate.mae, true);
    row("mape", "all", report.aggregate.mape, report.aggregate.mape_defined);
    for (std::size_t h = 0; h < report.per_horizon.size(); ++h) {
        std::string hs = std::to_string(h + 1);
        row("rmse", hs, report.per_horizon[h].rmse, true);
        row("mae", hs, report.per_horizon[h].mae, true);
        row("mape", hs, report.per_horizon[h].mape, report.per_horizon[h].mape_defined);
    }
    std::snprintf(buf, sizeof(buf), "%.12g", report.masked_fraction);
    row("masked_fraction", "all", report.masked_fraction, true);
    out << "sample_count,all," << report.sample_count << "\n";
}

std::string metrics_to_json_string(const MetricsReport& report) {
    nlohmann::json j;
    auto value = [](const MetricValue& v) {
        nlohmann::json m = {{"rmse", v.rmse}, {"mae", v.mae}};
        if (v.mape_defined) {
            m["mape"] = v.mape;
        } else {
            m["mape"] = nullptr;
        }
        return m;
    };
    j["aggregate"] = value(report.aggregate);
    j["per_horizon"] = nlohmann::json::array();
    for (const MetricValue& v : report.per_horizon) j["per_horizon"].push_back(value(v));
    j["masked_fraction"] = report.masked_fraction;
    j["sample_count"] = report.sample_count;
    return j.dump(2);
}

}  // namespace nodetrans
