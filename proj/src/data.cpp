#include "nodetrans/data.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "nodetrans/sha256.hpp"
#include <json.hpp>

namespace nodetrans {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_real(const std::string& tok, std::size_t row, std::size_t col) {
    char* end = nullptr;
    double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') {
        throw DataError("signals CSV: unparsable value '" + tok + "' at row " +
                        std::to_string(row) + " column " + std::to_string(col));
    }
    if (!std::isfinite(v)) {
        throw DataError("signals CSV: non-finite value at row " + std::to_string(row) +
                        " column " + std::to_string(col));
    }
    return v;
}

long parse_int(const std::string& tok, const std::string& what, std::size_t row) {
    long v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size()) {
        throw DataError(what + ": unparsable integer '" + tok + "' at row " + std::to_string(row));
    }
    return v;
}

}  // namespace

double Motif::eval(double t_days) const {
    double v = base;
    for (const Term& term : terms) {
        v += term.amplitude * std::sin(kTwoPi * term.cycles_per_day * t_days + term.phase);
    }
    return v;
}

RoadNetworkDataset load_dataset(const std::string& signals_path,
                                const std::string& edges_path,
                                const std::string& meta_path) {
    RoadNetworkDataset ds;

    std::ifstream meta_in(meta_path);
    if (!meta_in) throw DataError("cannot open meta file: " + meta_path);
    nlohmann::json meta = nlohmann::json::parse(meta_in);
    ds.interval_minutes = meta.at("interval_minutes").get<int>();
    ds.feature_count = meta.at("feature_count").get<int>();
    ds.units = meta.value("units", std::string("flow"));
    if (ds.interval_minutes <= 0) throw DataError("meta: interval_minutes must be positive");
    if (ds.feature_count <= 0) throw DataError("meta: feature_count must be positive");

    std::ifstream sig_in(signals_path);
    if (!sig_in) throw DataError("cannot open signals file: " + signals_path);
    std::string line;
    if (!std::getline(sig_in, line)) throw DataError("signals CSV: empty file");
    auto header = split_csv_line(line);
    if (header.empty() || header[0] != "timestamp") {
        throw DataError("signals CSV: first header column must be 'timestamp'");
    }
    std::size_t value_cols = header.size() - 1;
    if (value_cols == 0 || value_cols % static_cast<std::size_t>(ds.feature_count) != 0) {
        throw DataError("signals CSV: column count does not match feature_count");
    }
    std::size_t n = value_cols / static_cast<std::size_t>(ds.feature_count);
    ds.node_count = static_cast<int>(n);

    std::vector<double> values;
    std::size_t rows = 0;
    while (std::getline(sig_in, line)) {
        if (line.empty()) continue;
        auto toks = split_csv_line(line);
        if (toks.size() != header.size()) {
            throw DataError("signals CSV: row " + std::to_string(rows + 1) + " has " +
                            std::to_string(toks.size()) + " columns, expected " +
                            std::to_string(header.size()));
        }
        for (std::size_t c = 1; c < toks.size(); ++c) {
            values.push_back(parse_real(toks[c], rows + 1, c));
        }
        ++rows;
    }
    if (rows == 0) throw DataError("signals CSV: no data rows");

    // Columns are node-major, channel-minor (node_0_c0, node_0_c1, ...).
    Tensor signals({rows, n, static_cast<std::size_t>(ds.feature_count)});
    for (std::size_t t = 0; t < rows; ++t) {
        for (std::size_t i = 0; i < n; ++i) {
            for (int k = 0; k < ds.feature_count; ++k) {
                signals.at(t, i, static_cast<std::size_t>(k)) =
                    values[t * value_cols + i * static_cast<std::size_t>(ds.feature_count) +
                           static_cast<std::size_t>(k)];
            }
        }
    }
    ds.signals = std::move(signals);

    std::ifstream edge_in(edges_path);
    if (!edge_in) throw DataError("cannot open edges file: " + edges_path);
    if (!std::getline(edge_in, line)) throw DataError("edges CSV: empty file");
    std::size_t row = 0;
    while (std::getline(edge_in, line)) {
        if (line.empty()) continue;
        ++row;
        auto toks = split_csv_line(line);
        if (toks.size() != 3) {
            throw DataError("edges CSV: row " + std::to_string(row) + " must have 3 columns");
        }
        Edge e;
        e.src = static_cast<int>(parse_int(toks[0], "edges CSV", row));
        e.dst = static_cast<int>(parse_int(toks[1], "edges CSV", row));
        e.weight = parse_real(toks[2], row, 2);
        if (e.src < 0 || e.src >= ds.node_count || e.dst < 0 || e.dst >= ds.node_count) {
            throw DataError("edges CSV: row " + std::to_string(row) + " endpoint out of range [0," +
                            std::to_string(ds.node_count - 1) + "]");
        }
        if (e.weight < 0) throw DataError("edges CSV: row " + std::to_string(row) + " negative weight");
        ds.edges.push_back(e);
    }
    return ds;
}

void save_dataset(const RoadNetworkDataset& ds,
                  const std::string& signals_path,
                  const std::string& edges_path,
                  const std::string& meta_path) {
    std::ofstream sig(signals_path);
    if (!sig) throw DataError("cannot write " + signals_path);
    sig << "timestamp";
    for (int i = 0; i < ds.node_count; ++i) {
        if (ds.feature_count == 1) {
            sig << ",node_" << i;
        } else {
            for (int k = 0; k < ds.feature_count; ++k) sig << ",node_" << i << "_c" << k;
        }
    }
    sig << "\n";
    char buf[40];
    for (std::size_t t = 0; t < ds.steps(); ++t) {
        sig << t * static_cast<std::size_t>(ds.interval_minutes);
        for (int i = 0; i < ds.node_count; ++i) {
            for (int k = 0; k < ds.feature_count; ++k) {
                std::snprintf(buf, sizeof(buf), "%.17g",
                              ds.signals.at(t, static_cast<std::size_t>(i),
                                            static_cast<std::size_t>(k)));
                sig << ',' << buf;
            }
        }
        sig << "\n";
    }

    std::ofstream edg(edges_path);
    if (!edg) throw DataError("cannot write " + edges_path);
    edg << "src,dst,weight\n";
    for (const Edge& e : ds.edges) {
        std::snprintf(buf, sizeof(buf), "%.17g", e.weight);
        edg << e.src << ',' << e.dst << ',' << buf << "\n";
    }

    nlohmann::json meta = {{"interval_minutes", ds.interval_minutes},
                           {"feature_count", ds.feature_count},
                           {"units", ds.units}};
    std::ofstream m(meta_path);
    if (!m) throw DataError("cannot write " + meta_path);
    m << meta.dump(2) << "\n";
}

NormStats fit_normalizer(const Tensor& signals, IndexRange train_range) {
    if (train_range.length() == 0 || train_range.end > signals.dim(0)) {
        throw DataError("fit_normalizer: empty or out-of-range training range");
    }
    std::size_t n = signals.dim(1);
    std::size_t c = signals.dim(2);
    NormStats stats;
    stats.mean.assign(c, 0.0);
    stats.std.assign(c, 0.0);
    double count = static_cast<double>(train_range.length() * n);
    for (std::size_t k = 0; k < c; ++k) {
        double sum = 0.0;
        for (std::size_t t = train_range.begin; t < train_range.end; ++t)
            for (std::size_t i = 0; i < n; ++i) sum += signals.at(t, i, k);
        double mean = sum / count;
        double sq = 0.0;
        for (std::size_t t = train_range.begin; t < train_range.end; ++t)
            for (std::size_t i = 0; i < n; ++i) {
                double d = signals.at(t, i, k) - mean;
                sq += d * d;
            }
        double std_dev = std::sqrt(sq / count);
        if (std_dev < 1e-12) {
            throw DataError("fit_normalizer: channel " + std::to_string(k) +
                            " is constant over the training range; drop or perturb it");
        }
        stats.mean[k] = mean;
        stats.std[k] = std_dev;
    }
    return stats;
}

Tensor apply_normalizer(const Tensor& signals, const NormStats& stats) {
    if (signals.dim(2) != stats.mean.size()) {
        throw DataError("apply_normalizer: channel count mismatch");
    }
    Tensor out = signals;
    std::size_t c = signals.dim(2);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::size_t k = i % c;
        out[i] = (out[i] - stats.mean[k]) / stats.std[k];
    }
    return out;
}

Tensor invert_normalizer(const Tensor& normalized, const NormStats& stats) {
    std::size_t c = normalized.shape().back();
    if (c != stats.mean.size()) {
        throw DataError("invert_normalizer: channel count mismatch");
    }
    Tensor out = normalized;
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::size_t k = i % c;
        out[i] = out[i] * stats.std[k] + stats.mean[k];
    }
    return out;
}

std::vector<WindowedSample> make_windows(const Tensor& signals, IndexRange range,
                                         int history, int horizon) {
    std::size_t s = static_cast<std::size_t>(history);
    std::size_t h = static_cast<std::size_t>(horizon);
    if (range.end > signals.dim(0) || range.begin > range.end) {
        throw DataError("make_windows: range out of bounds");
    }
    if (range.length() < s + h) {
        throw DataError("make_windows: range length " + std::to_string(range.length()) +
                        " < S + H = " + std::to_string(s + h));
    }
    std::size_t n = signals.dim(1);
    std::size_t c = signals.dim(2);
    std::vector<WindowedSample> out;
    out.reserve(range.length() - s - h + 1);
    for (std::size_t t0 = range.begin; t0 + s + h <= range.end; ++t0) {
        WindowedSample w;
        w.origin_index = t0;
        w.input = Tensor({s, n, c});
        w.target = Tensor({h, n, c});
        for (std::size_t t = 0; t < s; ++t)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t k = 0; k < c; ++k)
                    w.input.at(t, i, k) = signals.at(t0 + t, i, k);
        for (std::size_t t = 0; t < h; ++t)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t k = 0; k < c; ++k)
                    w.target.at(t, i, k) = signals.at(t0 + s + t, i, k);
        out.push_back(std::move(w));
    }
    return out;
}

std::vector<WindowedSample> make_windows(const RoadNetworkDataset& ds,
                                         int history, int horizon) {
    return make_windows(ds.signals, {0, ds.steps()}, history, horizon);
}

SplitRanges split_source(std::size_t steps, double train_ratio, double val_ratio,
                         double test_ratio) {
    if (train_ratio <= 0 || val_ratio <= 0 || test_ratio <= 0) {
        throw DataError("split_source: ratios must be positive");
    }
    if (std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9) {
        throw DataError("split_source: ratios must sum to 1");
    }
    std::size_t train = static_cast<std::size_t>(std::llround(train_ratio * static_cast<double>(steps)));
    std::size_t val = static_cast<std::size_t>(std::llround(val_ratio * static_cast<double>(steps)));
    if (train + val >= steps) throw DataError("split_source: dataset too short");
    SplitRanges r;
    r.train = {0, train};
    r.val = {train, train + val};
    r.test = {train + val, steps};
    return r;
}

SplitRanges split_target(const RoadNetworkDataset& ds, int train_days, int val_days,
                         double test_fraction) {
    if (1440 % ds.interval_minutes != 0) {
        throw DataError("split_target: interval_minutes must divide a day");
    }
    if (train_days <= 0 || val_days < 0 || test_fraction <= 0 || test_fraction >= 1) {
        throw DataError("split_target: invalid arguments");
    }
    std::size_t spd = static_cast<std::size_t>(ds.steps_per_day());
    std::size_t t = ds.steps();
    std::size_t train = static_cast<std::size_t>(train_days) * spd;
    std::size_t val = static_cast<std::size_t>(val_days) * spd;
    std::size_t test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(t)));
    if (train + val + test > t) {
        throw DataError("split_target: dataset too short for requested ranges (need " +
                        std::to_string(train + val + test) + " steps, have " + std::to_string(t) + ")");
    }
    SplitRanges r;
    r.train = {0, train};
    r.val = {train, train + val};
    r.test = {t - test, t};
    return r;
}

std::vector<Motif> default_motifs(int pattern_count, Rng rng) {
    std::vector<Motif> motifs;
    for (int g = 0; g < pattern_count; ++g) {
        Motif m;
        m.base = 25.0 + 12.0 * g + rng.uniform(-1.0, 1.0);
        double phase = kTwoPi * static_cast<double>(g) / static_cast<double>(pattern_count);
        m.terms.push_back({9.0 + 1.5 * g, 1.0, phase});
        m.terms.push_back({3.5, 2.0, phase * 0.5 + 0.7});
        motifs.push_back(m);
    }
    return motifs;
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    if (spec.node_count <= 0 || spec.pattern_count <= 0 ||
        spec.pattern_count > spec.node_count || spec.days <= 0 ||
        spec.noise_std < 0 || spec.coupling < 0 || spec.coupling > 1 ||
        1440 % spec.interval_minutes != 0) {
        throw DataError("generate_synthetic: invalid spec");
    }
    Rng root(seed);
    std::vector<Motif> motifs = spec.motifs;
    if (motifs.empty()) motifs = default_motifs(spec.pattern_count, root.fork("motifs"));
    if (static_cast<int>(motifs.size()) != spec.pattern_count) {
        throw DataError("generate_synthetic: motif count must equal pattern_count");
    }

    SyntheticDataset out;
    RoadNetworkDataset& ds = out.dataset;
    ds.node_count = spec.node_count;
    ds.interval_minutes = spec.interval_minutes;
    ds.feature_count = 1;
    ds.units = "synthetic";

    std::size_t n = static_cast<std::size_t>(spec.node_count);
    int g_true = spec.pattern_count;
    out.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.labels[i] = static_cast<int>(i * static_cast<std::size_t>(g_true) / n);
    }

    std::size_t spd = static_cast<std::size_t>(1440 / spec.interval_minutes);
    std::size_t steps = spd * static_cast<std::size_t>(spec.days);
    ds.signals = Tensor({steps, n, 1});
    Rng noise = root.fork("noise");
    for (std::size_t t = 0; t < steps; ++t) {
        double t_days = static_cast<double>(t) / static_cast<double>(spd);
        for (std::size_t i = 0; i < n; ++i) {
            double v = motifs[static_cast<std::size_t>(out.labels[i])].eval(t_days);
            if (spec.noise_std > 0) v += noise.normal(0.0, spec.noise_std);
            ds.signals.at(t, i, 0) = v;
        }
    }

    // Pattern-blocked graph: a ring within each pattern keeps it connected,
    // extra intra edges with fixed probability, cross edges scaled by coupling.
    Rng graph = root.fork("graph");
    std::vector<std::vector<int>> members(static_cast<std::size_t>(g_true));
    for (std::size_t i = 0; i < n; ++i) members[static_cast<std::size_t>(out.labels[i])].push_back(static_cast<int>(i));
    for (const auto& group : members) {
        for (std::size_t j = 0; j + 1 < group.size(); ++j) {
            ds.edges.push_back({group[j], group[j + 1], 1.0});
            ds.edges.push_back({group[j + 1], group[j], 1.0});
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            bool same = out.labels[i] == out.labels[j];
            double p = same ? 0.4 : 0.3 * spec.coupling;
            if (graph.uniform() < p) {
                ds.edges.push_back({static_cast<int>(i), static_cast<int>(j), graph.uniform(0.5, 1.0)});
                ds.edges.push_back({static_cast<int>(j), static_cast<int>(i), graph.uniform(0.5, 1.0)});
            }
        }
    }
    return out;
}

std::string dataset_fingerprint(const RoadNetworkDataset& ds) {
    Sha256 h;
    h.update(ds.signals.data(), ds.signals.size() * sizeof(double));
    std::int64_t header[4] = {ds.node_count, static_cast<std::int64_t>(ds.steps()),
                              ds.interval_minutes, ds.feature_count};
    h.update(header, sizeof(header));
    for (const Edge& e : ds.edges) {
        std::int32_t ij[2] = {e.src, e.dst};
        h.update(ij, sizeof(ij));
        h.update(&e.weight, sizeof(double));
    }
    return h.hex_digest();
}

}  // namespace nodetrans
