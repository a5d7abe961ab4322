#include "nodetrans/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include "nodetrans/sha256.hpp"
#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace nodetrans {

namespace {

json config_to_json(const ModelConfig& c) {
    return json{{"history", c.history},     {"horizon", c.horizon},
                {"channels", c.channels},   {"nodes", c.nodes},
                {"embed_dim", c.embed_dim}, {"tcn_hidden", c.tcn_hidden},
                {"kernel_len", c.kernel_len}, {"dilations", c.dilations},
                {"clusters", c.clusters},   {"alpha", c.alpha},
                {"beta", c.beta}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.history = j.at("history").get<int>();
    c.horizon = j.at("horizon").get<int>();
    c.channels = j.at("channels").get<int>();
    c.nodes = j.at("nodes").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.tcn_hidden = j.at("tcn_hidden").get<int>();
    c.kernel_len = j.at("kernel_len").get<int>();
    c.dilations = j.at("dilations").get<std::vector<int>>();
    c.clusters = j.at("clusters").get<int>();
    c.alpha = j.at("alpha").get<double>();
    c.beta = j.at("beta").get<double>();
    return c;
}

void write_tensor_file(const fs::path& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor read_tensor_file(const fs::path& path, const std::vector<std::size_t>& shape,
                        const std::string& expected_sha) {
    if (!fs::exists(path)) throw CheckpointError("missing tensor file: " + path.string());
    std::string hash = sha256_file(path.string());
    if (hash != expected_sha) {
        throw CheckpointError("tensor file hash mismatch: " + path.string());
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot read " + path.string());
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != t.size() * sizeof(double)) {
        throw CheckpointError("tensor file truncated: " + path.string());
    }
    return t;
}

Checkpoint load_impl(const std::string& dir, bool transferable_only) {
    fs::path root(dir);
    std::ifstream in(root / "manifest.json");
    if (!in) throw CheckpointError("cannot open manifest: " + (root / "manifest.json").string());
    json manifest = json::parse(in);
    if (manifest.at("format_version").get<int>() != 1) {
        throw CheckpointError("unsupported checkpoint format version");
    }

    Checkpoint cp;
    cp.config = config_from_json(manifest.at("config"));
    const json& prov = manifest.at("provenance");
    cp.provenance.seed = prov.at("seed").get<std::uint64_t>();
    cp.provenance.epoch = prov.at("epoch").get<int>();
    cp.provenance.domain = prov.at("domain").get<std::string>();
    cp.provenance.data_fingerprint = prov.at("data_fingerprint").get<std::string>();

    cp.tensors = make_param_tensors(cp.config);
    std::size_t g = static_cast<std::size_t>(cp.config.clusters);
    std::size_t d = static_cast<std::size_t>(cp.config.embed_dim);

    for (const json& entry : manifest.at("tensors")) {
        std::string name = entry.at("name").get<std::string>();
        bool transferable = entry.at("transferable").get<bool>();
        if (transferable_only && !transferable) continue;
        if (entry.at("dtype").get<std::string>() != "f64") {
            throw CheckpointError("unsupported dtype for tensor " + name);
        }
        std::vector<std::size_t> shape = entry.at("shape").get<std::vector<std::size_t>>();
        std::string sha = entry.at("sha256").get<std::string>();
        fs::path file = root / entry.at("file").get<std::string>();
        Tensor loaded = read_tensor_file(file, shape, sha);

        if (name == "cluster_centers") {
            if (shape != std::vector<std::size_t>{g, d}) {
                throw CheckpointError("cluster_centers shape mismatch");
            }
            cp.cluster.centers = std::move(loaded);
            continue;
        }
        bool found = false;
        cp.tensors.for_each([&](const std::string& tname, Tensor& t) {
            if (tname != name) return;
            if (t.shape() != shape) {
                throw CheckpointError("tensor shape mismatch for " + name);
            }
            t = loaded;
            found = true;
        });
        if (!found) throw CheckpointError("unknown tensor in manifest: " + name);
    }
    if (transferable_only) cp.tensors.embedding = Tensor();

    if (manifest.contains("cluster") && !manifest.at("cluster").is_null()) {
        cp.cluster.beta = manifest.at("cluster").at("beta").get<double>();
        if (!transferable_only) {
            cp.cluster.assignments =
                manifest.at("cluster").at("assignments").get<std::vector<int>>();
        }
    }
    return cp;
}

}  // namespace

void save_checkpoint(const Checkpoint& cp, const std::string& dir) {
    fs::path root(dir);
    fs::create_directories(root);

    json tensors = json::array();
    auto add_tensor = [&](const std::string& name, const Tensor& t, bool transferable) {
        std::string file = name + ".bin";
        write_tensor_file(root / file, t);
        tensors.push_back(json{{"name", name},
                               {"shape", t.shape()},
                               {"dtype", "f64"},
                               {"file", file},
                               {"sha256", sha256_file((root / file).string())},
                               {"transferable", transferable}});
    };
    cp.tensors.for_each([&](const std::string& name, const Tensor& t) {
        add_tensor(name, t, name != "embedding");
    });
    if (cp.has_cluster()) add_tensor("cluster_centers", cp.cluster.centers, true);

    json manifest = {
        {"format_version", 1},
        {"config", config_to_json(cp.config)},
        {"provenance",
         {{"seed", cp.provenance.seed},
          {"epoch", cp.provenance.epoch},
          {"domain", cp.provenance.domain},
          {"data_fingerprint", cp.provenance.data_fingerprint}}},
        {"tensors", tensors}};
    if (cp.has_cluster()) {
        manifest["cluster"] = {{"assignments", cp.cluster.assignments},
                               {"beta", cp.cluster.beta}};
    } else {
        manifest["cluster"] = nullptr;
    }

    std::ofstream out(root / "manifest.json");
    if (!out) throw CheckpointError("cannot write manifest in " + dir);
    out << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& dir) { return load_impl(dir, false); }

Checkpoint load_transferable(const std::string& dir) { return load_impl(dir, true); }

std::string config_to_json_string(const ModelConfig& config) {
    return config_to_json(config).dump(2);
}

ModelConfig config_from_json_string(const std::string& json_text) {
    return config_from_json(json::parse(json_text));
}

}  // namespace nodetrans
