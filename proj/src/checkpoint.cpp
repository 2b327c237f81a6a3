#include "etcn/checkpoint.hpp"

#include "etcn/io.hpp"

#include <json.hpp>

#include <stdexcept>

namespace etcn {

using nlohmann::json;

namespace {

template <class T>
json tensor_json(const T& t) {
    return {{"rows", t.rows()}, {"cols", t.cols()}, {"data", std::vector<double>(t.data(), t.data() + t.size())}};
}

template <class T>
void tensor_from_json(const json& j, T& t, const std::string& name) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (rows != t.rows() || cols != t.cols() || static_cast<Eigen::Index>(data.size()) != rows * cols)
        throw std::invalid_argument("checkpoint: tensor " + name + " has the wrong shape");
    std::copy(data.begin(), data.end(), t.data());
}

json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from_json(const json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json config_to_json(const NetworkConfig& c) {
    return {{"n_vars", c.n_vars},
            {"window_width", c.window_width},
            {"n_classes", c.n_classes},
            {"tcn_channels", c.tcn_channels},
            {"tcn_kernel_size", c.tcn_kernel_size},
            {"tcn_dilations", c.tcn_dilations},
            {"dropout_rate", c.dropout_rate},
            {"attention_dim", c.attention_dim},
            {"res_block_kind", static_cast<int>(c.res_block_kind)},
            {"res_kernel_size", c.res_kernel_size},
            {"sa_enabled", c.sa_enabled},
            {"res_enabled", c.res_enabled}};
}

NetworkConfig config_from_json(const json& j) {
    NetworkConfig c;
    c.n_vars = j.at("n_vars").get<int>();
    c.window_width = j.at("window_width").get<int>();
    c.n_classes = j.at("n_classes").get<int>();
    c.tcn_channels = j.at("tcn_channels").get<int>();
    c.tcn_kernel_size = j.at("tcn_kernel_size").get<int>();
    c.tcn_dilations = j.at("tcn_dilations").get<std::vector<int>>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.attention_dim = j.at("attention_dim").get<int>();
    const int kind = j.at("res_block_kind").get<int>();
    if (kind != 1 && kind != 2) throw std::invalid_argument("checkpoint: res_block_kind must be 1 or 2");
    c.res_block_kind = static_cast<ResBlockKind>(kind);
    c.res_kernel_size = j.at("res_kernel_size").get<int>();
    c.sa_enabled = j.at("sa_enabled").get<bool>();
    c.res_enabled = j.at("res_enabled").get<bool>();
    validate(c);
    return c;
}

json stats_json(const RunningStats& s) { return {{"mean", vector_json(s.mean)}, {"var", vector_json(s.var)}}; }

void stats_from_json(const json& j, RunningStats& s, const std::string& name) {
    Vector mean = vector_from_json(j.at("mean"));
    Vector var = vector_from_json(j.at("var"));
    if (mean.size() != s.mean.size() || var.size() != s.var.size())
        throw std::invalid_argument("checkpoint: buffer " + name + " has the wrong shape");
    s.mean = std::move(mean);
    s.var = std::move(var);
}

}  // namespace

std::string network_config_json(const NetworkConfig& config) { return config_to_json(config).dump(); }

NetworkConfig network_config_from_json(const std::string& text) { return config_from_json(json::parse(text)); }

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    json doc;
    doc["format"] = "etcn-checkpoint";
    doc["version"] = kCheckpointVersion;
    doc["config"] = config_to_json(ckpt.model.config);
    json params = json::object();
    visit_parameters([&](const std::string& name, const auto& t) { params[name] = tensor_json(t); },
                     ckpt.model.params);
    doc["params"] = std::move(params);
    doc["buffers"] = {{"res.bn1", stats_json(ckpt.model.buffers.res_bn1)},
                      {"res.bn2", stats_json(ckpt.model.buffers.res_bn2)},
                      {"res.shortcut_bn", stats_json(ckpt.model.buffers.res_shortcut_bn)}};
    doc["normalizer"] = {{"x_min", vector_json(ckpt.normalizer.x_min)}, {"x_max", vector_json(ckpt.normalizer.x_max)}};
    doc["window_width"] = ckpt.window_width;
    return doc.dump(1) + "\n";
}

Checkpoint parse_checkpoint(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("checkpoint: malformed JSON: ") + e.what());
    }
    if (doc.value("format", "") != "etcn-checkpoint") throw std::invalid_argument("checkpoint: not an ETCN checkpoint");
    if (doc.at("version").get<int>() != kCheckpointVersion)
        throw std::invalid_argument("checkpoint: unsupported version " + doc.at("version").dump());
    Checkpoint ckpt;
    ckpt.model = init_model(config_from_json(doc.at("config")), 0);
    const auto& params = doc.at("params");
    std::size_t seen = 0;
    visit_parameters(
        [&](const std::string& name, auto& t) {
            if (!params.contains(name)) throw std::invalid_argument("checkpoint: missing tensor " + name);
            tensor_from_json(params.at(name), t, name);
            ++seen;
        },
        ckpt.model.params);
    if (seen != params.size()) throw std::invalid_argument("checkpoint: unexpected extra tensors");
    const auto& buffers = doc.at("buffers");
    stats_from_json(buffers.at("res.bn1"), ckpt.model.buffers.res_bn1, "res.bn1");
    stats_from_json(buffers.at("res.bn2"), ckpt.model.buffers.res_bn2, "res.bn2");
    stats_from_json(buffers.at("res.shortcut_bn"), ckpt.model.buffers.res_shortcut_bn, "res.shortcut_bn");
    ckpt.normalizer.x_min = vector_from_json(doc.at("normalizer").at("x_min"));
    ckpt.normalizer.x_max = vector_from_json(doc.at("normalizer").at("x_max"));
    ckpt.window_width = doc.at("window_width").get<int>();
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

void check_compatible(const Checkpoint& ckpt, const WindowedDataset& ds) {
    if (ckpt.window_width != ds.width || ckpt.model.config.window_width != ds.width)
        throw std::invalid_argument("incompatible checkpoint: window width " + std::to_string(ckpt.window_width) +
                                    " vs dataset " + std::to_string(ds.width));
    if (ckpt.model.config.n_vars != static_cast<int>(ds.stats.x_min.size()))
        throw std::invalid_argument("incompatible checkpoint: variable count differs from the dataset");
    if (ckpt.normalizer.x_min != ds.stats.x_min || ckpt.normalizer.x_max != ds.stats.x_max)
        throw std::invalid_argument("incompatible checkpoint: normalizer statistics differ from the dataset");
}

}  // namespace etcn
