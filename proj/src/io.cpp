#include "etcn/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace etcn {

using nlohmann::json;

std::string format_double(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

double parse_double(const std::string& s, const std::string& what) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw std::invalid_argument(what + ": cannot parse number '" + s + "'");
    return v;
}

long long parse_integer(const std::string& s, const std::string& what) {
    long long v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw std::invalid_argument(what + ": cannot parse integer '" + s + "'");
    return v;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::istream& in, const std::string& source) {
    KeyValueConfig kv;
    kv.source_ = source;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(source + ":" + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(std::string_view(t).substr(0, eq));
        if (key.empty()) throw std::invalid_argument(source + ":" + std::to_string(line_no) + ": empty key");
        kv.values_[key] = trim(std::string_view(t).substr(eq + 1));
    }
    return kv;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    return parse(in, path.string());
}

std::string KeyValueConfig::get(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
    return has(key) ? static_cast<int>(parse_integer(values_.at(key), source_ + ": " + key)) : fallback;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
    return has(key) ? parse_double(values_.at(key), source_ + ": " + key) : fallback;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto& v = values_.at(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw std::invalid_argument(source_ + ": " + key + ": expected a boolean, got '" + v + "'");
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const auto& s = values_.at(key);
    std::uint64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw std::invalid_argument(source_ + ": " + key + ": cannot parse unsigned integer '" + s + "'");
    return v;
}

std::vector<std::string> KeyValueConfig::get_list(const std::string& key) const {
    if (!has(key) || values_.at(key).empty()) return {};
    return split(values_.at(key), ',');
}

std::vector<int> KeyValueConfig::get_int_list(const std::string& key, const std::vector<int>& fallback) const {
    if (!has(key)) return fallback;
    std::vector<int> out;
    for (const auto& item : get_list(key)) out.push_back(static_cast<int>(parse_integer(item, source_ + ": " + key)));
    return out;
}

std::vector<std::string> KeyValueConfig::unknown_keys(std::span<const std::string> known) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
        if (std::find(known.begin(), known.end(), k) == known.end()) out.push_back(k);
    return out;
}

void select_classes(GeneratorConfig& c, const std::vector<std::string>& names) {
    if (names.empty()) throw std::invalid_argument("class list is empty");
    c.accident_classes.clear();
    bool steady = false;
    for (const auto& name : names) {
        const FaultClass fc = parse_class(name);
        if (fc == FaultClass::Normal) steady = true;
        else if (std::find(c.accident_classes.begin(), c.accident_classes.end(), fc) == c.accident_classes.end())
            c.accident_classes.push_back(fc);
    }
    if (!steady) c.steady_runs = 0;
    else if (c.steady_runs == 0) c.steady_runs = GeneratorConfig{}.steady_runs;
}

GeneratorConfig generator_config_from(const KeyValueConfig& kv) {
    static const std::vector<std::string> known{"classes",      "severities",  "severity_min", "severity_max",
                                                "repetitions",  "steady_runs", "n_vars",       "n_steps",
                                                "onset_step",   "seed"};
    if (auto extra = kv.unknown_keys(known); !extra.empty())
        throw std::invalid_argument("generator config: unknown key '" + extra.front() + "'");
    GeneratorConfig c;
    if (kv.has("classes")) select_classes(c, kv.get_list("classes"));
    c.n_severities = kv.get_int("severities", c.n_severities);
    c.severity_min = kv.get_double("severity_min", c.severity_min);
    c.severity_max = kv.get_double("severity_max", c.severity_max);
    c.repetitions = kv.get_int("repetitions", c.repetitions);
    c.steady_runs = kv.get_int("steady_runs", c.steady_runs);
    c.n_vars = kv.get_int("n_vars", c.n_vars);
    c.n_steps = kv.get_int("n_steps", c.n_steps);
    c.onset_step = kv.get_int("onset_step", c.onset_step);
    c.seed = kv.get_u64("seed", c.seed);
    return c;
}

void write_generator_config(std::ostream& out, const GeneratorConfig& c) {
    out << "classes = ";
    std::vector<std::string_view> names;
    if (c.steady_runs > 0) names.push_back(class_name(FaultClass::Normal));
    for (auto fc : c.accident_classes) names.push_back(class_name(fc));
    for (std::size_t i = 0; i < names.size(); ++i) out << (i ? "," : "") << names[i];
    out << "\nseverities = " << c.n_severities << "\nseverity_min = " << format_double(c.severity_min)
        << "\nseverity_max = " << format_double(c.severity_max) << "\nrepetitions = " << c.repetitions
        << "\nsteady_runs = " << c.steady_runs << "\nn_vars = " << c.n_vars << "\nn_steps = " << c.n_steps
        << "\nonset_step = " << c.onset_step << "\nseed = " << c.seed << '\n';
}

void write_file_atomic(const std::filesystem::path& path, const std::string& data) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {
std::string var_column(int v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "var%02d", v + 1);
    return buf;
}
}  // namespace

void write_scenario_csv(std::ostream& out, const TimeSeries& ts) {
    out << 't';
    for (int v = 0; v < ts.n_vars(); ++v) out << ',' << var_column(v);
    out << ",label\n";
    for (int t = 0; t < ts.n_steps(); ++t) {
        out << t;
        for (int v = 0; v < ts.n_vars(); ++v) out << ',' << format_double(ts.values(v, t));
        out << ',' << ts.labels[static_cast<std::size_t>(t)] << '\n';
    }
}

TimeSeries read_scenario_csv(std::istream& in, const std::string& source) {
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument(source + ": empty scenario file");
    const auto header = split(line, ',');
    if (header.size() < 3 || header.front() != "t" || header.back() != "label")
        throw std::invalid_argument(source + ": header must be t,var01..,label");
    const int n_vars = static_cast<int>(header.size()) - 2;
    for (int v = 0; v < n_vars; ++v)
        if (header[static_cast<std::size_t>(v + 1)] != var_column(v))
            throw std::invalid_argument(source + ": unexpected column '" + header[static_cast<std::size_t>(v + 1)] + "'");
    std::vector<std::vector<double>> cols;
    std::vector<int> labels;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        const auto cells = split(line, ',');
        if (cells.size() != header.size())
            throw std::invalid_argument(source + ":" + std::to_string(row) + ": wrong number of columns");
        std::vector<double> col(static_cast<std::size_t>(n_vars));
        for (int v = 0; v < n_vars; ++v) col[static_cast<std::size_t>(v)] = parse_double(cells[static_cast<std::size_t>(v + 1)], source);
        cols.push_back(std::move(col));
        labels.push_back(static_cast<int>(parse_integer(cells.back(), source)));
    }
    TimeSeries ts;
    ts.values.resize(n_vars, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t t = 0; t < cols.size(); ++t)
        for (int v = 0; v < n_vars; ++v) ts.values(v, static_cast<Eigen::Index>(t)) = cols[t][static_cast<std::size_t>(v)];
    ts.labels = std::move(labels);
    if (!ts.values.allFinite()) throw std::invalid_argument(source + ": non-finite value");
    return ts;
}

void write_scenario_index(std::ostream& out, std::span<const ScenarioIndexEntry> entries) {
    out << "file,class_id,class,severity,onset_step,seed\n";
    for (const auto& e : entries) {
        out << e.file << ',' << static_cast<int>(e.spec.fault) << ',' << class_name(e.spec.fault) << ','
            << format_double(e.spec.severity) << ',' << e.spec.onset_step << ',' << e.spec.seed << '\n';
    }
}

std::vector<ScenarioIndexEntry> read_scenario_index(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || trim(line) != "file,class_id,class,severity,onset_step,seed")
        throw std::invalid_argument("index.csv: unexpected header");
    std::vector<ScenarioIndexEntry> out;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto cells = split(line, ',');
        if (cells.size() != 6) throw std::invalid_argument("index.csv: malformed row '" + line + "'");
        ScenarioIndexEntry e;
        e.file = cells[0];
        e.spec.fault = parse_class(cells[1]);
        e.spec.severity = parse_double(cells[3], "index.csv");
        e.spec.onset_step = static_cast<int>(parse_integer(cells[4], "index.csv"));
        std::from_chars(cells[5].data(), cells[5].data() + cells[5].size(), e.spec.seed);
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<TimeSeries> load_scenarios(const std::filesystem::path& dir) {
    std::ifstream idx(dir / "index.csv");
    if (!idx) throw std::runtime_error("missing " + (dir / "index.csv").string());
    const auto entries = read_scenario_index(idx);
    if (entries.empty()) throw std::invalid_argument("index.csv lists no scenarios");
    std::vector<TimeSeries> out;
    for (const auto& e : entries) {
        std::ifstream in(dir / e.file);
        if (!in) throw std::runtime_error("missing scenario file " + (dir / e.file).string());
        auto ts = read_scenario_csv(in, e.file);
        ts.scenario = e.spec;
        out.push_back(std::move(ts));
    }
    return out;
}

// ---------------------------------------------------------------- dataset

namespace {

constexpr char kDatasetMagic[8] = {'E', 'T', 'C', 'N', 'D', 'S', '0', '1'};

template <class T>
void put(std::string& buf, const T& v) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    buf.append(bytes, sizeof(T));
}

template <class T>
T get(const std::string& buf, std::size_t& pos) {
    if (pos + sizeof(T) > buf.size()) throw std::invalid_argument("dataset file truncated");
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

std::vector<std::size_t> window_offsets(const std::vector<TimeSeries>& series, int width, int step) {
    std::vector<std::size_t> offsets(series.size() + 1, 0);
    for (std::size_t s = 0; s < series.size(); ++s)
        offsets[s + 1] = offsets[s] + static_cast<std::size_t>(window_count(series[s].n_steps(), width, step));
    return offsets;
}

}  // namespace

SplitIndices membership_of(const WindowedDataset& ds) {
    const auto offsets = window_offsets(*ds.series, ds.width, ds.step);
    auto indices = [&](const SampleSet& set) {
        std::vector<std::size_t> out;
        out.reserve(set.size());
        for (const auto& r : set.refs())
            out.push_back(offsets[static_cast<std::size_t>(r.series)] + static_cast<std::size_t>(r.start / ds.step));
        return out;
    };
    return {indices(ds.train), indices(ds.validation), indices(ds.test)};
}

void write_dataset(const std::filesystem::path& path, const WindowedDataset& ds, const std::string& extra_manifest_json) {
    json manifest;
    manifest["format"] = "etcn-windowed-dataset";
    manifest["version"] = 1;
    manifest["width"] = ds.width;
    manifest["step"] = ds.step;
    manifest["normalizer"] = {{"x_min", std::vector<double>(ds.stats.x_min.data(), ds.stats.x_min.data() + ds.stats.x_min.size())},
                              {"x_max", std::vector<double>(ds.stats.x_max.data(), ds.stats.x_max.data() + ds.stats.x_max.size())}};
    json series = json::array();
    for (const auto& ts : *ds.series) {
        series.push_back({{"n_vars", ts.n_vars()},
                          {"n_steps", ts.n_steps()},
                          {"class_id", static_cast<int>(ts.scenario.fault)},
                          {"severity", ts.scenario.severity},
                          {"onset_step", ts.scenario.onset_step},
                          {"seed", ts.scenario.seed}});
    }
    manifest["series"] = std::move(series);
    manifest["split"] = {{"train", ds.train.size()}, {"validation", ds.validation.size()}, {"test", ds.test.size()}};
    if (!extra_manifest_json.empty()) manifest["preprocess"] = json::parse(extra_manifest_json);

    const std::string header = manifest.dump(2);
    std::string buf(kDatasetMagic, sizeof(kDatasetMagic));
    put<std::uint64_t>(buf, header.size());
    buf += header;
    for (const auto& ts : *ds.series) {
        for (int l : ts.labels) put<std::int32_t>(buf, l);
        buf.append(reinterpret_cast<const char*>(ts.values.data()), static_cast<std::size_t>(ts.values.size()) * sizeof(double));
    }
    const auto members = membership_of(ds);
    for (const auto* list : {&members.train, &members.validation, &members.test})
        for (auto i : *list) put<std::uint32_t>(buf, static_cast<std::uint32_t>(i));
    write_file_atomic(path, buf);
}

std::string read_dataset_manifest(const std::filesystem::path& path) {
    const std::string buf = read_file(path);
    if (buf.size() < 16 || std::memcmp(buf.data(), kDatasetMagic, sizeof(kDatasetMagic)) != 0)
        throw std::invalid_argument(path.string() + ": not an ETCN dataset file");
    std::size_t pos = 8;
    const auto len = get<std::uint64_t>(buf, pos);
    if (pos + len > buf.size()) throw std::invalid_argument("dataset file truncated");
    return buf.substr(pos, len);
}

WindowedDataset read_dataset(const std::filesystem::path& path) {
    const std::string buf = read_file(path);
    if (buf.size() < 16 || std::memcmp(buf.data(), kDatasetMagic, sizeof(kDatasetMagic)) != 0)
        throw std::invalid_argument(path.string() + ": not an ETCN dataset file");
    std::size_t pos = 8;
    const auto len = get<std::uint64_t>(buf, pos);
    if (pos + len > buf.size()) throw std::invalid_argument("dataset file truncated");
    const json manifest = json::parse(buf.substr(pos, len));
    pos += len;
    if (manifest.at("version").get<int>() != 1) throw std::invalid_argument("unsupported dataset version");

    const int width = manifest.at("width").get<int>();
    const int step = manifest.at("step").get<int>();
    NormalizerStats stats;
    const auto mins = manifest.at("normalizer").at("x_min").get<std::vector<double>>();
    const auto maxs = manifest.at("normalizer").at("x_max").get<std::vector<double>>();
    stats.x_min = Eigen::Map<const Vector>(mins.data(), static_cast<Eigen::Index>(mins.size()));
    stats.x_max = Eigen::Map<const Vector>(maxs.data(), static_cast<Eigen::Index>(maxs.size()));

    std::vector<TimeSeries> series;
    for (const auto& meta : manifest.at("series")) {
        TimeSeries ts;
        const int n_vars = meta.at("n_vars").get<int>();
        const int n_steps = meta.at("n_steps").get<int>();
        ts.scenario.fault = static_cast<FaultClass>(meta.at("class_id").get<int>());
        ts.scenario.severity = meta.at("severity").get<double>();
        ts.scenario.onset_step = meta.at("onset_step").get<int>();
        ts.scenario.seed = meta.at("seed").get<std::uint64_t>();
        ts.labels.resize(static_cast<std::size_t>(n_steps));
        for (auto& l : ts.labels) l = get<std::int32_t>(buf, pos);
        ts.values.resize(n_vars, n_steps);
        const std::size_t bytes = static_cast<std::size_t>(ts.values.size()) * sizeof(double);
        if (pos + bytes > buf.size()) throw std::invalid_argument("dataset file truncated");
        std::memcpy(ts.values.data(), buf.data() + pos, bytes);
        pos += bytes;
        series.push_back(std::move(ts));
    }
    const auto& sizes = manifest.at("split");
    SplitIndices members;
    auto read_list = [&](std::vector<std::size_t>& list, std::size_t n) {
        list.resize(n);
        for (auto& i : list) i = get<std::uint32_t>(buf, pos);
    };
    read_list(members.train, sizes.at("train").get<std::size_t>());
    read_list(members.validation, sizes.at("validation").get<std::size_t>());
    read_list(members.test, sizes.at("test").get<std::size_t>());
    if (pos != buf.size()) throw std::invalid_argument("dataset file has trailing bytes");
    return assemble_dataset(std::move(series), std::move(stats), width, step, members);
}

void write_window_statistics_csv(std::ostream& out, const WindowStatistics& ws) {
    out << "end_time";
    for (int v : ws.variables) out << ',' << var_column(v) << "_mean," << var_column(v) << "_variance," << var_column(v) << "_std";
    out << '\n';
    for (std::size_t j = 0; j < ws.end_time.size(); ++j) {
        out << ws.end_time[j];
        for (std::size_t k = 0; k < ws.variables.size(); ++k) {
            const auto r = static_cast<Eigen::Index>(k);
            const auto c = static_cast<Eigen::Index>(j);
            out << ',' << format_double(ws.mean(r, c)) << ',' << format_double(ws.variance(r, c)) << ','
                << format_double(ws.stddev(r, c));
        }
        out << '\n';
    }
}

}  // namespace etcn
