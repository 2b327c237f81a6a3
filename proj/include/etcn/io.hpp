#pragma once

#include "etcn/data_pipeline.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace etcn {

/// Shortest round-trip decimal form.
std::string format_double(double x);

/// Parsed `key = value` text. '#' starts a comment; blank lines are ignored.
class KeyValueConfig {
public:
    static KeyValueConfig parse(std::istream& in, const std::string& source = "<config>");
    static KeyValueConfig load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    std::string get(const std::string& key, const std::string& fallback) const;
    int get_int(const std::string& key, int fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    std::vector<std::string> get_list(const std::string& key) const;
    std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;
    /// Keys present in the file but not in `known`.
    std::vector<std::string> unknown_keys(std::span<const std::string> known) const;
    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
    std::string source_;
};

/// Restricts generation to the named classes ("NO" selects the steady runs).
void select_classes(GeneratorConfig& config, const std::vector<std::string>& names);
/// Keys: classes, severities, severity_min, severity_max, repetitions,
/// steady_runs, n_vars, n_steps, onset_step, seed.
GeneratorConfig generator_config_from(const KeyValueConfig& kv);
void write_generator_config(std::ostream& out, const GeneratorConfig& config);

/// Writes `data` to `path` through a temporary file and a rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& data);
std::string read_file(const std::filesystem::path& path);
std::uint64_t fnv1a64(std::string_view bytes);

// Scenario CSV: header `t,var01..varNN,label`, one row per sample.
void write_scenario_csv(std::ostream& out, const TimeSeries& ts);
TimeSeries read_scenario_csv(std::istream& in, const std::string& source = "<csv>");

struct ScenarioIndexEntry {
    std::string file;
    ScenarioSpec spec;
};

// index.csv next to the scenario files: file,class_id,class,severity,onset_step,seed
void write_scenario_index(std::ostream& out, std::span<const ScenarioIndexEntry> entries);
std::vector<ScenarioIndexEntry> read_scenario_index(std::istream& in);

/// Loads every scenario listed in dir/index.csv, in index order.
std::vector<TimeSeries> load_scenarios(const std::filesystem::path& dir);

// Windowed dataset container:
//   bytes 0..7   magic "ETCNDS01"
//   bytes 8..15  little-endian u64 length L of the JSON manifest
//   L bytes      manifest (width, step, normalizer stats, series shapes,
//                split sizes, preprocessing parameters)
//   then, per series: labels as i32[n_steps], values as f64[n_vars*n_steps]
//   (column-major: variable fastest), then the train / validation / test
//   membership lists as u32 window indices into the concatenated windows.
void write_dataset(const std::filesystem::path& path, const WindowedDataset& ds, const std::string& extra_manifest_json);
WindowedDataset read_dataset(const std::filesystem::path& path);
/// Manifest JSON of a dataset file.
std::string read_dataset_manifest(const std::filesystem::path& path);

/// Window indices of the split members, recovered from a dataset.
SplitIndices membership_of(const WindowedDataset& ds);

void write_window_statistics_csv(std::ostream& out, const WindowStatistics& stats);

}  // namespace etcn
