#pragma once

#include "etcn/common.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace etcn {

inline constexpr int kDefaultVars = 26;
inline constexpr int kDefaultSteps = 900;
inline constexpr int kDefaultOnset = 40;
inline constexpr double kSeverityMin = 0.025;
inline constexpr double kSeverityMax = 0.50;

struct ScenarioSpec {
    FaultClass fault = FaultClass::Normal;
    double severity = 0.0;  // rupture size fraction; ignored for Normal
    int onset_step = kDefaultOnset;
    std::uint64_t seed = 0;
};

/// One simulated scenario sampled at 1 Hz.
struct TimeSeries {
    Matrix values;            // n_vars x n_steps
    std::vector<int> labels;  // n_steps
    double sample_period = 1.0;
    ScenarioSpec scenario;

    int n_vars() const { return static_cast<int>(values.rows()); }
    int n_steps() const { return static_cast<int>(values.cols()); }
};

/// Nominal steady-state value of template variable i (engineering units).
double nominal_value(int var);
/// Human-readable description of template variable i.
std::string_view variable_description(int var);

TimeSeries generate_scenario(const ScenarioSpec& spec, int n_vars = kDefaultVars,
                             int n_steps = kDefaultSteps);

struct GeneratorConfig {
    std::vector<FaultClass> accident_classes{FaultClass::Loca, FaultClass::Mslb, FaultClass::Sgtr};
    int n_severities = 20;
    double severity_min = kSeverityMin;
    double severity_max = kSeverityMax;
    int repetitions = 1;
    int steady_runs = 3;
    int n_vars = kDefaultVars;
    int n_steps = kDefaultSteps;
    int onset_step = kDefaultOnset;
    std::uint64_t seed = 42;
};

/// Equally spaced severities in [severity_min, severity_max].
std::vector<double> severity_grid(const GeneratorConfig& config);
/// Scenario enumeration: per accident class, severities x repetitions; then
/// the steady runs. Seeds are derived from config.seed and the position.
std::vector<ScenarioSpec> enumerate_scenarios(const GeneratorConfig& config);
std::vector<TimeSeries> generate_dataset(const GeneratorConfig& config);

/// Adds N(0, (fraction * sigma_i)^2) to variable i, sigma_i being the
/// population standard deviation of that variable over the series.
TimeSeries add_gaussian_noise(const TimeSeries& ts, double fraction, std::uint64_t seed);

struct NormalizerStats {
    Vector x_min;
    Vector x_max;
};

NormalizerStats fit_normalizer(std::span<const TimeSeries> train_series);

/// Min-max scaling per variable. Zero-range variables map to 0.5; values
/// outside the fitted range are not clipped.
TimeSeries normalize(const TimeSeries& ts, const NormalizerStats& stats);

struct WindowedSample {
    Matrix window;  // n_vars x width
    int label = 0;
    int source_time = 0;  // index of the window endpoint in the source series
};

/// Number of windows of `width` at stride `step` over `n_steps` samples.
int window_count(int n_steps, int width, int step);

std::vector<WindowedSample> slide_windows(const TimeSeries& ts, int width, int step = 1);

/// A window addressed by position instead of copied out.
struct WindowRef {
    int series = 0;
    int start = 0;
    int label = 0;
};

std::vector<WindowRef> window_refs(const TimeSeries& ts, int series_index, int width, int step = 1);

/// Fits min/max over every column covered by at least one of `windows`.
NormalizerStats fit_normalizer(std::span<const TimeSeries> series, std::span<const WindowRef> windows,
                               int width);

struct SplitRatios {
    int train = 6;
    int validation = 2;
    int test = 2;
};

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
};

/// Stratified, seeded partition of sample indices by label.
SplitIndices split_indices(std::span<const int> labels, SplitRatios ratios, std::uint64_t seed);

struct DatasetSplit {
    std::vector<WindowedSample> train;
    std::vector<WindowedSample> validation;
    std::vector<WindowedSample> test;
};

DatasetSplit split_dataset(std::vector<WindowedSample> samples, SplitRatios ratios, std::uint64_t seed);

/// Read-only view of windows over a shared series store. Training and
/// evaluation consume this so the tens of thousands of overlapping windows
/// are never materialized.
class SampleSet {
public:
    SampleSet() = default;
    SampleSet(std::shared_ptr<const std::vector<TimeSeries>> series, int width, std::vector<WindowRef> refs);
    static SampleSet from_samples(std::span<const WindowedSample> samples);

    std::size_t size() const { return refs_.size(); }
    bool empty() const { return refs_.empty(); }
    int width() const { return width_; }
    int n_vars() const;
    int label(std::size_t i) const { return refs_[i].label; }
    const WindowRef& ref(std::size_t i) const { return refs_[i]; }
    const std::vector<WindowRef>& refs() const { return refs_; }
    const std::vector<TimeSeries>& series() const { return *series_; }
    std::shared_ptr<const std::vector<TimeSeries>> series_ptr() const { return series_; }

    /// Window i as an n_vars x width block.
    auto window(std::size_t i) const {
        const auto& r = refs_[i];
        return (*series_)[static_cast<std::size_t>(r.series)].values.middleCols(r.start, width_);
    }
    WindowedSample materialize(std::size_t i) const;
    SampleSet subset(std::span<const std::size_t> indices) const;

private:
    std::shared_ptr<const std::vector<TimeSeries>> series_;
    int width_ = 0;
    std::vector<WindowRef> refs_;
};

struct PreprocessConfig {
    int width = 120;
    int step = 1;
    double noise_fraction = 0.05;
    SplitRatios ratios;
    std::uint64_t seed = 42;
};

struct WindowedDataset {
    int width = 0;
    int step = 0;
    NormalizerStats stats;
    std::shared_ptr<const std::vector<TimeSeries>> series;  // noised + normalized
    SampleSet train;
    SampleSet validation;
    SampleSet test;
};

/// noise -> window -> stratified split -> fit normalizer on training
/// windows -> normalize every series.
WindowedDataset prepare_dataset(const std::vector<TimeSeries>& raw, const PreprocessConfig& config);

/// Split membership as index lists into concatenated per-series window lists.
WindowedDataset assemble_dataset(std::vector<TimeSeries> normalized, NormalizerStats stats, int width, int step,
                                 const SplitIndices& membership);

struct WindowStatistics {
    int width = 0;
    std::vector<int> end_time;  // endpoint of each window
    Matrix mean;                // n_selected x n_windows
    Matrix variance;            // population variance
    Matrix stddev;
    std::vector<int> variables;
};

/// Per-window mean / variance / std at stride 1 for each width. An empty
/// `variables` list selects every variable.
std::vector<WindowStatistics> window_statistics(const TimeSeries& ts, std::span<const int> widths,
                                                std::span<const int> variables = {});

}  // namespace etcn
