#include "etcn/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace etcn {

namespace {

struct VariableTemplate {
    std::string_view description;
    double nominal;
};

constexpr std::array<VariableTemplate, kDefaultVars> kVariables{{
    {"1#Hot-leg temperature (C)", 327.0},
    {"2#Hot-leg temperature (C)", 327.0},
    {"3#Hot-leg temperature (C)", 327.0},
    {"1#Cold-leg temperature (C)", 292.0},
    {"2#Cold-leg temperature (C)", 292.0},
    {"3#Cold-leg temperature (C)", 292.0},
    {"1#Coolant flow rate (t/h)", 22000.0},
    {"2#Coolant flow rate (t/h)", 22000.0},
    {"3#Coolant flow rate (t/h)", 22000.0},
    {"1#SG steam flow rate (t/h)", 1940.0},
    {"2#SG steam flow rate (t/h)", 1940.0},
    {"3#SG steam flow rate (t/h)", 1940.0},
    {"1#SG pressure (MPa)", 6.7},
    {"2#SG pressure (MPa)", 6.7},
    {"3#SG pressure (MPa)", 6.7},
    {"1#SG level wide range (m)", 12.5},
    {"2#SG level wide range (m)", 12.5},
    {"3#SG level wide range (m)", 12.5},
    {"1#SG level narrow range (m)", 1.2},
    {"2#SG level narrow range (m)", 1.2},
    {"3#SG level narrow range (m)", 1.2},
    {"Total power (MW)", 2895.0},
    {"Reactor operating pressure (MPa)", 15.5},
    {"Reactor outlet temperature (C)", 327.0},
    {"Pressurizer pressure (MPa)", 15.5},
    {"Pressurizer level (m)", 6.0},
}};

// Fractional change of each variable at full severity (0.5). Loop 1 carries
// the break; loops 2 and 3 respond weakly.
using Response = std::array<double, kDefaultVars>;

constexpr Response kLocaResponse{
    -0.050, -0.045, -0.045,  // hot leg
    -0.030, -0.027, -0.027,  // cold leg
    -0.060, -0.020, -0.020,  // coolant flow
    -0.150, -0.120, -0.120,  // SG steam flow
    +0.040, +0.030, +0.030,  // SG pressure
    -0.050, -0.040, -0.040,  // SG WR level
    -0.080, -0.060, -0.060,  // SG NR level
    -0.250,                  // power
    -0.330,                  // reactor pressure
    -0.050,                  // outlet temperature
    -0.350,                  // pressurizer pressure
    -0.600,                  // pressurizer level
};

constexpr Response kMslbResponse{
    -0.040, -0.015, -0.015,
    -0.080, -0.030, -0.030,
    +0.010, +0.005, +0.005,
    +0.800, -0.100, -0.100,
    -0.350, -0.080, -0.080,
    -0.300, -0.050, -0.050,
    -0.500, -0.080, -0.080,
    +0.060,
    -0.110,
    -0.040,
    -0.120,
    -0.200,
};

constexpr Response kSgtrResponse{
    -0.010, -0.005, -0.005,
    -0.010, -0.005, -0.005,
    -0.005, -0.002, -0.002,
    +0.030, +0.005, +0.005,
    +0.030, +0.005, +0.005,
    +0.250, +0.020, +0.020,
    +0.500, +0.030, +0.030,
    -0.050,
    -0.140,
    -0.010,
    -0.150,
    -0.350,
};

// Time constants (s) of the post-onset exponential approach.
constexpr double kLocaTau = 90.0;
constexpr double kMslbTau = 60.0;
constexpr double kSgtrTau = 150.0;

// Stationary std of the steady-state wander, as a fraction of nominal.
constexpr double kWanderFraction = 0.001;
constexpr double kWanderRho = 0.95;

const Response* response_for(FaultClass c) {
    switch (c) {
        case FaultClass::Loca: return &kLocaResponse;
        case FaultClass::Mslb: return &kMslbResponse;
        case FaultClass::Sgtr: return &kSgtrResponse;
        case FaultClass::Normal: break;
    }
    return nullptr;
}

double tau_for(FaultClass c) {
    switch (c) {
        case FaultClass::Loca: return kLocaTau;
        case FaultClass::Mslb: return kMslbTau;
        case FaultClass::Sgtr: return kSgtrTau;
        case FaultClass::Normal: break;
    }
    return 1.0;
}

}  // namespace

double nominal_value(int var) { return kVariables[static_cast<std::size_t>(var % kDefaultVars)].nominal; }

std::string_view variable_description(int var) {
    return kVariables[static_cast<std::size_t>(var % kDefaultVars)].description;
}

TimeSeries generate_scenario(const ScenarioSpec& spec, int n_vars, int n_steps) {
    if (n_vars <= 0 || n_steps <= 0) throw std::invalid_argument("generate_scenario: non-positive dimensions");
    if (spec.onset_step < 0 || spec.onset_step >= n_steps)
        throw std::invalid_argument("generate_scenario: onset_step must lie in [0, n_steps)");
    const bool faulted = spec.fault != FaultClass::Normal;
    if (faulted && !(spec.severity >= kSeverityMin - 1e-12 && spec.severity <= kSeverityMax + 1e-12))
        throw std::invalid_argument("generate_scenario: severity outside [0.025, 0.5]");

    TimeSeries ts;
    ts.scenario = spec;
    ts.values.resize(n_vars, n_steps);
    ts.labels.assign(static_cast<std::size_t>(n_steps), 0);

    Rng rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double innovation = std::sqrt(1.0 - kWanderRho * kWanderRho);

    const Response* response = response_for(spec.fault);
    // Larger breaks develop faster.
    const double tau = tau_for(spec.fault) * (1.5 - spec.severity);
    const double amplitude = faulted ? spec.severity / kSeverityMax : 0.0;

    for (int v = 0; v < n_vars; ++v) {
        const double nominal = nominal_value(v);
        const double wander_sd = kWanderFraction * std::abs(nominal);
        double wander = wander_sd * gauss(rng);
        const double offset =
            response ? (*response)[static_cast<std::size_t>(v % kDefaultVars)] * amplitude * nominal : 0.0;
        for (int t = 0; t < n_steps; ++t) {
            if (t > 0) wander = kWanderRho * wander + wander_sd * innovation * gauss(rng);
            double x = nominal + wander;
            if (faulted && t >= spec.onset_step) {
                const double elapsed = static_cast<double>(t - spec.onset_step + 1);
                x += offset * (1.0 - std::exp(-elapsed / tau));
            }
            ts.values(v, t) = x;
        }
    }
    if (faulted) {
        std::fill(ts.labels.begin() + spec.onset_step, ts.labels.end(), static_cast<int>(spec.fault));
    }
    return ts;
}

std::vector<double> severity_grid(const GeneratorConfig& config) {
    if (config.n_severities <= 0) return {};
    std::vector<double> grid(static_cast<std::size_t>(config.n_severities));
    if (config.n_severities == 1) {
        grid[0] = config.severity_min;
        return grid;
    }
    const double span = config.severity_max - config.severity_min;
    for (int i = 0; i < config.n_severities; ++i) {
        grid[static_cast<std::size_t>(i)] =
            config.severity_min + span * static_cast<double>(i) / static_cast<double>(config.n_severities - 1);
    }
    return grid;
}

std::vector<ScenarioSpec> enumerate_scenarios(const GeneratorConfig& config) {
    const bool any_accidents =
        !config.accident_classes.empty() && config.n_severities > 0 && config.repetitions > 0;
    if (!any_accidents && config.steady_runs <= 0)
        throw std::invalid_argument("generate_dataset: configuration enumerates no scenarios");
    if (config.severity_min < kSeverityMin - 1e-12 || config.severity_max > kSeverityMax + 1e-12 ||
        config.severity_min > config.severity_max)
        throw std::invalid_argument("generate_dataset: severity range must lie inside [0.025, 0.5]");

    std::vector<ScenarioSpec> specs;
    std::uint64_t index = 0;
    if (any_accidents) {
        const auto grid = severity_grid(config);
        for (FaultClass c : config.accident_classes) {
            if (c == FaultClass::Normal) continue;
            for (double severity : grid) {
                for (int rep = 0; rep < config.repetitions; ++rep) {
                    specs.push_back({c, severity, config.onset_step, derive_seed(config.seed, "scenario", index++)});
                }
            }
        }
    }
    for (int run = 0; run < config.steady_runs; ++run) {
        specs.push_back({FaultClass::Normal, 0.0, config.onset_step, derive_seed(config.seed, "scenario", index++)});
    }
    return specs;
}

std::vector<TimeSeries> generate_dataset(const GeneratorConfig& config) {
    const auto specs = enumerate_scenarios(config);
    std::vector<TimeSeries> out(specs.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(specs.size()); ++i) {
        out[static_cast<std::size_t>(i)] =
            generate_scenario(specs[static_cast<std::size_t>(i)], config.n_vars, config.n_steps);
    }
    return out;
}

TimeSeries add_gaussian_noise(const TimeSeries& ts, double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0)) throw std::invalid_argument("add_gaussian_noise: fraction must be >= 0");
    TimeSeries out = ts;
    if (fraction == 0.0) return out;
    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double n = static_cast<double>(ts.n_steps());
    for (int v = 0; v < ts.n_vars(); ++v) {
        const auto row = ts.values.row(v);
        const double mean = row.mean();
        const double var = (row.array() - mean).square().sum() / n;
        const double sd = fraction * std::sqrt(var);
        if (sd == 0.0) continue;
        for (int t = 0; t < ts.n_steps(); ++t) out.values(v, t) += sd * gauss(rng);
    }
    return out;
}

NormalizerStats fit_normalizer(std::span<const TimeSeries> train_series) {
    if (train_series.empty()) throw std::invalid_argument("fit_normalizer: empty input");
    const int n_vars = train_series.front().n_vars();
    NormalizerStats stats;
    stats.x_min = Vector::Constant(n_vars, std::numeric_limits<double>::infinity());
    stats.x_max = Vector::Constant(n_vars, -std::numeric_limits<double>::infinity());
    for (const auto& ts : train_series) {
        if (ts.n_vars() != n_vars) throw std::invalid_argument("fit_normalizer: variable count mismatch");
        if (ts.n_steps() == 0) continue;
        stats.x_min = stats.x_min.cwiseMin(ts.values.rowwise().minCoeff());
        stats.x_max = stats.x_max.cwiseMax(ts.values.rowwise().maxCoeff());
    }
    if (!stats.x_min.allFinite()) throw std::invalid_argument("fit_normalizer: no samples");
    return stats;
}

NormalizerStats fit_normalizer(std::span<const TimeSeries> series, std::span<const WindowRef> windows, int width) {
    if (series.empty() || windows.empty()) throw std::invalid_argument("fit_normalizer: empty input");
    const int n_vars = series.front().n_vars();
    // Mark covered columns first; overlapping windows would otherwise be
    // rescanned width times.
    std::vector<std::vector<char>> covered(series.size());
    for (std::size_t s = 0; s < series.size(); ++s)
        covered[s].assign(static_cast<std::size_t>(series[s].n_steps()), 0);
    for (const auto& w : windows) {
        auto& mask = covered[static_cast<std::size_t>(w.series)];
        std::fill(mask.begin() + w.start, mask.begin() + w.start + width, 1);
    }
    NormalizerStats stats;
    stats.x_min = Vector::Constant(n_vars, std::numeric_limits<double>::infinity());
    stats.x_max = Vector::Constant(n_vars, -std::numeric_limits<double>::infinity());
    for (std::size_t s = 0; s < series.size(); ++s) {
        for (int t = 0; t < series[s].n_steps(); ++t) {
            if (!covered[s][static_cast<std::size_t>(t)]) continue;
            stats.x_min = stats.x_min.cwiseMin(series[s].values.col(t));
            stats.x_max = stats.x_max.cwiseMax(series[s].values.col(t));
        }
    }
    return stats;
}

TimeSeries normalize(const TimeSeries& ts, const NormalizerStats& stats) {
    if (stats.x_min.size() != ts.n_vars() || stats.x_max.size() != ts.n_vars())
        throw std::invalid_argument("normalize: variable count mismatch with normalizer stats");
    TimeSeries out = ts;
    for (int v = 0; v < ts.n_vars(); ++v) {
        const double lo = stats.x_min(v);
        const double range = stats.x_max(v) - lo;
        if (range == 0.0) {
            out.values.row(v).setConstant(0.5);
        } else {
            out.values.row(v) = (ts.values.row(v).array() - lo) / range;
        }
    }
    return out;
}

int window_count(int n_steps, int width, int step) {
    if (width < 1 || step < 1) throw std::invalid_argument("window_count: width and step must be >= 1");
    if (width > n_steps) throw std::invalid_argument("window width exceeds series length");
    return (n_steps - width) / step + 1;
}

std::vector<WindowedSample> slide_windows(const TimeSeries& ts, int width, int step) {
    const int count = window_count(ts.n_steps(), width, step);
    std::vector<WindowedSample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int j = 0; j < count; ++j) {
        const int start = j * step;
        const int end = start + width - 1;
        out.push_back({ts.values.middleCols(start, width), ts.labels[static_cast<std::size_t>(end)], end});
    }
    return out;
}

std::vector<WindowRef> window_refs(const TimeSeries& ts, int series_index, int width, int step) {
    const int count = window_count(ts.n_steps(), width, step);
    std::vector<WindowRef> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int j = 0; j < count; ++j) {
        const int start = j * step;
        out.push_back({series_index, start, ts.labels[static_cast<std::size_t>(start + width - 1)]});
    }
    return out;
}

SplitIndices split_indices(std::span<const int> labels, SplitRatios ratios, std::uint64_t seed) {
    if (labels.empty()) throw std::invalid_argument("split_dataset: no samples");
    if (ratios.train < 0 || ratios.validation < 0 || ratios.test < 0 ||
        ratios.train + ratios.validation + ratios.test <= 0)
        throw std::invalid_argument("split_dataset: invalid ratios");
    const double total_ratio = ratios.train + ratios.validation + ratios.test;
    const double f_train = ratios.train / total_ratio;
    const double f_train_val = (ratios.train + ratios.validation) / total_ratio;

    const int max_label = *std::max_element(labels.begin(), labels.end());
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label + 1));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0) throw std::invalid_argument("split_dataset: negative label");
        by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    }

    // Boundaries are rounded on cumulative counts so both the per-class and
    // the overall sizes stay within one sample of the requested ratio.
    SplitIndices out;
    std::size_t cumulative = 0;
    long prev_b1 = 0;
    long prev_b2 = 0;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& idx = by_class[c];
        if (idx.empty()) continue;
        if (idx.size() < 5)
            warn("split_dataset: class " + std::to_string(c) + " has only " + std::to_string(idx.size()) +
                 " samples; ratio is best effort");
        Rng rng(derive_seed(seed, "split", c));
        std::shuffle(idx.begin(), idx.end(), rng);

        cumulative += idx.size();
        const long b1 = std::lround(f_train * static_cast<double>(cumulative));
        const long b2 = std::lround(f_train_val * static_cast<double>(cumulative));
        const auto n = static_cast<long>(idx.size());
        const long n_train = std::clamp(b1 - prev_b1, 0L, n);
        const long n_train_val = std::clamp(b2 - prev_b2, n_train, n);
        prev_b1 = b1;
        prev_b2 = b2;

        out.train.insert(out.train.end(), idx.begin(), idx.begin() + n_train);
        out.validation.insert(out.validation.end(), idx.begin() + n_train, idx.begin() + n_train_val);
        out.test.insert(out.test.end(), idx.begin() + n_train_val, idx.end());
    }
    return out;
}

DatasetSplit split_dataset(std::vector<WindowedSample> samples, SplitRatios ratios, std::uint64_t seed) {
    std::vector<int> labels(samples.size());
    std::transform(samples.begin(), samples.end(), labels.begin(), [](const auto& s) { return s.label; });
    const auto idx = split_indices(labels, ratios, seed);
    DatasetSplit out;
    auto take = [&](const std::vector<std::size_t>& from, std::vector<WindowedSample>& to) {
        to.reserve(from.size());
        for (auto i : from) to.push_back(std::move(samples[i]));
    };
    take(idx.train, out.train);
    take(idx.validation, out.validation);
    take(idx.test, out.test);
    return out;
}

SampleSet::SampleSet(std::shared_ptr<const std::vector<TimeSeries>> series, int width, std::vector<WindowRef> refs)
    : series_(std::move(series)), width_(width), refs_(std::move(refs)) {
    for (const auto& r : refs_) {
        if (r.series < 0 || static_cast<std::size_t>(r.series) >= series_->size() || r.start < 0 ||
            r.start + width_ > (*series_)[static_cast<std::size_t>(r.series)].n_steps())
            throw std::out_of_range("SampleSet: window reference out of range");
    }
}

SampleSet SampleSet::from_samples(std::span<const WindowedSample> samples) {
    if (samples.empty()) return {};
    auto store = std::make_shared<std::vector<TimeSeries>>();
    store->reserve(samples.size());
    std::vector<WindowRef> refs;
    refs.reserve(samples.size());
    const int width = static_cast<int>(samples.front().window.cols());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].window.cols() != width) throw std::invalid_argument("SampleSet: mixed window widths");
        TimeSeries ts;
        ts.values = samples[i].window;
        ts.labels.assign(static_cast<std::size_t>(width), samples[i].label);
        store->push_back(std::move(ts));
        refs.push_back({static_cast<int>(i), 0, samples[i].label});
    }
    return SampleSet(std::move(store), width, std::move(refs));
}

int SampleSet::n_vars() const { return series_ && !series_->empty() ? series_->front().n_vars() : 0; }

WindowedSample SampleSet::materialize(std::size_t i) const {
    return {window(i), refs_[i].label, refs_[i].start + width_ - 1};
}

SampleSet SampleSet::subset(std::span<const std::size_t> indices) const {
    std::vector<WindowRef> refs;
    refs.reserve(indices.size());
    for (auto i : indices) refs.push_back(refs_.at(i));
    return SampleSet(series_, width_, std::move(refs));
}

WindowedDataset assemble_dataset(std::vector<TimeSeries> normalized, NormalizerStats stats, int width, int step,
                                 const SplitIndices& membership) {
    std::vector<WindowRef> all;
    for (std::size_t s = 0; s < normalized.size(); ++s) {
        auto refs = window_refs(normalized[s], static_cast<int>(s), width, step);
        all.insert(all.end(), refs.begin(), refs.end());
    }
    WindowedDataset ds;
    ds.width = width;
    ds.step = step;
    ds.stats = std::move(stats);
    ds.series = std::make_shared<const std::vector<TimeSeries>>(std::move(normalized));
    const SampleSet everything(ds.series, width, std::move(all));
    ds.train = everything.subset(membership.train);
    ds.validation = everything.subset(membership.validation);
    ds.test = everything.subset(membership.test);
    return ds;
}

WindowedDataset prepare_dataset(const std::vector<TimeSeries>& raw, const PreprocessConfig& config) {
    if (raw.empty()) throw std::invalid_argument("prepare_dataset: no series");
    std::vector<TimeSeries> noisy(raw.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(raw.size()); ++i) {
        const auto s = static_cast<std::size_t>(i);
        noisy[s] = add_gaussian_noise(raw[s], config.noise_fraction, derive_seed(config.seed, "noise", s));
    }

    std::vector<WindowRef> all;
    for (std::size_t s = 0; s < noisy.size(); ++s) {
        auto refs = window_refs(noisy[s], static_cast<int>(s), config.width, config.step);
        all.insert(all.end(), refs.begin(), refs.end());
    }
    std::vector<int> labels(all.size());
    std::transform(all.begin(), all.end(), labels.begin(), [](const auto& r) { return r.label; });
    const auto membership = split_indices(labels, config.ratios, config.seed);

    std::vector<WindowRef> train_refs;
    train_refs.reserve(membership.train.size());
    for (auto i : membership.train) train_refs.push_back(all[i]);
    auto stats = fit_normalizer(noisy, train_refs, config.width);

    for (auto& ts : noisy) ts = normalize(ts, stats);
    return assemble_dataset(std::move(noisy), std::move(stats), config.width, config.step, membership);
}

std::vector<WindowStatistics> window_statistics(const TimeSeries& ts, std::span<const int> widths,
                                                std::span<const int> variables) {
    if (widths.empty()) throw std::invalid_argument("window_statistics: no widths");
    std::vector<int> vars(variables.begin(), variables.end());
    if (vars.empty()) {
        vars.resize(static_cast<std::size_t>(ts.n_vars()));
        std::iota(vars.begin(), vars.end(), 0);
    }
    for (int v : vars)
        if (v < 0 || v >= ts.n_vars()) throw std::invalid_argument("window_statistics: invalid variable index");

    std::vector<WindowStatistics> out;
    for (int width : widths) {
        if (width < 1 || width > ts.n_steps()) throw std::invalid_argument("window_statistics: invalid width");
        const int count = ts.n_steps() - width + 1;
        WindowStatistics ws;
        ws.width = width;
        ws.variables = vars;
        ws.end_time.resize(static_cast<std::size_t>(count));
        ws.mean.resize(static_cast<Eigen::Index>(vars.size()), count);
        ws.variance.resizeLike(ws.mean);
        for (int j = 0; j < count; ++j) ws.end_time[static_cast<std::size_t>(j)] = j + width - 1;
        for (std::size_t k = 0; k < vars.size(); ++k) {
            const auto row = ts.values.row(vars[k]);
            for (int j = 0; j < count; ++j) {
                // Shifted by the first sample so constant windows give exactly 0.
                const auto seg = row.segment(j, width);
                const double shift = seg(0);
                const double d_mean = (seg.array() - shift).sum() / width;
                const double d_sq = (seg.array() - shift).square().sum() / width;
                ws.mean(static_cast<Eigen::Index>(k), j) = seg.mean();
                ws.variance(static_cast<Eigen::Index>(k), j) = std::max(0.0, d_sq - d_mean * d_mean);
            }
        }
        ws.stddev = ws.variance.cwiseSqrt();
        out.push_back(std::move(ws));
    }
    return out;
}

}  // namespace etcn
