#pragma once

#include "etcn/data_pipeline.hpp"
#include "etcn/network.hpp"
#include "etcn/training.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace etcn {

enum class DimensionKind { Continuous, IntegerGrid, Categorical };

/// One searchable hyperparameter. Continuous dimensions span
/// [lower, upper] and snap to multiples of `step` counted from `lower`
/// (step 0 leaves them unsnapped). Integer grids and categorical dimensions
/// choose from `options` by uniform bucketing of [0, 1].
struct Dimension {
    std::string name;
    DimensionKind kind = DimensionKind::Continuous;
    double lower = 0.0;
    double upper = 1.0;
    double step = 0.0;
    std::vector<double> options;

    static Dimension continuous(std::string name, double lower, double upper, double step = 0.0);
    static Dimension integer_grid(std::string name, int lower, int upper, int step = 1);
    static Dimension categorical(std::string name, std::vector<double> options);

    /// Number of distinct decoded values (0 for an unsnapped continuous range).
    std::size_t cardinality() const;
};

struct SearchSpace {
    std::vector<Dimension> dimensions;

    std::size_t size() const { return dimensions.size(); }
    /// True when every dimension admits exactly one value.
    bool singleton() const;
};

void validate(const SearchSpace& space);

/// learning_rate [0.000001:0.000001:0.01], kernel_size {3..12},
/// dropout_rate [0.1:0.001:0.5], conv_channels {4,8,16,32,64},
/// batch_size {32,64,128,256}.
SearchSpace default_search_space();

struct Assignment {
    std::vector<std::string> names;
    std::vector<double> values;

    double at(const std::string& name) const;
    bool has(const std::string& name) const;
};

double decode(double unit, const Dimension& dim);
Assignment decode(const std::vector<double>& position, const SearchSpace& space);

/// A unit-interval coordinate that decodes to `value`, if the value is in
/// the dimension's domain.
std::optional<double> encode(double value, const Dimension& dim);

enum class SparrowRole { Producer, Scrounger, DangerAware };

struct Sparrow {
    std::vector<double> position;       // current position, in [0, 1]^d
    double fitness = 0.0;               // fitness of the current position
    std::vector<double> best_position;  // personal best
    double best_fitness = 0.0;
    SparrowRole role = SparrowRole::Scrounger;
    bool failed = false;                // last evaluation threw
};

struct SSAConfig {
    int population = 20;
    int max_iterations = 100;
    double producer_fraction = 0.2;
    double danger_aware_fraction = 0.1;
    double safety_threshold = 0.8;
    std::uint64_t seed = 42;
    int jobs = 1;  // concurrent fitness evaluations
};

void validate(const SSAConfig& config);

/// Higher is better. The seed is unique per evaluation and independent of
/// the evaluation schedule.
using FitnessFn = std::function<double(const Assignment&, std::uint64_t seed)>;

struct IterationRecord {
    int iteration = 0;
    double best_fitness = 0.0;  // best ever up to this iteration
    double mean_fitness = 0.0;  // mean current fitness of the population
    int failures = 0;
};

struct SSAResult {
    Assignment best;
    std::vector<double> best_position;
    double best_fitness = 0.0;
    std::vector<IterationRecord> history;
    std::vector<Sparrow> population;  // final state
    int evaluations = 0;
    int failures = 0;
};

/// Sparrow search maximizing `fitness` over the unit-cube encoding of `space`.
SSAResult optimize(const SearchSpace& space, const FitnessFn& fitness, const SSAConfig& config);

/// -sum x_i^2 over the decoded values.
double negative_sphere(const Assignment& a);
/// Five unsnapped continuous dimensions x1..x5 on [lower, upper].
SearchSpace sphere_space(int dims = 5, double lower = -10.0, double upper = 10.0);

/// Copies recognized assignment entries (learning_rate, kernel_size,
/// dropout_rate, conv_channels, batch_size) into the configs.
void apply_assignment(const Assignment& a, NetworkConfig& net, TrainConfig& train);

struct TuneConfig {
    SSAConfig ssa;
    SearchSpace space = default_search_space();
    NetworkConfig network;  // fixed settings; tuned fields are overwritten
    TrainConfig train;
    bool fitness_on_test = false;
};

struct TuneResult {
    SSAResult search;
    NetworkConfig network;
    TrainConfig train;
};

/// Fitness = accuracy on the validation split (the test split with
/// fitness_on_test) of a model trained with the decoded hyperparameters.
TuneResult tune_etcn(const WindowedDataset& data, const TuneConfig& config);

void write_convergence_csv(std::ostream& out, const std::vector<IterationRecord>& history);
void write_assignment_report(std::ostream& out, const Assignment& a, double fitness);

}  // namespace etcn
