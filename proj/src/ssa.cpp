#include "etcn/ssa.hpp"

#include "etcn/io.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace etcn {

// ------------------------------------------------------------ dimensions

Dimension Dimension::continuous(std::string name, double lower, double upper, double step) {
    Dimension d;
    d.name = std::move(name);
    d.kind = DimensionKind::Continuous;
    d.lower = lower;
    d.upper = upper;
    d.step = step;
    return d;
}

Dimension Dimension::integer_grid(std::string name, int lower, int upper, int step) {
    if (step < 1) throw std::invalid_argument("integer_grid: step must be >= 1");
    Dimension d;
    d.name = std::move(name);
    d.kind = DimensionKind::IntegerGrid;
    d.lower = lower;
    d.upper = upper;
    d.step = step;
    for (int v = lower; v <= upper; v += step) d.options.push_back(v);
    return d;
}

Dimension Dimension::categorical(std::string name, std::vector<double> options) {
    Dimension d;
    d.name = std::move(name);
    d.kind = DimensionKind::Categorical;
    d.options = std::move(options);
    if (!d.options.empty()) {
        d.lower = *std::min_element(d.options.begin(), d.options.end());
        d.upper = *std::max_element(d.options.begin(), d.options.end());
    }
    return d;
}

namespace {

// Grid arithmetic in integer ticks of `step`, so that values such as
// 106 * 0.000001 come out as the nearest double to the decimal literal.
struct Ticks {
    double scale = 0.0;  // ticks per unit; 0 when 1/step is not an integer
    long long first = 0;
    long long count = 0;  // number of grid intervals
};

Ticks ticks_of(const Dimension& d) {
    Ticks t;
    const double inv = 1.0 / d.step;
    const double rounded = std::round(inv);
    if (rounded >= 1.0 && std::abs(inv - rounded) < 1e-9 * rounded) {
        t.scale = rounded;
        t.first = std::llround(d.lower * t.scale);
        t.count = std::llround(d.upper * t.scale) - t.first;
    } else {
        t.count = std::llround(std::floor((d.upper - d.lower) / d.step + 1e-9));
    }
    return t;
}

double tick_value(const Dimension& d, const Ticks& t, long long k) {
    if (t.scale > 0.0) return static_cast<double>(t.first + k) / t.scale;
    return d.lower + static_cast<double>(k) * d.step;
}

}  // namespace

std::size_t Dimension::cardinality() const {
    if (kind != DimensionKind::Continuous) return options.size();
    if (lower == upper) return 1;
    if (step <= 0.0) return 0;
    return static_cast<std::size_t>(ticks_of(*this).count + 1);
}

bool SearchSpace::singleton() const {
    return std::all_of(dimensions.begin(), dimensions.end(), [](const Dimension& d) { return d.cardinality() == 1; });
}

void validate(const SearchSpace& space) {
    if (space.dimensions.empty()) throw std::invalid_argument("SearchSpace: no dimensions");
    for (const auto& d : space.dimensions) {
        if (d.name.empty()) throw std::invalid_argument("SearchSpace: unnamed dimension");
        if (d.kind == DimensionKind::Continuous) {
            if (!std::isfinite(d.lower) || !std::isfinite(d.upper) || d.lower > d.upper)
                throw std::invalid_argument("SearchSpace: dimension " + d.name + " has an empty range");
            if (d.step < 0.0) throw std::invalid_argument("SearchSpace: dimension " + d.name + " has a negative step");
        } else if (d.options.empty()) {
            throw std::invalid_argument("SearchSpace: dimension " + d.name + " has no options");
        }
    }
}

SearchSpace default_search_space() {
    SearchSpace s;
    s.dimensions.push_back(Dimension::continuous("learning_rate", 0.000001, 0.01, 0.000001));
    s.dimensions.push_back(Dimension::integer_grid("kernel_size", 3, 12));
    s.dimensions.push_back(Dimension::continuous("dropout_rate", 0.1, 0.5, 0.001));
    s.dimensions.push_back(Dimension::categorical("conv_channels", {4, 8, 16, 32, 64}));
    s.dimensions.push_back(Dimension::categorical("batch_size", {32, 64, 128, 256}));
    return s;
}

double Assignment::at(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return values[i];
    throw std::out_of_range("Assignment: no value for " + name);
}

bool Assignment::has(const std::string& name) const {
    return std::find(names.begin(), names.end(), name) != names.end();
}

double decode(double unit, const Dimension& d) {
    const double p = std::clamp(unit, 0.0, 1.0);
    if (d.kind != DimensionKind::Continuous) {
        const auto n = d.options.size();
        const auto idx = std::min(static_cast<std::size_t>(std::floor(p * static_cast<double>(n))), n - 1);
        return d.options[idx];
    }
    if (d.step <= 0.0 || d.lower == d.upper) return d.lower + p * (d.upper - d.lower);
    const Ticks t = ticks_of(d);
    const long long k = std::llround(p * static_cast<double>(t.count));
    return tick_value(d, t, k);
}

Assignment decode(const std::vector<double>& position, const SearchSpace& space) {
    if (position.size() != space.size()) throw std::invalid_argument("decode: position has the wrong dimension");
    Assignment a;
    for (std::size_t i = 0; i < position.size(); ++i) {
        a.names.push_back(space.dimensions[i].name);
        a.values.push_back(decode(position[i], space.dimensions[i]));
    }
    return a;
}

std::optional<double> encode(double value, const Dimension& d) {
    if (d.kind != DimensionKind::Continuous) {
        const auto it = std::find(d.options.begin(), d.options.end(), value);
        if (it == d.options.end()) return std::nullopt;
        const double n = static_cast<double>(d.options.size());
        return (static_cast<double>(it - d.options.begin()) + 0.5) / n;
    }
    if (value < d.lower || value > d.upper) return std::nullopt;
    if (d.lower == d.upper) return 0.0;
    if (d.step <= 0.0) return (value - d.lower) / (d.upper - d.lower);
    const Ticks t = ticks_of(d);
    const long long k = t.scale > 0.0 ? std::llround(value * t.scale) - t.first
                                      : std::llround((value - d.lower) / d.step);
    if (k < 0 || k > t.count || tick_value(d, t, k) != value) return std::nullopt;
    return static_cast<double>(k) / static_cast<double>(t.count);
}

// ------------------------------------------------------------------ SSA

void validate(const SSAConfig& c) {
    if (c.population < 1) throw std::invalid_argument("SSAConfig: population must be >= 1");
    if (c.max_iterations < 1) throw std::invalid_argument("SSAConfig: max_iterations must be >= 1");
    if (!(c.producer_fraction > 0.0 && c.producer_fraction <= 1.0))
        throw std::invalid_argument("SSAConfig: producer_fraction must be in (0, 1]");
    if (!(c.danger_aware_fraction >= 0.0 && c.danger_aware_fraction < 1.0))
        throw std::invalid_argument("SSAConfig: danger_aware_fraction must be in [0, 1)");
    if (!(c.safety_threshold >= 0.5 && c.safety_threshold <= 1.0))
        throw std::invalid_argument("SSAConfig: safety_threshold must be in [0.5, 1]");
    if (c.jobs < 1) throw std::invalid_argument("SSAConfig: jobs must be >= 1");
}

namespace {

struct Evaluation {
    double value = 0.0;
    bool ok = false;
};

// Runs the queued evaluations, possibly concurrently. Seeds are bound to
// the queue position before launch so the schedule cannot affect results.
std::vector<Evaluation> evaluate_all(const SearchSpace& space, const FitnessFn& fitness,
                                     const std::vector<std::vector<double>>& positions,
                                     const std::vector<std::uint64_t>& seeds, int jobs) {
    std::vector<Evaluation> out(positions.size());
    const int n = static_cast<int>(positions.size());
#pragma omp parallel for schedule(dynamic, 1) num_threads(jobs) if (jobs > 1)
    for (int i = 0; i < n; ++i) {
        try {
            const double v = fitness(decode(positions[static_cast<std::size_t>(i)], space), seeds[static_cast<std::size_t>(i)]);
            if (std::isfinite(v)) out[static_cast<std::size_t>(i)] = {v, true};
        } catch (const std::exception& e) {
            warn(std::string("fitness evaluation failed: ") + e.what());
        } catch (...) {
            warn("fitness evaluation failed");
        }
    }
    return out;
}

void clamp_unit(std::vector<double>& x) {
    for (auto& v : x) v = std::clamp(v, 0.0, 1.0);
}

}  // namespace

SSAResult optimize(const SearchSpace& space, const FitnessFn& fitness, const SSAConfig& config) {
    validate(space);
    validate(config);
    const std::size_t dim = space.size();
    SSAResult result;
    std::uint64_t eval_counter = 0;
    auto next_seed = [&] { return derive_seed(config.seed, "fitness", eval_counter++); };

    if (space.singleton()) {
        const std::vector<double> pos(dim, 0.0);
        const auto ev = evaluate_all(space, fitness, {pos}, {next_seed()}, 1);
        result.evaluations = 1;
        result.failures = ev[0].ok ? 0 : 1;
        if (!ev[0].ok) throw std::runtime_error("optimize: the only point of the search space failed to evaluate");
        result.best = decode(pos, space);
        result.best_position = pos;
        result.best_fitness = ev[0].value;
        result.history.push_back({1, ev[0].value, ev[0].value, 0});
        Sparrow s{pos, ev[0].value, pos, ev[0].value, SparrowRole::Producer, false};
        result.population.push_back(s);
        return result;
    }

    const int pop = config.population;
    const int n_producers = std::clamp(static_cast<int>(std::lround(pop * config.producer_fraction)), 1, pop);
    const int n_danger = std::clamp(static_cast<int>(std::lround(pop * config.danger_aware_fraction)), 0, pop);
    const double iter_max = config.max_iterations;

    Rng rng(derive_seed(config.seed, "ssa"));
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    // Internally the SSA minimizes cost = -fitness.
    std::vector<std::vector<double>> x(static_cast<std::size_t>(pop), std::vector<double>(dim));
    for (auto& row : x)
        for (auto& v : row) v = uniform(rng);
    std::vector<double> cost(static_cast<std::size_t>(pop));
    std::vector<bool> failed(static_cast<std::size_t>(pop), false);
    {
        std::vector<std::uint64_t> seeds;
        for (int i = 0; i < pop; ++i) seeds.push_back(next_seed());
        const auto ev = evaluate_all(space, fitness, x, seeds, config.jobs);
        result.evaluations += pop;
        for (int i = 0; i < pop; ++i) {
            const auto si = static_cast<std::size_t>(i);
            failed[si] = !ev[si].ok;
            cost[si] = ev[si].ok ? -ev[si].value : std::numeric_limits<double>::infinity();
            result.failures += ev[si].ok ? 0 : 1;
        }
    }
    std::vector<std::vector<double>> px = x;
    std::vector<double> pcost = cost;
    std::size_t best_i = static_cast<std::size_t>(std::min_element(pcost.begin(), pcost.end()) - pcost.begin());
    double best_cost = pcost[best_i];
    std::vector<double> best_x = px[best_i];
    std::vector<SparrowRole> roles(static_cast<std::size_t>(pop), SparrowRole::Scrounger);

    // Evaluates the listed sparrows at their current positions; a failure
    // leaves the sparrow's previous cost in place.
    auto evaluate_members = [&](const std::vector<std::size_t>& members) {
        std::vector<std::vector<double>> positions;
        std::vector<std::uint64_t> seeds;
        for (auto m : members) {
            positions.push_back(x[m]);
            seeds.push_back(next_seed());
        }
        const auto ev = evaluate_all(space, fitness, positions, seeds, config.jobs);
        result.evaluations += static_cast<int>(members.size());
        int fails = 0;
        for (std::size_t k = 0; k < members.size(); ++k) {
            const auto m = members[k];
            failed[m] = !ev[k].ok;
            if (ev[k].ok) cost[m] = -ev[k].value;
            else {
                cost[m] = pcost[m];
                ++fails;
            }
        }
        result.failures += fails;
        return fails;
    };

    for (int iter = 1; iter <= config.max_iterations; ++iter) {
        std::vector<std::size_t> order(static_cast<std::size_t>(pop));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pcost[a] < pcost[b]; });
        const std::size_t worst_i =
            static_cast<std::size_t>(std::max_element(pcost.begin(), pcost.end()) - pcost.begin());
        const double worst_cost = pcost[worst_i];
        const std::vector<double> worst_x = x[worst_i];
        int failures = 0;

        // Producers.
        const bool safe = uniform(rng) < config.safety_threshold;
        std::vector<std::size_t> producers(order.begin(), order.begin() + n_producers);
        for (int r = 0; r < n_producers; ++r) {
            const auto s = order[static_cast<std::size_t>(r)];
            roles[s] = SparrowRole::Producer;
            if (safe) {
                const double r1 = 1.0 - uniform(rng);  // (0, 1]
                const double shrink = std::exp(-static_cast<double>(r + 1) / (r1 * iter_max));
                for (std::size_t j = 0; j < dim; ++j) x[s][j] = px[s][j] * shrink;
            } else {
                const double q = gauss(rng);
                for (std::size_t j = 0; j < dim; ++j) x[s][j] = px[s][j] + q;
            }
            clamp_unit(x[s]);
        }
        failures += evaluate_members(producers);

        std::size_t lead = 0;
        for (std::size_t i = 1; i < static_cast<std::size_t>(pop); ++i)
            if (cost[i] < cost[lead]) lead = i;
        const std::vector<double> lead_x = x[lead];

        // Scroungers.
        std::vector<std::size_t> moved;
        for (int r = n_producers; r < pop; ++r) {
            const auto s = order[static_cast<std::size_t>(r)];
            roles[s] = SparrowRole::Scrounger;
            const double rank = r + 1;
            if (rank > pop / 2.0) {
                const double q = gauss(rng);
                for (std::size_t j = 0; j < dim; ++j) x[s][j] = q * std::exp((worst_x[j] - px[s][j]) / (rank * rank));
            } else {
                double pull = 0.0;
                for (std::size_t j = 0; j < dim; ++j) {
                    const double a = uniform(rng) < 0.5 ? -1.0 : 1.0;
                    pull += std::abs(px[s][j] - lead_x[j]) * a;
                }
                pull /= static_cast<double>(dim);
                for (std::size_t j = 0; j < dim; ++j) x[s][j] = lead_x[j] + pull;
            }
            clamp_unit(x[s]);
            moved.push_back(s);
        }

        // Danger-aware subset, drawn from the whole population.
        std::vector<std::size_t> perm(static_cast<std::size_t>(pop));
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        for (int k = 0; k < n_danger; ++k) {
            const auto s = perm[static_cast<std::size_t>(k)];
            roles[s] = SparrowRole::DangerAware;
            if (pcost[s] > best_cost) {
                for (std::size_t j = 0; j < dim; ++j) x[s][j] = best_x[j] + gauss(rng) * std::abs(px[s][j] - best_x[j]);
            } else {
                const double q = 2.0 * uniform(rng) - 1.0;
                const double denom = pcost[s] - worst_cost + 1e-50;
                for (std::size_t j = 0; j < dim; ++j) x[s][j] = px[s][j] + q * std::abs(px[s][j] - worst_x[j]) / denom;
            }
            for (auto& v : x[s])
                if (!std::isfinite(v)) v = 0.0;
            clamp_unit(x[s]);
            if (std::find(moved.begin(), moved.end(), s) == moved.end()) moved.push_back(s);
        }
        std::sort(moved.begin(), moved.end());
        failures += evaluate_members(moved);

        // Greedy personal-best update and the global best.
        for (std::size_t i = 0; i < static_cast<std::size_t>(pop); ++i) {
            if (cost[i] < pcost[i]) {
                pcost[i] = cost[i];
                px[i] = x[i];
            }
            if (pcost[i] < best_cost) {
                best_cost = pcost[i];
                best_x = px[i];
            }
        }
        double mean = 0.0;
        int finite = 0;
        for (double c : cost)
            if (std::isfinite(c)) {
                mean -= c;
                ++finite;
            }
        result.history.push_back({iter, -best_cost, finite ? mean / finite : std::numeric_limits<double>::quiet_NaN(),
                                  failures});
    }

    if (!std::isfinite(best_cost)) throw std::runtime_error("optimize: every fitness evaluation failed");
    result.best_position = best_x;
    result.best = decode(best_x, space);
    result.best_fitness = -best_cost;
    for (int i = 0; i < pop; ++i) {
        const auto si = static_cast<std::size_t>(i);
        result.population.push_back({x[si], -cost[si], px[si], -pcost[si], roles[si], failed[si]});
    }
    return result;
}

double negative_sphere(const Assignment& a) {
    double s = 0.0;
    for (double v : a.values) s += v * v;
    return -s;
}

SearchSpace sphere_space(int dims, double lower, double upper) {
    SearchSpace s;
    for (int i = 0; i < dims; ++i) s.dimensions.push_back(Dimension::continuous("x" + std::to_string(i + 1), lower, upper));
    return s;
}

void apply_assignment(const Assignment& a, NetworkConfig& net, TrainConfig& train) {
    for (std::size_t i = 0; i < a.names.size(); ++i) {
        const auto& n = a.names[i];
        const double v = a.values[i];
        if (n == "learning_rate") train.learning_rate = v;
        else if (n == "kernel_size") net.tcn_kernel_size = static_cast<int>(std::lround(v));
        else if (n == "dropout_rate") net.dropout_rate = v;
        else if (n == "conv_channels") net.tcn_channels = static_cast<int>(std::lround(v));
        else if (n == "batch_size") train.batch_size = static_cast<int>(std::lround(v));
        else throw std::invalid_argument("apply_assignment: unknown hyperparameter " + n);
    }
}

TuneResult tune_etcn(const WindowedDataset& data, const TuneConfig& config) {
    const SampleSet& target = config.fitness_on_test ? data.test : data.validation;
    if (data.train.empty()) throw std::invalid_argument("tune_etcn: empty training split");
    if (target.empty()) throw std::invalid_argument("tune_etcn: empty fitness split");
    NetworkConfig fixed = config.network;
    fixed.window_width = data.train.width();
    fixed.n_vars = data.train.n_vars();
    const FitnessFn fitness = [&](const Assignment& a, std::uint64_t seed) {
        NetworkConfig net = fixed;
        TrainConfig train = config.train;
        apply_assignment(a, net, train);
        validate(net);
        train.seed = seed;
        const Model model = init_model(net, derive_seed(seed, "init"));
        const auto fitted = fit(model, data.train, SampleSet{}, train);
        return evaluate(fitted.model, target, train.eval_batch_size).accuracy;
    };
    TuneResult r;
    r.search = optimize(config.space, fitness, config.ssa);
    r.network = fixed;
    r.train = config.train;
    apply_assignment(r.search.best, r.network, r.train);
    return r;
}

void write_convergence_csv(std::ostream& out, const std::vector<IterationRecord>& history) {
    out << "iteration,best_fitness,mean_fitness\n";
    for (const auto& h : history)
        out << h.iteration << ',' << format_double(h.best_fitness) << ',' << format_double(h.mean_fitness) << '\n';
}

void write_assignment_report(std::ostream& out, const Assignment& a, double fitness) {
    out << "name,value\n";
    for (std::size_t i = 0; i < a.names.size(); ++i) out << a.names[i] << ',' << format_double(a.values[i]) << '\n';
    out << "fitness," << format_double(fitness) << '\n';
}

}  // namespace etcn
