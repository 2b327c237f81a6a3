#include "etcn/cli.hpp"

#include "etcn/checkpoint.hpp"
#include "etcn/evaluation.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>

namespace etcn::cli {

using nlohmann::json;
namespace fs = std::filesystem;

// ------------------------------------------------------------- helpers

fs::path default_output(const std::string& command) {
    const char* env = std::getenv("ETCN_OUT_DIR");
    const fs::path root = env && *env ? fs::path(env) : fs::path("etcn-out");
    return root / command;
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        int v = 0;
        try {
            v = std::stoi(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != item.size()) throw std::invalid_argument("invalid integer list '" + text + "'");
        out.push_back(v);
    }
    if (out.empty()) throw std::invalid_argument("empty integer list");
    return out;
}

SplitRatios parse_ratios(const std::string& text) {
    std::vector<int> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ':')) {
        std::size_t used = 0;
        int v = -1;
        try {
            v = std::stoi(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != item.size() || v < 0) throw std::invalid_argument("invalid split ratio '" + text + "'");
        parts.push_back(v);
    }
    if (parts.size() != 3 || parts[0] + parts[1] + parts[2] == 0 || parts[0] == 0)
        throw std::invalid_argument("split must be train:validation:test with a non-zero train part");
    return {parts[0], parts[1], parts[2]};
}

namespace {

double parse_number(const std::string& s, const std::string& what) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size()) throw std::invalid_argument(what + ": cannot parse number '" + s + "'");
    return v;
}

bool is_integer(double v) { return std::floor(v) == v && std::abs(v) < 1e9; }

}  // namespace

SearchSpace search_space_from(const KeyValueConfig& kv) {
    SearchSpace space;
    for (const auto& [name, spec] : kv.values()) {
        const std::string what = "search space '" + name + "'";
        if (spec.find(':') != std::string::npos) {
            std::vector<double> parts;
            std::stringstream ss(spec);
            std::string item;
            while (std::getline(ss, item, ':')) parts.push_back(parse_number(item, what));
            if (parts.size() != 3 || parts[1] <= 0.0 || parts[0] > parts[2])
                throw std::invalid_argument(what + ": expected a:n:b with n > 0 and a <= b");
            if (is_integer(parts[0]) && is_integer(parts[1]) && is_integer(parts[2]))
                space.dimensions.push_back(Dimension::integer_grid(name, static_cast<int>(parts[0]),
                                                                   static_cast<int>(parts[2]),
                                                                   static_cast<int>(parts[1])));
            else
                space.dimensions.push_back(Dimension::continuous(name, parts[0], parts[2], parts[1]));
        } else {
            std::vector<double> options;
            for (const auto& item : kv.get_list(name)) options.push_back(parse_number(item, what));
            if (options.empty()) throw std::invalid_argument(what + ": no values");
            space.dimensions.push_back(Dimension::categorical(name, options));
        }
    }
    validate(space);
    return space;
}

void apply_model_config(const KeyValueConfig& kv, NetworkConfig& net, TrainConfig& train) {
    static const std::vector<std::string> known{
        "tcn_channels", "tcn_kernel_size", "tcn_dilations", "dropout_rate", "attention_dim",
        "res_block_kind", "res_kernel_size", "sa_enabled", "res_enabled", "variant",
        "epochs", "batch_size", "learning_rate", "seed", "shuffle"};
    if (auto extra = kv.unknown_keys(known); !extra.empty())
        throw std::invalid_argument("model config: unknown key '" + extra.front() + "'");
    if (kv.has("variant")) net = with_variant(net, parse_variant(kv.get("variant", "")));
    net.tcn_channels = kv.get_int("tcn_channels", net.tcn_channels);
    net.tcn_kernel_size = kv.get_int("tcn_kernel_size", net.tcn_kernel_size);
    net.tcn_dilations = kv.get_int_list("tcn_dilations", net.tcn_dilations);
    net.dropout_rate = kv.get_double("dropout_rate", net.dropout_rate);
    net.attention_dim = kv.get_int("attention_dim", net.attention_dim);
    if (kv.has("res_block_kind")) {
        const int kind = kv.get_int("res_block_kind", 2);
        if (kind != 1 && kind != 2) throw std::invalid_argument("model config: res_block_kind must be 1 or 2");
        net.res_block_kind = static_cast<ResBlockKind>(kind);
    }
    net.res_kernel_size = kv.get_int("res_kernel_size", net.res_kernel_size);
    net.sa_enabled = kv.get_bool("sa_enabled", net.sa_enabled);
    net.res_enabled = kv.get_bool("res_enabled", net.res_enabled);
    train.epochs = kv.get_int("epochs", train.epochs);
    train.batch_size = kv.get_int("batch_size", train.batch_size);
    train.learning_rate = kv.get_double("learning_rate", train.learning_rate);
    train.seed = kv.get_u64("seed", train.seed);
    train.shuffle = kv.get_bool("shuffle", train.shuffle);
}

std::string manifest_json(const RunManifest& m) {
    json outputs = json::array();
    for (const auto& o : m.outputs) {
        char hex[17];
        std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(o.checksum));
        outputs.push_back({{"path", o.path}, {"fnv1a64", hex}});
    }
    json j{{"command", m.command},
           {"args", m.args},
           {"cwd", m.cwd},
           {"config", json::parse(m.config_json.empty() ? "{}" : m.config_json)},
           {"seed", m.seed},
           {"version", m.version},
           {"inputs", m.inputs},
           {"outputs", std::move(outputs)},
           {"duration_seconds", m.duration_seconds}};
    return j.dump(2) + "\n";
}

RunManifest parse_manifest(const std::string& text) {
    const json j = json::parse(text);
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.args = j.at("args").get<std::vector<std::string>>();
    m.cwd = j.at("cwd").get<std::string>();
    m.config_json = j.at("config").dump();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.version = j.at("version").get<std::string>();
    m.inputs = j.at("inputs").get<std::vector<std::string>>();
    for (const auto& o : j.at("outputs")) {
        OutputFile f;
        f.path = o.at("path").get<std::string>();
        f.checksum = std::stoull(o.at("fnv1a64").get<std::string>(), nullptr, 16);
        m.outputs.push_back(f);
    }
    m.duration_seconds = j.at("duration_seconds").get<double>();
    return m;
}

namespace {

using Clock = std::chrono::steady_clock;

struct Run {
    RunManifest manifest;
    Clock::time_point start = Clock::now();
    std::vector<fs::path> outputs;

    void output(const fs::path& p, const std::string& contents) {
        write_file_atomic(p, contents);
        outputs.push_back(p);
    }

    void finish(const fs::path& manifest_path) {
        for (const auto& p : outputs) {
            OutputFile f;
            f.path = fs::absolute(p).lexically_normal().string();
            f.checksum = fnv1a64(read_file(p));
            manifest.outputs.push_back(f);
        }
        manifest.duration_seconds = std::chrono::duration<double>(Clock::now() - start).count();
        write_file_atomic(manifest_path, manifest_json(manifest));
    }
};

template <class Writer>
std::string render(Writer&& w) {
    std::ostringstream ss;
    w(ss);
    return ss.str();
}

std::string abs_string(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

json net_json(const NetworkConfig& c) { return json::parse(network_config_json(c)); }

json train_json(const TrainConfig& t) {
    return {{"epochs", t.epochs},
            {"batch_size", t.batch_size},
            {"learning_rate", t.learning_rate},
            {"seed", t.seed},
            {"shuffle", t.shuffle},
            {"eval_batch_size", t.eval_batch_size},
            {"epoch_metrics", t.epoch_metrics == EpochMetrics::FullPass ? "full" : "running"}};
}

const SampleSet& split_by_name(const WindowedDataset& ds, const std::string& name) {
    if (name == "train") return ds.train;
    if (name == "validation" || name == "val") return ds.validation;
    if (name == "test") return ds.test;
    throw std::invalid_argument("unknown split '" + name + "' (train, validation, test)");
}

std::uint64_t split_fingerprint(const WindowedDataset& ds) {
    const auto members = membership_of(ds);
    std::string bytes;
    for (auto i : members.test) bytes.append(reinterpret_cast<const char*>(&i), sizeof(i));
    return fnv1a64(bytes);
}

std::string curves_csv(const std::vector<EpochRecord>& history) {
    return render([&](std::ostream& o) {
        o << "epoch,train_loss,train_acc,val_loss,val_acc\n";
        for (const auto& r : history)
            o << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.train_accuracy) << ','
              << format_double(r.val_loss) << ',' << format_double(r.val_accuracy) << '\n';
    });
}

// Model / training flags shared by train, tune and ablate.
struct ModelFlags {
    std::string config_path;
    std::string variant;
    std::optional<int> channels, kernel, batch, epochs, attention_dim, res_kind;
    std::optional<double> learning_rate, dropout;
    std::string dilations;
    std::string epoch_metrics;

    void add(CLI::App* app) {
        app->add_option("--config", config_path, "key = value model/training config file")->check(CLI::ExistingFile);
        app->add_option("--variant", variant, "tcn, tcn+sa, tcn+res2, tcn+sa+res1 or etcn");
        app->add_option("--channels", channels, "TCN channels per layer");
        app->add_option("--kernel-size", kernel, "TCN kernel size");
        app->add_option("--dilations", dilations, "comma-separated TCN dilations");
        app->add_option("--dropout", dropout, "dropout rate inside TCN blocks");
        app->add_option("--attention-dim", attention_dim, "query/key dimension (0 = channels)");
        app->add_option("--res-block", res_kind, "residual block kind (1 identity, 2 projection)");
        app->add_option("--learning-rate", learning_rate, "Adam learning rate");
        app->add_option("--batch-size", batch, "mini-batch size");
        app->add_option("--epochs", epochs, "training epochs");
        app->add_option("--epoch-metrics", epoch_metrics, "full or running");
    }

    void resolve(NetworkConfig& net, TrainConfig& train) const {
        if (!config_path.empty()) apply_model_config(KeyValueConfig::load(config_path), net, train);
        if (!variant.empty()) net = with_variant(net, parse_variant(variant));
        if (channels) net.tcn_channels = *channels;
        if (kernel) net.tcn_kernel_size = *kernel;
        if (!dilations.empty()) net.tcn_dilations = parse_int_list(dilations);
        if (dropout) net.dropout_rate = *dropout;
        if (attention_dim) net.attention_dim = *attention_dim;
        if (res_kind) {
            if (*res_kind != 1 && *res_kind != 2) throw std::invalid_argument("--res-block must be 1 or 2");
            net.res_block_kind = static_cast<ResBlockKind>(*res_kind);
        }
        if (learning_rate) train.learning_rate = *learning_rate;
        if (batch) train.batch_size = *batch;
        if (epochs) train.epochs = *epochs;
        if (epoch_metrics == "full") train.epoch_metrics = EpochMetrics::FullPass;
        else if (epoch_metrics == "running") train.epoch_metrics = EpochMetrics::Running;
        else if (!epoch_metrics.empty()) throw std::invalid_argument("--epoch-metrics must be full or running");
        validate(net);
        validate(train);
    }
};

NetworkConfig dataset_network(const WindowedDataset& ds) {
    NetworkConfig net;
    net.n_vars = static_cast<int>(ds.stats.x_min.size());
    net.window_width = ds.width;
    return net;
}

// ------------------------------------------------------------ commands

struct GenerateArgs {
    std::string config, out, classes;
    std::optional<int> severities, steady_runs, repetitions;
    std::optional<std::uint64_t> seed;
};

void cmd_generate(const GenerateArgs& a, Run& run, std::ostream& out) {
    GeneratorConfig g = a.config.empty() ? GeneratorConfig{} : generator_config_from(KeyValueConfig::load(a.config));
    if (a.severities) g.n_severities = *a.severities;
    if (a.repetitions) g.repetitions = *a.repetitions;
    if (a.seed) g.seed = *a.seed;
    if (!a.classes.empty()) {
        std::vector<std::string> names;
        std::stringstream ss(a.classes);
        std::string item;
        while (std::getline(ss, item, ',')) names.push_back(item);
        select_classes(g, names);
    }
    if (a.steady_runs) g.steady_runs = *a.steady_runs;
    const fs::path dir = a.out.empty() ? default_output("generate") : fs::path(a.out);
    fs::create_directories(dir);

    const auto series = generate_dataset(g);
    std::vector<ScenarioIndexEntry> index;
    for (std::size_t i = 0; i < series.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "scenario_%03zu.csv", i);
        run.output(dir / name, render([&](std::ostream& o) { write_scenario_csv(o, series[i]); }));
        index.push_back({name, series[i].scenario});
    }
    run.output(dir / "index.csv", render([&](std::ostream& o) { write_scenario_index(o, index); }));
    const std::string resolved = render([&](std::ostream& o) { write_generator_config(o, g); });
    run.output(dir / "generator.cfg", resolved);

    json cfg;
    std::vector<std::string> classes;
    for (auto c : g.accident_classes) classes.emplace_back(class_name(c));
    cfg = {{"classes", classes},       {"severities", g.n_severities}, {"severity_min", g.severity_min},
           {"severity_max", g.severity_max}, {"repetitions", g.repetitions}, {"steady_runs", g.steady_runs},
           {"n_vars", g.n_vars},       {"n_steps", g.n_steps},          {"onset_step", g.onset_step},
           {"seed", g.seed}};
    run.manifest.config_json = cfg.dump();
    run.manifest.seed = g.seed;
    if (!a.config.empty()) run.manifest.inputs.push_back(abs_string(a.config));
    run.finish(dir / "manifest.json");
    out << "wrote " << series.size() << " scenarios to " << dir.string() << '\n';
}

struct PreprocessArgs {
    std::string in, out, split = "6:2:2";
    int width = 120;
    int step = 1;
    double noise = 0.05;
    std::uint64_t seed = 42;
};

void cmd_preprocess(const PreprocessArgs& a, Run& run, std::ostream& out) {
    const auto raw = load_scenarios(a.in);
    PreprocessConfig pc;
    pc.width = a.width;
    pc.step = a.step;
    pc.noise_fraction = a.noise;
    pc.ratios = parse_ratios(a.split);
    pc.seed = a.seed;
    if (a.width < 1 || a.step < 1) throw std::invalid_argument("width and step must be >= 1");
    for (const auto& ts : raw)
        if (a.width > ts.n_steps())
            throw std::invalid_argument("width " + std::to_string(a.width) + " exceeds series length " +
                                        std::to_string(ts.n_steps()));
    const auto ds = prepare_dataset(raw, pc);
    const fs::path path = a.out.empty() ? default_output("preprocess") / "dataset.etcnds" : fs::path(a.out);
    const json cfg{{"width", pc.width},
                   {"step", pc.step},
                   {"noise_fraction", pc.noise_fraction},
                   {"split", {pc.ratios.train, pc.ratios.validation, pc.ratios.test}},
                   {"seed", pc.seed},
                   {"source", abs_string(a.in)}};
    write_dataset(path, ds, cfg.dump());
    run.outputs.push_back(path);
    run.manifest.config_json = cfg.dump();
    run.manifest.seed = pc.seed;
    run.manifest.inputs.push_back(abs_string(a.in));
    fs::path manifest = path;
    manifest += ".manifest.json";
    run.finish(manifest);
    out << "windows: train " << ds.train.size() << ", validation " << ds.validation.size() << ", test "
        << ds.test.size() << '\n';
}

struct TrainArgs {
    std::string dataset, out;
    std::uint64_t seed = 42;
    ModelFlags model;
};

void cmd_train(const TrainArgs& a, Run& run, std::ostream& out) {
    const auto ds = read_dataset(a.dataset);
    NetworkConfig net = dataset_network(ds);
    TrainConfig tc;
    tc.seed = a.seed;
    a.model.resolve(net, tc);
    tc.seed = a.seed;
    const fs::path dir = a.out.empty() ? default_output("train") : fs::path(a.out);
    fs::create_directories(dir);

    const Model model = init_model(net, derive_seed(tc.seed, "init"));
    const auto result = fit(model, ds.train, ds.validation, tc, [&](const EpochRecord& r) {
        out << "epoch " << r.epoch << " train_loss " << format_double(r.train_loss) << " train_acc "
            << format_double(r.train_accuracy) << " val_loss " << format_double(r.val_loss) << " val_acc "
            << format_double(r.val_accuracy) << '\n';
        out.flush();
    });
    Checkpoint ckpt{result.model, ds.stats, ds.width};
    run.output(dir / "model.ckpt.json", serialize_checkpoint(ckpt));
    run.output(dir / "curves.csv", curves_csv(result.history));
    run.manifest.config_json = json{{"network", net_json(net)}, {"train", train_json(tc)}}.dump();
    run.manifest.seed = tc.seed;
    run.manifest.inputs.push_back(abs_string(a.dataset));
    run.finish(dir / "manifest.json");
}

struct TuneArgs {
    std::string dataset, out, space, mock;
    int population = 20;
    int iterations = 10;
    int jobs = 1;
    bool fitness_on_test = false;
    std::uint64_t seed = 42;
    ModelFlags model;
};

void cmd_tune(const TuneArgs& a, Run& run, std::ostream& out) {
    SSAConfig ssa;
    ssa.population = a.population;
    ssa.max_iterations = a.iterations;
    ssa.seed = a.seed;
    ssa.jobs = a.jobs;
    validate(ssa);
    const fs::path dir = a.out.empty() ? default_output("tune") : fs::path(a.out);
    fs::create_directories(dir);
    json cfg{{"population", ssa.population},
             {"max_iterations", ssa.max_iterations},
             {"producer_fraction", ssa.producer_fraction},
             {"danger_aware_fraction", ssa.danger_aware_fraction},
             {"safety_threshold", ssa.safety_threshold},
             {"seed", ssa.seed}};

    SSAResult search;
    if (!a.mock.empty()) {
        if (a.mock != "sphere") throw std::invalid_argument("unknown mock fitness '" + a.mock + "'");
        const SearchSpace space = a.space.empty() ? sphere_space() : search_space_from(KeyValueConfig::load(a.space));
        search = optimize(space, [](const Assignment& x, std::uint64_t) { return negative_sphere(x); }, ssa);
        cfg["fitness"] = "sphere";
    } else {
        if (a.dataset.empty()) throw std::invalid_argument("tune needs --dataset unless --mock-fitness is given");
        const auto ds = read_dataset(a.dataset);
        TuneConfig tc;
        tc.ssa = ssa;
        tc.network = dataset_network(ds);
        tc.train.seed = a.seed;
        a.model.resolve(tc.network, tc.train);
        if (!a.space.empty()) tc.space = search_space_from(KeyValueConfig::load(a.space));
        tc.fitness_on_test = a.fitness_on_test;
        const auto r = tune_etcn(ds, tc);
        search = r.search;
        cfg["fitness"] = a.fitness_on_test ? "test_accuracy" : "validation_accuracy";
        cfg["network"] = net_json(tc.network);
        cfg["train"] = train_json(tc.train);
        run.manifest.inputs.push_back(abs_string(a.dataset));
        run.output(dir / "best_config.cfg", render([&](std::ostream& o) {
                       o << "variant = " << variant_name(Variant::Etcn) << '\n';
                       o << "tcn_channels = " << r.network.tcn_channels << '\n';
                       o << "tcn_kernel_size = " << r.network.tcn_kernel_size << '\n';
                       o << "dropout_rate = " << format_double(r.network.dropout_rate) << '\n';
                       o << "learning_rate = " << format_double(r.train.learning_rate) << '\n';
                       o << "batch_size = " << r.train.batch_size << '\n';
                       o << "epochs = " << r.train.epochs << '\n';
                   }));
    }
    if (!a.space.empty()) run.manifest.inputs.push_back(abs_string(a.space));
    run.output(dir / "convergence.csv", render([&](std::ostream& o) { write_convergence_csv(o, search.history); }));
    run.output(dir / "best.csv",
               render([&](std::ostream& o) { write_assignment_report(o, search.best, search.best_fitness); }));
    run.manifest.config_json = cfg.dump();
    run.manifest.seed = a.seed;
    run.finish(dir / "manifest.json");
    out << "best fitness " << format_double(search.best_fitness) << " after " << search.history.size()
        << " iterations (" << search.evaluations << " evaluations, " << search.failures << " failed)\n";
    for (std::size_t i = 0; i < search.best.names.size(); ++i)
        out << "  " << search.best.names[i] << " = " << format_double(search.best.values[i]) << '\n';
}

struct EvaluateArgs {
    std::string checkpoint, dataset, out, split = "test";
};

void cmd_evaluate(const EvaluateArgs& a, Run& run, std::ostream& out) {
    const auto ckpt = load_checkpoint(a.checkpoint);
    const auto ds = read_dataset(a.dataset);
    check_compatible(ckpt, ds);
    const SampleSet& set = split_by_name(ds, a.split);
    const auto r = evaluate(ckpt.model, set);
    const auto cm = confusion_matrix(r.labels, r.predictions, ckpt.model.config.n_classes);
    const auto m = compute_metrics(cm);
    const fs::path dir = a.out.empty() ? default_output("evaluate") : fs::path(a.out);
    fs::create_directories(dir);
    run.output(dir / "metrics.csv", render([&](std::ostream& o) { write_metrics_csv(o, m); }));
    run.output(dir / "confusion.csv", render([&](std::ostream& o) { write_confusion_csv(o, cm); }));
    run.output(dir / "confusion_normalized.csv",
               render([&](std::ostream& o) { write_normalized_confusion_csv(o, cm); }));
    run.manifest.config_json = json{{"split", a.split}}.dump();
    run.manifest.inputs = {abs_string(a.checkpoint), abs_string(a.dataset)};
    run.finish(dir / "manifest.json");
    out << "accuracy " << format_double(m.accuracy) << " precision " << format_double(m.macro_precision) << " recall "
        << format_double(m.macro_recall) << " f1 " << format_double(m.macro_f1) << '\n';
}

struct AblateArgs {
    std::string dataset, out, variants = "tcn,tcn+sa,tcn+res2,tcn+sa+res1,etcn";
    int runs = 1;
    int jobs = 1;
    std::uint64_t seed = 42;
    ModelFlags model;
};

void cmd_ablate(const AblateArgs& a, Run& run, std::ostream& out) {
    std::vector<Variant> variants;
    {
        std::stringstream ss(a.variants);
        std::string item;
        while (std::getline(ss, item, ',')) variants.push_back(parse_variant(item));
    }
    if (variants.empty()) throw std::invalid_argument("no variants requested");
    if (a.runs < 1) throw std::invalid_argument("--runs must be >= 1");
    if (a.jobs < 1) throw std::invalid_argument("--jobs must be >= 1");
    const auto ds = read_dataset(a.dataset);
    NetworkConfig base = dataset_network(ds);
    TrainConfig tc;
    tc.epoch_metrics = EpochMetrics::Running;
    a.model.resolve(base, tc);

    const int n_tasks = static_cast<int>(variants.size()) * a.runs;
    std::vector<RunMetrics> metrics(static_cast<std::size_t>(n_tasks));
    std::vector<std::string> errors(static_cast<std::size_t>(n_tasks));
#pragma omp parallel for schedule(dynamic, 1) num_threads(a.jobs) if (a.jobs > 1)
    for (int t = 0; t < n_tasks; ++t) {
        try {
            const auto v = variants[static_cast<std::size_t>(t / a.runs)];
            const int r = t % a.runs;
            const std::uint64_t run_seed = derive_seed(a.seed, "run", static_cast<std::uint64_t>(r));
            NetworkConfig net = with_variant(base, v);
            TrainConfig train = tc;
            train.seed = run_seed;
            const auto fitted = fit(init_model(net, derive_seed(run_seed, "init")), ds.train, SampleSet{}, train);
            const auto e = evaluate(fitted.model, ds.test, train.eval_batch_size);
            metrics[static_cast<std::size_t>(t)] =
                summary(compute_metrics(confusion_matrix(e.labels, e.predictions, net.n_classes)));
        } catch (const std::exception& e) {
            errors[static_cast<std::size_t>(t)] = e.what();
        }
    }
    for (const auto& e : errors)
        if (!e.empty()) throw std::runtime_error(e);

    const std::uint64_t fingerprint = split_fingerprint(ds);
    std::vector<VariantResult> results;
    for (std::size_t v = 0; v < variants.size(); ++v) {
        VariantResult vr;
        vr.variant = std::string(variant_name(variants[v]));
        vr.split_fingerprint = fingerprint;
        for (int r = 0; r < a.runs; ++r) vr.runs.push_back(metrics[v * static_cast<std::size_t>(a.runs) + static_cast<std::size_t>(r)]);
        results.push_back(std::move(vr));
    }
    const auto rows = ablation_table(results);
    const fs::path dir = a.out.empty() ? default_output("ablate") : fs::path(a.out);
    fs::create_directories(dir);
    run.output(dir / "ablation.csv", render([&](std::ostream& o) { write_ablation_csv(o, rows); }));
    run.output(dir / "runs.csv", render([&](std::ostream& o) {
                   o << "variant,run,seed,accuracy,precision,recall,f1\n";
                   for (const auto& vr : results)
                       for (int r = 0; r < a.runs; ++r) {
                           const auto& m = vr.runs[static_cast<std::size_t>(r)];
                           o << vr.variant << ',' << r << ','
                             << derive_seed(a.seed, "run", static_cast<std::uint64_t>(r)) << ','
                             << format_double(m.accuracy) << ',' << format_double(m.precision) << ','
                             << format_double(m.recall) << ',' << format_double(m.f1) << '\n';
                       }
               }));
    run.manifest.config_json =
        json{{"variants", a.variants}, {"runs", a.runs}, {"network", net_json(base)}, {"train", train_json(tc)}}.dump();
    run.manifest.seed = a.seed;
    run.manifest.inputs.push_back(abs_string(a.dataset));
    run.finish(dir / "manifest.json");
    for (const auto& r : rows)
        out << r.variant << " accuracy " << format_double(r.mean.accuracy) << " +- " << format_double(r.stddev.accuracy)
            << '\n';
}

struct WindowArgs {
    std::string scenario, out, widths = "60,120,180,240,300", variables;
};

void cmd_window_analysis(const WindowArgs& a, Run& run, std::ostream& out) {
    std::ifstream in(a.scenario);
    if (!in) throw std::runtime_error("cannot open scenario " + a.scenario);
    const auto ts = read_scenario_csv(in, a.scenario);
    std::vector<int> widths;
    try {
        widths = parse_int_list(a.widths);
    } catch (const std::exception&) {
        throw std::invalid_argument("invalid width list '" + a.widths + "'");
    }
    for (int w : widths)
        if (w < 1 || w > ts.n_steps()) throw std::invalid_argument("invalid width list: " + std::to_string(w) +
                                                                    " is outside [1, " + std::to_string(ts.n_steps()) + "]");
    std::vector<int> vars;
    if (!a.variables.empty())
        for (int v : parse_int_list(a.variables)) {
            if (v < 1 || v > ts.n_vars()) throw std::invalid_argument("variable " + std::to_string(v) + " out of range");
            vars.push_back(v - 1);
        }
    const auto stats = window_statistics(ts, widths, vars);
    const fs::path dir = a.out.empty() ? default_output("window-analysis") : fs::path(a.out);
    fs::create_directories(dir);
    for (const auto& s : stats) {
        char name[64];
        std::snprintf(name, sizeof(name), "window_stats_w%03d.csv", s.width);
        run.output(dir / name, render([&](std::ostream& o) { write_window_statistics_csv(o, s); }));
    }
    run.manifest.config_json = json{{"widths", widths}, {"variables", a.variables}}.dump();
    run.manifest.inputs.push_back(abs_string(a.scenario));
    run.finish(dir / "manifest.json");
    out << "wrote " << stats.size() << " window statistics files to " << dir.string() << '\n';
}

int cmd_replay(const std::string& manifest_path, bool verify, std::ostream& out, std::ostream& err) {
    const RunManifest m = parse_manifest(read_file(manifest_path));
    const fs::path here = fs::current_path();
    int code = 0;
    fs::current_path(m.cwd);
    try {
        code = run(m.args, out, err);
    } catch (...) {
        fs::current_path(here);
        throw;
    }
    fs::current_path(here);
    if (code != 0 || !verify) return code;
    int mismatches = 0;
    for (const auto& o : m.outputs) {
        const bool same = fs::exists(o.path) && fnv1a64(read_file(o.path)) == o.checksum;
        if (!same) {
            out << "mismatch " << o.path << '\n';
            ++mismatches;
        }
    }
    out << (mismatches ? "replay differs in " + std::to_string(mismatches) + " outputs" : "replay identical") << '\n';
    return mismatches ? 3 : 0;
}

std::string one_line(std::string s) {
    for (auto& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"ETCN fault-diagnosis toolkit", "etcn"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    GenerateArgs gen;
    auto* c_gen = app.add_subcommand("generate", "simulate scenario time series");
    c_gen->add_option("--config", gen.config, "generator config file (key = value)")->check(CLI::ExistingFile);
    c_gen->add_option("--out", gen.out, "output directory");
    c_gen->add_option("--classes", gen.classes, "comma-separated classes among NO,LOCA,MSLB,SGTR");
    c_gen->add_option("--severities", gen.severities, "severities per accident class");
    c_gen->add_option("--steady-runs", gen.steady_runs, "number of steady-state runs");
    c_gen->add_option("--repetitions", gen.repetitions, "repetitions per severity");
    c_gen->add_option("--seed", gen.seed, "master seed");

    PreprocessArgs pre;
    auto* c_pre = app.add_subcommand("preprocess", "noise, normalize, window and split scenarios");
    c_pre->add_option("--in", pre.in, "directory written by generate")->required();
    c_pre->add_option("--out", pre.out, "dataset file");
    c_pre->add_option("--width", pre.width, "window width in samples");
    c_pre->add_option("--step", pre.step, "window stride");
    c_pre->add_option("--noise", pre.noise, "noise level as a fraction of each variable's std");
    c_pre->add_option("--split", pre.split, "train:validation:test ratio");
    c_pre->add_option("--seed", pre.seed, "master seed");

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train", "train a classifier");
    c_train->add_option("--dataset", tr.dataset, "dataset file")->required();
    c_train->add_option("--out", tr.out, "output directory");
    c_train->add_option("--seed", tr.seed, "master seed");
    tr.model.add(c_train);

    TuneArgs tu;
    auto* c_tune = app.add_subcommand("tune", "sparrow search over the hyperparameters");
    c_tune->add_option("--dataset", tu.dataset, "dataset file");
    c_tune->add_option("--out", tu.out, "output directory");
    c_tune->add_option("--space", tu.space, "search-space file")->check(CLI::ExistingFile);
    c_tune->add_option("--ssa-pop", tu.population, "population size");
    c_tune->add_option("--ssa-iters", tu.iterations, "iterations");
    c_tune->add_option("--jobs", tu.jobs, "concurrent fitness evaluations");
    c_tune->add_flag("--fitness-on-test", tu.fitness_on_test, "score sparrows on the test split");
    c_tune->add_option("--mock-fitness", tu.mock, "synthetic fitness instead of training (sphere)");
    c_tune->add_option("--seed", tu.seed, "master seed");
    tu.model.add(c_tune);

    EvaluateArgs ev;
    auto* c_eval = app.add_subcommand("evaluate", "metrics of a checkpoint on a dataset split");
    c_eval->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
    c_eval->add_option("--dataset", ev.dataset, "dataset file")->required();
    c_eval->add_option("--split", ev.split, "train, validation or test");
    c_eval->add_option("--out", ev.out, "output directory");

    AblateArgs ab;
    auto* c_abl = app.add_subcommand("ablate", "train and compare model variants");
    c_abl->add_option("--dataset", ab.dataset, "dataset file")->required();
    c_abl->add_option("--out", ab.out, "output directory");
    c_abl->add_option("--variants", ab.variants, "comma-separated variants");
    c_abl->add_option("--runs", ab.runs, "independent runs per variant");
    c_abl->add_option("--jobs", ab.jobs, "concurrent training runs");
    c_abl->add_option("--seed", ab.seed, "master seed");
    ab.model.add(c_abl);

    WindowArgs wa;
    auto* c_win = app.add_subcommand("window-analysis", "per-window statistics at several widths");
    c_win->add_option("--scenario", wa.scenario, "scenario CSV")->required();
    c_win->add_option("--widths", wa.widths, "comma-separated window widths");
    c_win->add_option("--variables", wa.variables, "comma-separated 1-based variable numbers (default all)");
    c_win->add_option("--out", wa.out, "output directory");

    std::string replay_path;
    bool replay_verify = false;
    auto* c_rep = app.add_subcommand("replay", "re-run the command recorded in a manifest");
    c_rep->add_option("manifest", replay_path, "manifest.json")->required();
    c_rep->add_flag("--verify", replay_verify, "compare output checksums with the manifest");

    std::vector<std::string> argv_store{"etcn"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& s : argv_store) argv.push_back(s.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << kToolVersion << '\n';
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << one_line(e.what()) << '\n';
        return 2;
    }

    Run r;
    r.manifest.args = args;
    r.manifest.cwd = fs::current_path().string();
    set_warning_handler([&err](const std::string& m) { err << "warning: " << m << '\n'; });
    try {
        if (c_gen->parsed()) {
            r.manifest.command = "generate";
            cmd_generate(gen, r, out);
        } else if (c_pre->parsed()) {
            r.manifest.command = "preprocess";
            cmd_preprocess(pre, r, out);
        } else if (c_train->parsed()) {
            r.manifest.command = "train";
            cmd_train(tr, r, out);
        } else if (c_tune->parsed()) {
            r.manifest.command = "tune";
            cmd_tune(tu, r, out);
        } else if (c_eval->parsed()) {
            r.manifest.command = "evaluate";
            cmd_evaluate(ev, r, out);
        } else if (c_abl->parsed()) {
            r.manifest.command = "ablate";
            cmd_ablate(ab, r, out);
        } else if (c_win->parsed()) {
            r.manifest.command = "window-analysis";
            cmd_window_analysis(wa, r, out);
        } else if (c_rep->parsed()) {
            set_warning_handler({});
            return cmd_replay(replay_path, replay_verify, out, err);
        }
    } catch (const std::exception& e) {
        set_warning_handler({});
        err << "error: " << one_line(e.what()) << '\n';
        return 1;
    }
    set_warning_handler({});
    return 0;
}

}  // namespace etcn::cli
