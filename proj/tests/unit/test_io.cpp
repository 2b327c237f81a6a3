#include "etcn/checkpoint.hpp"
#include "etcn/io.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

using namespace etcn;
using etcn::test::max_abs_diff;
using etcn::test::scratch_dir;

namespace {

KeyValueConfig parse_text(const std::string& text) {
    std::istringstream in(text);
    return KeyValueConfig::parse(in, "test.cfg");
}

WindowedDataset small_dataset(std::uint64_t seed = 42) {
    GeneratorConfig g;
    g.n_severities = 2;
    g.n_steps = 90;
    g.steady_runs = 1;
    g.n_vars = 4;
    PreprocessConfig p;
    p.width = 20;
    p.step = 3;
    p.seed = seed;
    return prepare_dataset(generate_dataset(g), p);
}

}  // namespace

TEST_CASE("doubles print in shortest round-trip form") {
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(0.000106) == "0.000106");
    CHECK(format_double(128) == "128");
    for (double x : {M_PI, 1e-300, -2.5e17, 1.0 / 3.0}) CHECK(std::stod(format_double(x)) == x);
}

TEST_CASE("key-value configs") {
    const auto kv = parse_text("# comment\n a = 1 \n\nlist = 1, 2,4\nflag = yes\nname = etcn # trailing\n");
    CHECK(kv.get_int("a", 0) == 1);
    CHECK(kv.get_int("missing", 7) == 7);
    CHECK(kv.get_int_list("list", {}) == std::vector<int>{1, 2, 4});
    CHECK(kv.get_bool("flag", false));
    CHECK(kv.get("name", "") == "etcn");
    const std::vector<std::string> known{"a", "list", "flag"};
    CHECK(kv.unknown_keys(known) == std::vector<std::string>{"name"});
    CHECK_THROWS(parse_text("novalue\n"));
    CHECK_THROWS(parse_text(" = 3\n"));
    CHECK_THROWS(parse_text("a = x\n").get_int("a", 0));
    CHECK_THROWS(parse_text("a = maybe\n").get_bool("a", false));
    CHECK_THROWS(KeyValueConfig::load("/nonexistent/x.cfg"));
}

TEST_CASE("class selection and generator configs round-trip") {
    GeneratorConfig c;
    select_classes(c, {"LOCA", "sgtr"});
    CHECK(c.accident_classes == std::vector<FaultClass>{FaultClass::Loca, FaultClass::Sgtr});
    CHECK(c.steady_runs == 0);
    select_classes(c, {"NO"});
    CHECK(c.accident_classes.empty());
    CHECK(c.steady_runs == 3);
    CHECK_THROWS(select_classes(c, {}));

    GeneratorConfig g;
    g.n_severities = 4;
    g.repetitions = 2;
    g.seed = 77;
    g.severity_max = 0.3;
    std::ostringstream out;
    write_generator_config(out, g);
    const auto back = generator_config_from(parse_text(out.str()));
    CHECK(back.accident_classes == g.accident_classes);
    CHECK(back.n_severities == 4);
    CHECK(back.repetitions == 2);
    CHECK(back.steady_runs == 3);
    CHECK(back.seed == 77);
    CHECK(back.severity_max == 0.3);
    CHECK_THROWS(generator_config_from(parse_text("colour = red\n")));
}

TEST_CASE("files are written atomically and hashed") {
    const auto dir = scratch_dir("io-files");
    const auto path = dir / "nested" / "a.txt";
    write_file_atomic(path, "hello");
    CHECK(read_file(path) == "hello");
    write_file_atomic(path, "again");
    CHECK(read_file(path) == "again");
    CHECK_FALSE(std::filesystem::exists(path.string() + ".tmp"));
    // Published FNV-1a test vectors.
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
    CHECK_THROWS(read_file(dir / "missing"));
}

TEST_CASE("scenario CSV round-trips bit-exactly") {
    const auto ts = generate_scenario({FaultClass::Mslb, 0.35, 40, 3}, 5, 120);
    std::stringstream buf;
    write_scenario_csv(buf, ts);
    CHECK(buf.str().rfind("t,var01,var02,var03,var04,var05,label\n0,", 0) == 0);
    const auto back = read_scenario_csv(buf);
    CHECK((back.values.array() == ts.values.array()).all());
    CHECK(back.labels == ts.labels);

    std::istringstream bad("t,var01,label\n0,1.0\n");
    CHECK_THROWS(read_scenario_csv(bad));
    std::istringstream nan_value("t,var01,label\n0,nan,0\n");
    CHECK_THROWS(read_scenario_csv(nan_value));
}

TEST_CASE("scenario directories load in index order") {
    const auto dir = scratch_dir("io-scenarios");
    std::vector<ScenarioIndexEntry> entries;
    std::vector<TimeSeries> series;
    for (int i = 0; i < 3; ++i) {
        const ScenarioSpec spec{i == 2 ? FaultClass::Normal : FaultClass::Sgtr, i == 2 ? 0.0 : 0.1 * (i + 1), 40,
                                static_cast<std::uint64_t>(i)};
        series.push_back(generate_scenario(spec, 3, 60));
        const std::string file = "s" + std::to_string(i) + ".csv";
        std::ofstream out(dir / file);
        write_scenario_csv(out, series.back());
        entries.push_back({file, spec});
    }
    std::ofstream idx(dir / "index.csv");
    write_scenario_index(idx, entries);
    idx.close();
    std::ifstream again(dir / "index.csv");
    const auto parsed = read_scenario_index(again);
    REQUIRE(parsed.size() == 3);
    CHECK(parsed[1].spec.severity == 0.2);
    CHECK(parsed[2].spec.fault == FaultClass::Normal);
    const auto loaded = load_scenarios(dir);
    REQUIRE(loaded.size() == 3);
    for (int i = 0; i < 3; ++i) CHECK((loaded[static_cast<std::size_t>(i)].values.array() == series[static_cast<std::size_t>(i)].values.array()).all());
    CHECK(loaded[0].scenario.fault == FaultClass::Sgtr);
    CHECK_THROWS(load_scenarios(dir / "none"));
}

TEST_CASE("datasets round-trip through the binary container") {
    const auto dir = scratch_dir("io-dataset");
    const auto ds = small_dataset();
    write_dataset(dir / "d.etcnds", ds, R"({"noise": 0.05})");
    const auto back = read_dataset(dir / "d.etcnds");
    CHECK(back.width == 20);
    CHECK(back.step == 3);
    CHECK((back.stats.x_min.array() == ds.stats.x_min.array()).all());
    CHECK((back.stats.x_max.array() == ds.stats.x_max.array()).all());
    auto same = [](const SampleSet& a, const SampleSet& b) {
        if (a.size() != b.size()) return false;
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a.label(i) != b.label(i)) return false;
            if (!(a.window(i).array() == b.window(i).array()).all()) return false;
        }
        return true;
    };
    CHECK(same(ds.train, back.train));
    CHECK(same(ds.validation, back.validation));
    CHECK(same(ds.test, back.test));
    const auto manifest = nlohmann::json::parse(read_dataset_manifest(dir / "d.etcnds"));
    CHECK(manifest.at("width") == 20);
    CHECK(manifest.at("preprocess").at("noise") == 0.05);

    const auto m = membership_of(ds);
    CHECK(m.train.size() == ds.train.size());
    write_file_atomic(dir / "junk", "not a dataset");
    CHECK_THROWS(read_dataset(dir / "junk"));
    const std::string bytes = read_file(dir / "d.etcnds");
    write_file_atomic(dir / "short", bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS(read_dataset(dir / "short"));
}

TEST_CASE("window statistics CSV layout") {
    TimeSeries ts;
    ts.values.resize(2, 4);
    ts.values << 1, 2, 3, 4, 5, 5, 5, 5;
    ts.labels.assign(4, 0);
    const std::vector<int> widths{2};
    std::ostringstream out;
    write_window_statistics_csv(out, window_statistics(ts, widths).front());
    CHECK(out.str() ==
          "end_time,var01_mean,var01_variance,var01_std,var02_mean,var02_variance,var02_std\n"
          "1,1.5,0.25,0.5,5,0,0\n2,2.5,0.25,0.5,5,0,0\n3,3.5,0.25,0.5,5,0,0\n");
}

TEST_CASE("checkpoints restore the model bit-exactly") {
    const auto ds = small_dataset();
    for (Variant v : {Variant::Tcn, Variant::TcnSaRes1, Variant::Etcn}) {
        NetworkConfig cfg;
        cfg.n_vars = 4;
        cfg.window_width = 20;
        cfg.tcn_channels = 3;
        cfg.tcn_dilations = {1, 2};
        cfg = with_variant(cfg, v);
        Checkpoint ck{init_model(cfg, 5), ds.stats, 20};
        ck.model.buffers.res_bn1.mean.setConstant(0.123456789);
        const auto dir = scratch_dir("io-ckpt");
        save_checkpoint(dir / "m.json", ck);
        const auto back = load_checkpoint(dir / "m.json");
        CHECK(back.window_width == 20);
        CHECK(back.model.config.sa_enabled == cfg.sa_enabled);
        CHECK(back.model.config.res_block_kind == cfg.res_block_kind);
        CHECK(back.model.config.tcn_dilations == cfg.tcn_dilations);
        visit_parameters([](const std::string& name, const auto& a, const auto& b) {
            INFO(name);
            CHECK((a.array() == b.array()).all());
        }, ck.model.params, back.model.params);
        CHECK((back.model.buffers.res_bn1.mean.array() == ck.model.buffers.res_bn1.mean.array()).all());
        const Matrix x = make_batch(ds.test, std::vector<std::size_t>{0, 1});
        CHECK(max_abs_diff(network_forward(ck.model, x, Mode::Eval).logits,
                           network_forward(back.model, x, Mode::Eval).logits) == 0.0);
        CHECK_NOTHROW(check_compatible(back, ds));
    }
}

TEST_CASE("malformed or mismatched checkpoints are rejected") {
    const auto ds = small_dataset();
    NetworkConfig cfg;
    cfg.n_vars = 4;
    cfg.window_width = 20;
    cfg.tcn_channels = 3;
    const Checkpoint ck{init_model(cfg, 1), ds.stats, 20};
    auto doc = nlohmann::json::parse(serialize_checkpoint(ck));
    CHECK_THROWS(parse_checkpoint("{"));
    auto wrong_format = doc;
    wrong_format["format"] = "other";
    CHECK_THROWS(parse_checkpoint(wrong_format.dump()));
    auto future = doc;
    future["version"] = 99;
    CHECK_THROWS(parse_checkpoint(future.dump()));
    auto missing = doc;
    missing["params"].erase("head.w");
    CHECK_THROWS(parse_checkpoint(missing.dump()));
    auto extra = doc;
    extra["params"]["bogus"] = doc["params"]["head.b"];
    CHECK_THROWS(parse_checkpoint(extra.dump()));
    auto reshaped = doc;
    reshaped["params"]["head.w"]["rows"] = 2;
    CHECK_THROWS(parse_checkpoint(reshaped.dump()));

    Checkpoint narrow = ck;
    narrow.window_width = 30;
    CHECK_THROWS_WITH(check_compatible(narrow, ds), doctest::Contains("incompatible checkpoint"));
    Checkpoint shifted = ck;
    shifted.normalizer.x_max(0) += 1.0;
    CHECK_THROWS(check_compatible(shifted, ds));
}

TEST_CASE("network config JSON round-trips") {
    NetworkConfig c;
    c.tcn_dilations = {1, 3};
    c.dropout_rate = 0.123;
    c.res_block_kind = ResBlockKind::Identity;
    const auto back = network_config_from_json(network_config_json(c));
    CHECK(back.tcn_dilations == c.tcn_dilations);
    CHECK(back.dropout_rate == c.dropout_rate);
    CHECK(back.res_block_kind == ResBlockKind::Identity);
    CHECK(back.window_width == c.window_width);
}
