#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sys/wait.h>

#include "geoflow/pipeline.hpp"
#include "support/temp_dir.hpp"

using namespace geoflow;
using geoflow::testing::read_tree;
using geoflow::testing::TempDir;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

RunConfig tiny_run(int cases = 6) {
    RunConfig c;
    c.dims = {8, 8, 8};
    c.ranges = default_ranges(c.dims);
    c.dataset.cases = cases;
    c.dataset.boreholes = 2;
    c.survey.nx = c.survey.ny = 6;
    c.model.levels = 2;
    c.model.base_channels = 4;
    c.model.gn_groups = 2;
    c.model.time_embed_dim = 8;
    c.model.time_hidden = 8;
    c.training.epochs = 1;
    c.training.batch_size = 2;
    c.training.diffusion_steps = 30;
    c.sampler.ode_steps = 3;
    c.threads = 1;
    return c;
}

CategoricalVolume story_volume(std::uint64_t seed, Dims d) { return realize(sample_story(seed, d, default_ranges(d))); }

std::string bytes_of(std::initializer_list<int> v) {
    std::string s;
    for (int b : v) s.push_back(static_cast<char>(b));
    return s;
}

#ifdef GEOFLOW_CLI
int run_cli(const std::string& args) {
    const std::string cmd = std::string(GEOFLOW_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}
#endif

}  // namespace

TEST(VolumeFile, CategoricalLayoutIsLittleEndianFixedHeader) {
    TempDir dir;
    CategoricalVolume v({1, 1, 2}, 1);
    v.at(0, 0, 1) = 7;
    write_categorical(dir / "v.gvl", v);
    EXPECT_EQ(read_file(dir / "v.gvl"), std::string("GVL1") + bytes_of({1, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 1, 7}));
}

TEST(VolumeFile, EveryKindRoundTripsBitExactly) {
    TempDir dir;
    const auto v = story_volume(3, {8, 6, 10});
    write_categorical(dir / "a.gvl", v);
    EXPECT_EQ(read_categorical(dir / "a.gvl"), v);

    const auto c = sample_sparse(v, 5, 2);
    write_condition(dir / "b.gvl", c);
    EXPECT_EQ(read_condition(dir / "b.gvl"), c);

    Rng rng(4);
    tc::Tensor<float> cv({3, 8, 6, 10});
    for (auto& x : cv.storage()) x = static_cast<float>(rng.normal());
    cv[5] = -0.0f;
    write_continuous(dir / "c.gvl", cv);
    const auto back = read_continuous(dir / "c.gvl");
    ASSERT_EQ(back.shape(), cv.shape());
    EXPECT_EQ(std::memcmp(back.data().data(), cv.data().data(), 4 * static_cast<std::size_t>(cv.numel())), 0);

    FieldMap m;
    m.nx = 4;
    m.ny = 3;
    for (int i = 0; i < 12; ++i) m.values.push_back(static_cast<float>(rng.normal()));
    write_fieldmap(dir / "d.gvl", m);
    EXPECT_EQ(read_fieldmap(dir / "d.gvl").values, m.values);
    const auto h = read_volume_header(dir / "d.gvl");
    EXPECT_EQ(h.kind, VolumeKind::FieldMap);
    EXPECT_EQ(h.x, 4u);
    EXPECT_EQ(h.y, 3u);
    EXPECT_EQ(h.z, 1u);
}

TEST(VolumeFile, PayloadLengthEqualsExtentsTimesElementSize) {
    TempDir dir;
    tc::Tensor<float> cv({9, 2, 3, 4}, 0.5f);
    write_continuous(dir / "c.gvl", cv);
    EXPECT_EQ(fs::file_size(dir / "c.gvl"), 19u + 9u * 24u * 4u);
    write_categorical(dir / "a.gvl", CategoricalVolume({2, 3, 4}, 2));
    EXPECT_EQ(fs::file_size(dir / "a.gvl"), 19u + 24u);
}

TEST(VolumeFile, CorruptFilesAreDataErrors) {
    TempDir dir;
    write_categorical(dir / "a.gvl", CategoricalVolume({2, 2, 2}, 3));
    std::string good = read_file(dir / "a.gvl");

    EXPECT_THROW(read_categorical(dir / "missing.gvl"), DataError);
    EXPECT_THROW(read_condition(dir / "a.gvl"), DataError);  // wrong kind

    write_file_atomic(dir / "t.gvl", good.substr(0, good.size() - 1));
    EXPECT_THROW(read_categorical(dir / "t.gvl"), DataError);
    write_file_atomic(dir / "l.gvl", good + "x");
    EXPECT_THROW(read_categorical(dir / "l.gvl"), DataError);
    std::string bad = good;
    bad[0] = 'X';
    write_file_atomic(dir / "m.gvl", bad);
    EXPECT_THROW(read_categorical(dir / "m.gvl"), DataError);
    bad = good;
    bad.back() = 12;  // invalid category
    write_file_atomic(dir / "c.gvl", bad);
    EXPECT_THROW(read_categorical(dir / "c.gvl"), DataError);
    bad = good;
    bad[6] = 9;  // unknown kind
    write_file_atomic(dir / "k.gvl", bad);
    EXPECT_THROW(read_volume_header(dir / "k.gvl"), DataError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    TempDir dir;
    Checkpoint ck;
    ck.metadata = {{"a", 1}, {"loss", {0.1, 1.0 / 3.0, 2.5e-300}}, {"s", "x"}};
    Rng rng(1);
    tc::Tensor<float> t({2, 3, 1});
    for (auto& x : t.storage()) x = static_cast<float>(rng.normal());
    ck.tensors["w"] = t;
    ck.tensors["b"] = tc::Tensor<float>({4}, 0.25f);
    write_checkpoint(dir / "c.gck", ck);
    EXPECT_EQ(read_checkpoint(dir / "c.gck"), ck);
    const std::string bytes = read_file(dir / "c.gck");
    write_file_atomic(dir / "t.gck", bytes.substr(0, bytes.size() - 3));
    EXPECT_THROW(read_checkpoint(dir / "t.gck"), DataError);
}

TEST(Checkpoint, RestoredTrainingContinuesIdentically) {
    TempDir dir;
    const RunConfig cfg = tiny_run();
    const auto v = story_volume(2, cfg.dims);
    const auto x1 = stack<float>({embed(v)});
    const auto c = stack<float>({condition_channels(sample_sparse(v, 2, 1))});
    const TrainConfig tcfg{1, 1e-3, 1.0};

    TrainedModel a{UNet3D<float>(cfg.model, 5), Objective::FlowMatching, 30, {}};
    a.state.rng = Rng(9);
    for (int i = 0; i < 2; ++i) fm_training_step<float>(a.model, x1, c, a.state, tcfg);
    write_checkpoint(dir / "c.gck", make_checkpoint(a));
    TrainedModel b = restore_checkpoint(read_checkpoint(dir / "c.gck"));
    EXPECT_EQ(make_checkpoint(b), make_checkpoint(a));

    fm_training_step<float>(a.model, x1, c, a.state, tcfg);
    fm_training_step<float>(b.model, x1, c, b.state, tcfg);
    EXPECT_EQ(make_checkpoint(b), make_checkpoint(a));
}

TEST(Checkpoint, ShapeMismatchIsConfigError) {
    const RunConfig cfg = tiny_run();
    TrainedModel a{UNet3D<float>(cfg.model, 5), Objective::FlowMatching, 30, {}};
    auto ck = make_checkpoint(a);
    ck.metadata["model"]["base_channels"] = 8;
    EXPECT_THROW(restore_checkpoint(ck), ConfigError);
    ck = make_checkpoint(a);
    ck.tensors.erase(ck.tensors.begin());
    EXPECT_THROW(restore_checkpoint(ck), ConfigError);
    ck = make_checkpoint(a);
    ck.tensors["param/extra"] = tc::Tensor<float>({1});
    EXPECT_THROW(restore_checkpoint(ck), ConfigError);
}

TEST(RunConfigJson, RoundTripsAndAppliesOverrides) {
    RunConfig c = tiny_run();
    c.seeds = {11, 12, 13};
    c.ood_splits = {{"tilt_dip", 0.25}};
    EXPECT_EQ(run_config_from_json(to_json(c)), c);

    const RunConfig d = run_config_from_json(json::parse(R"({"dims": [32, 16, 16], "ranges": {"tilt_dip": [1, 2]}})"));
    EXPECT_EQ(d.dims, (Dims{32, 16, 16}));
    EXPECT_EQ(d.ranges.tilt_dip, (Range{1, 2}));
    EXPECT_EQ(d.ranges.layer_thickness, default_ranges(d.dims).layer_thickness);
    EXPECT_EQ(d.training, TrainingConfig{});
}

TEST(RunConfigJson, InvalidConfigsAreConfigErrors) {
    for (const char* text : {R"({"bogus": 1})", R"({"training": {"epochs": "ten"}})", R"({"dims": [16, 16]})",
                             R"({"ranges": {"tilt_dip": [5, 1]}})", R"({"dataset": {"boreholes": 1000}})",
                             R"({"dims": [10, 10, 10]})", R"({"ood_splits": [{"parameter": "nope"}]})",
                             R"({"dataset": {"cases": 1, "ood_fraction": 0.9}})"})
        EXPECT_THROW(run_config_from_json(json::parse(text)), ConfigError) << text;
}

TEST(RunConfigJson, OutputRootOverride) {
    RunConfig c;
    c.output_dir = "runs/a";
    ::setenv("GEOFLOW_OUTPUT_ROOT", "/data", 1);
    EXPECT_EQ(resolve_output_dir(c), fs::path("/data/runs/a"));
    c.output_dir = "/abs";
    EXPECT_EQ(resolve_output_dir(c), fs::path("/abs"));
    ::unsetenv("GEOFLOW_OUTPUT_ROOT");
    c.output_dir = "runs/a";
    EXPECT_EQ(resolve_output_dir(c), fs::path("runs/a"));
}

TEST(Splits, CountsFollowFractions) {
    DatasetConfig d;
    auto c = split_counts(d);
    EXPECT_EQ(c.ood, 30);
    EXPECT_EQ(c.val, 12);
    EXPECT_EQ(c.train, 108);
    d.cases = 10;
    c = split_counts(d);
    EXPECT_EQ(c.train + c.val + c.ood, 10);
    EXPECT_EQ(c.ood, 2);
    EXPECT_EQ(c.val, 1);
}

TEST(Splits, OodRangesAreDisjointFromTraining) {
    const auto r = default_ranges({16, 16, 16});
    const auto s = split_ranges(r, {{"fold_amplitude", 0.5}, {"tilt_dip", 0.4}});
    EXPECT_LT(s.train.fold_amplitude.max, s.ood.fold_amplitude.min);
    EXPECT_LT(s.train.tilt_dip.max, s.ood.tilt_dip.min);
    EXPECT_EQ(s.train.fold_amplitude.min, r.fold_amplitude.min);
    EXPECT_EQ(s.ood.tilt_dip.max, r.tilt_dip.max);
    EXPECT_EQ(s.train.layer_count, r.layer_count);

    // Sampled stories honour their side of the split.
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto story = sample_story(seed, {16, 16, 16}, s.ood);
        for (const auto& e : story.events)
            if (auto t = std::get_if<Tilt>(&e)) EXPECT_TRUE(s.ood.tilt_dip.contains(t->dip_deg));
    }
}

TEST(Dataset, GenerationIsDeterministicAndCounted) {
    TempDir a, b;
    RunConfig cfg = tiny_run(2);
    cfg.dataset.ood_fraction = 0.5;
    cfg.dataset.val_fraction = 0.0;
    const Manifest m = gen_dataset(cfg, a.path());
    gen_dataset(cfg, b.path());
    EXPECT_EQ(read_tree(a.path()), read_tree(b.path()));
    ASSERT_EQ(m.cases.size(), 2u);
    EXPECT_EQ(m.in_split(Split::Train).size(), 1u);
    EXPECT_EQ(m.in_split(Split::Ood).size(), 1u);
    const Manifest back = read_manifest(a / "manifest.json");
    EXPECT_EQ(back.cases, m.cases);
    EXPECT_EQ(load_run_config(a / "config.json"), cfg);
}

TEST(Dataset, ParallelGenerationMatchesSerial) {
    TempDir a, b;
    RunConfig cfg = tiny_run(5);
    gen_dataset(cfg, a.path());
    cfg.threads = 3;
    gen_dataset(cfg, b.path());
    auto ta = read_tree(a.path()), tb = read_tree(b.path());
    ta.erase("config.json"), tb.erase("config.json");
    EXPECT_EQ(ta, tb);
}

TEST(Dataset, ManifestValidationCatchesBrokenRuns) {
    TempDir dir;
    const Manifest m = gen_dataset(tiny_run(3), dir.path());
    Manifest dup = m;
    dup.cases[1].id = dup.cases[0].id;
    write_manifest(dir / "dup.json", dup);
    EXPECT_THROW(read_manifest(dir / "dup.json"), DataError);
    fs::remove(dir / m.cases[2].gravity);
    EXPECT_THROW(read_manifest(dir / "manifest.json"), DataError);
}

TEST(Dataset, ForwardGeophysReproducesStoredMaps) {
    TempDir dir;
    const RunConfig cfg = tiny_run(2);
    const Manifest m = gen_dataset(cfg, dir.path());
    const auto before = read_tree(dir.path());
    forward_geophys(cfg, m);
    EXPECT_EQ(read_tree(dir.path()), before);
}

TEST(Evaluate, TruthAgainstItselfIsPerfect) {
    TempDir dir;
    const Manifest m = gen_dataset(tiny_run(4), dir.path());
    for (const auto* c : m.in_split(Split::Ood))
        fs::copy_file(m.path_of(c->truth), dir / ("predictions/truth/" + c->id + ".gvl"),
                      (fs::create_directories(dir / "predictions/truth"), fs::copy_options::none));
    const json j = evaluate_predictions(dir / "predictions/truth", m, Split::Ood);
    EXPECT_EQ(j["pooled"]["acc_incl_air"], 1.0);
    EXPECT_EQ(j["pooled"]["acc_excl_air"], 1.0);
    EXPECT_EQ(j["pooled"]["miou_excl_air"], 1.0);
    EXPECT_THROW(evaluate_predictions(dir / "predictions/truth", m, Split::Val), DataError);
}

TEST(Report, BaselinesOnlyOmitModelRows) {
    TempDir dir;
    const Manifest m = gen_dataset(tiny_run(4), dir.path());
    for (auto method : {BaselineMethod::Depthwise, BaselineMethod::Polygonal})
        evaluate_predictions(run_baseline(m, method, Split::Ood, dir.path()), m, Split::Ood);
    const std::string rep = build_report(dir.path());
    EXPECT_NE(rep.find("Depth-wise majority"), std::string::npos);
    EXPECT_NE(rep.find("Polygonal nearest borehole"), std::string::npos);
    EXPECT_EQ(rep.find("Flow matching"), std::string::npos);
    EXPECT_EQ(rep.find("DDPM"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "report/loss_curves.csv"));
    EXPECT_EQ(read_file(dir / "report/loss_curves.csv"), "model,epoch,train_loss,val_loss\n");
    EXPECT_TRUE(fs::exists(dir / ("report/slices/truth_" + m.in_split(Split::Ood)[0]->id + "_z.pgm")));
}

TEST(Report, SliceImageIsFixedFunctionOfVolume) {
    CategoricalVolume v({2, 2, 3}, 1);
    v.at(0, 0, 0) = 9;
    v.at(1, 0, 0) = 5;
    v.at(0, 1, 1) = 2;
    // z mid-slice (z = 1), rows along y, columns along x.
    EXPECT_EQ(slice_pgm(v, 2), std::string("P5\n2 2\n255\n") + bytes_of({0, 0, 31, 0}));
    // x mid-slice (x = 1), columns along y, top row first.
    EXPECT_EQ(slice_pgm(v, 0), std::string("P5\n2 3\n255\n") + bytes_of({0, 0, 0, 0, 127, 0}));
    EXPECT_THROW(slice_pgm(v, 3), UsageError);
}

TEST(RunLock, SecondHolderIsRejected) {
    TempDir dir;
    {
        RunLock a(dir.path());
        EXPECT_THROW(RunLock b(dir.path()), ConfigError);
    }
    EXPECT_NO_THROW(RunLock c(dir.path()));
}

TEST(ParallelFor, VisitsEachIndexOnceAndRethrowsLowestFailure) {
    std::vector<int> hits(50, 0);
    parallel_for(50, 4, [&](std::int64_t i) { ++hits[static_cast<std::size_t>(i)]; });
    EXPECT_EQ(std::set<int>(hits.begin(), hits.end()), std::set<int>{1});
    try {
        parallel_for(20, 4, [](std::int64_t i) {
            if (i == 7 || i == 13) throw DataError("fail " + std::to_string(i));
        });
        FAIL() << "no exception";
    } catch (const DataError& e) {
        EXPECT_STREQ(e.what(), "fail 7");
    }
}

TEST(ExitCodes, MapErrorKinds) {
    EXPECT_EQ(exit_code_for(ConfigError("x")), 2);
    EXPECT_EQ(exit_code_for(UsageError("x")), 2);
    EXPECT_EQ(exit_code_for(DataError("x")), 3);
    EXPECT_EQ(exit_code_for(NumericalError("x")), 4);
    EXPECT_EQ(exit_code_for(std::runtime_error("x")), 1);
}

#ifdef GEOFLOW_CLI
TEST(Cli, ExitCodesDistinguishFailures) {
    TempDir dir;
    write_file_atomic(dir / "bad.json", R"({"unknown": 1})");
    EXPECT_EQ(run_cli("gen-dataset --config " + (dir / "bad.json").string()), 2);
    EXPECT_EQ(run_cli("report --run " + (dir / "nothing").string()), 3);
    EXPECT_EQ(run_cli("bogus"), 2);

    write_file_atomic(dir / "cfg.json", to_json(tiny_run(3)).dump());
    EXPECT_EQ(run_cli("gen-dataset --config " + (dir / "cfg.json").string() + " --out " + (dir / "run").string()), 0);
    EXPECT_EQ(run_cli("sample --run " + (dir / "run").string() + " --model fm_attention"), 3);

    // A checkpoint whose model does not fit the run's configuration.
    RunConfig other = tiny_run();
    other.model.base_channels = 8;
    TrainedModel t{UNet3D<float>(other.model, 1), Objective::FlowMatching, 30, {}};
    auto ck = make_checkpoint(t);
    ck.tensors.erase("param/out.w");
    write_checkpoint(dir / "bad.gck", ck);
    EXPECT_EQ(run_cli("sample --run " + (dir / "run").string() + " --checkpoint " + (dir / "bad.gck").string()), 2);
}
#endif

TEST(EndToEnd, SmallRunCompletesAndReExecutesBitIdentically) {
    const auto start = std::chrono::steady_clock::now();
    TempDir a, b;
    auto run = [](const fs::path& dir) {
        RunConfig cfg;
        cfg.dataset.cases = 10;
        cfg.training.epochs = 2;
        cfg.threads = 1;
        const Manifest m = gen_dataset(cfg, dir);
        const auto ck = train_model(cfg, m, Objective::FlowMatching, true, dir);
        evaluate_predictions(sample_split(ck, m, Split::Ood, cfg.sampler.ode_steps, cfg.seeds.sampling, dir), m,
                             Split::Ood);
        evaluate_predictions(run_baseline(m, BaselineMethod::Polygonal, Split::Ood, dir), m, Split::Ood);
        build_report(dir);
    };
    run(a.path());
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    EXPECT_LT(seconds, 600.0);
    EXPECT_EQ(read_manifest(a / "manifest.json").in_split(Split::Ood).size(), 2u);
    EXPECT_EQ(read_loss_log(a / "models/fm_attention/loss.csv").size(), 2u);
    run(b.path());
    EXPECT_EQ(read_tree(a.path()), read_tree(b.path()));
}
