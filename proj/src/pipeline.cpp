#include "geoflow/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace geoflow {
namespace fs = std::filesystem;
using nlohmann::json;
using tc::Tensor;

namespace {

std::string number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string objective_tag(Objective o) { return o == Objective::FlowMatching ? "fm" : "ddpm"; }

Objective parse_objective_tag(const std::string& s) {
    if (s == "fm") return Objective::FlowMatching;
    if (s == "ddpm") return Objective::Diffusion;
    throw ConfigError("unknown objective '" + s + "'");
}

struct CaseTensors {
    std::vector<Tensor<float>> x, cond;
};

CaseTensors load_cases(const Manifest& m, Split s) {
    CaseTensors out;
    for (const CaseEntry* c : m.in_split(s)) {
        out.x.push_back(embed(read_categorical(m.path_of(c->truth))));
        out.cond.push_back(condition_channels(read_condition(m.path_of(c->condition))));
    }
    return out;
}

}  // namespace

RunLock::RunLock(const fs::path& dir) {
    fs::create_directories(dir);
    file_ = dir / ".geoflow.lock";
    const int fd = ::open(file_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) throw ConfigError("run directory " + dir.string() + " is locked by another command");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
}

RunLock::~RunLock() {
    std::error_code ec;
    fs::remove(file_, ec);
}

void parallel_for(std::int64_t n, int threads, const std::function<void(std::int64_t)>& body) {
    if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    const auto workers = static_cast<std::int64_t>(std::min<std::int64_t>(threads, n));
    if (workers <= 1) {
        for (std::int64_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::int64_t> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
    std::vector<std::thread> pool;
    for (std::int64_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::int64_t i; (i = next++) < n;) {
                try {
                    body(i);
                } catch (...) {
                    errors[static_cast<std::size_t>(i)] = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

GeneratedCase generate_case(const RunConfig& cfg, const StoryRanges& ranges, std::uint64_t seed) {
    GeneratedCase g;
    g.story = sample_story(Rng::mix(seed, 0), cfg.dims, ranges);
    g.truth = realize(g.story);
    g.condition = sample_sparse(g.truth, cfg.dataset.boreholes, Rng::mix(seed, 1));
    const auto props = map_properties(g.truth, default_property_table());
    const auto rx = drape_receivers(g.truth, cfg.survey);
    const double s = cfg.survey.voxel_size;
    g.gravity = add_noise(forward_gravity(props.density, s, rx, cfg.survey.nx, cfg.survey.ny), Rng::mix(seed, 2));
    g.magnetics = add_noise(forward_magnetics(props.susceptibility, cfg.inducing, s, rx, cfg.survey.nx, cfg.survey.ny),
                            Rng::mix(seed, 3));
    return g;
}

Manifest gen_dataset(const RunConfig& cfg, const fs::path& dir) {
    validate_run_config(cfg);
    const SplitRanges ranges = split_ranges(cfg.ranges, cfg.ood_splits);
    const SplitCounts counts = split_counts(cfg.dataset);
    fs::create_directories(dir);

    Manifest m;
    m.generation_seed = cfg.seeds.generation;
    m.dims = cfg.dims;
    m.root = dir;
    for (int i = 0; i < cfg.dataset.cases; ++i) {
        CaseEntry c;
        char id[32];
        std::snprintf(id, sizeof id, "case_%04d", i);
        c.id = id;
        c.split = i < counts.train ? Split::Train : i < counts.train + counts.val ? Split::Val : Split::Ood;
        c.seed = Rng::mix(cfg.seeds.generation, static_cast<std::uint64_t>(i));
        const std::string base = "cases/" + c.id + "/";
        c.truth = base + "truth.gvl";
        c.condition = base + "condition.gvl";
        c.gravity = base + "gravity.gvl";
        c.magnetics = base + "magnetics.gvl";
        m.cases.push_back(std::move(c));
    }
    parallel_for(cfg.dataset.cases, cfg.threads, [&](std::int64_t i) {
        const CaseEntry& c = m.cases[static_cast<std::size_t>(i)];
        const auto g = generate_case(cfg, c.split == Split::Ood ? ranges.ood : ranges.train, c.seed);
        write_categorical(m.path_of(c.truth), g.truth);
        write_condition(m.path_of(c.condition), g.condition);
        write_fieldmap(m.path_of(c.gravity), g.gravity);
        write_fieldmap(m.path_of(c.magnetics), g.magnetics);
    });
    write_file_atomic(dir / "config.json", to_json(cfg).dump(2) + "\n");
    write_manifest(dir / "manifest.json", m);
    return m;
}

void forward_geophys(const RunConfig& cfg, const Manifest& m) {
    parallel_for(static_cast<std::int64_t>(m.cases.size()), cfg.threads, [&](std::int64_t i) {
        const CaseEntry& c = m.cases[static_cast<std::size_t>(i)];
        const auto truth = read_categorical(m.path_of(c.truth));
        const auto props = map_properties(truth, default_property_table());
        const auto rx = drape_receivers(truth, cfg.survey);
        const double s = cfg.survey.voxel_size;
        write_fieldmap(m.path_of(c.gravity),
                       add_noise(forward_gravity(props.density, s, rx, cfg.survey.nx, cfg.survey.ny),
                                 Rng::mix(c.seed, 2)));
        write_fieldmap(m.path_of(c.magnetics),
                       add_noise(forward_magnetics(props.susceptibility, cfg.inducing, s, rx, cfg.survey.nx,
                                                   cfg.survey.ny),
                                 Rng::mix(c.seed, 3)));
    });
}

std::string model_name(Objective objective, bool attention) {
    return objective_tag(objective) + (attention ? "_attention" : "_plain");
}

Checkpoint make_checkpoint(const TrainedModel& t) {
    Checkpoint ck;
    const auto& opt = t.state.optimizer;
    ck.metadata = {
        {"name", model_name(t.objective, t.model.config().attention)},
        {"model", to_json(t.model.config())},
        {"objective", objective_tag(t.objective)},
        {"diffusion_steps", t.diffusion_steps},
        {"step", t.state.step},
        {"rng_state", t.state.rng.save_state()},
        {"loss_history", t.state.loss_history},
        {"adam",
         {{"step", opt.step},
          {"learning_rate", opt.config.learning_rate},
          {"beta1", opt.config.beta1},
          {"beta2", opt.config.beta2},
          {"epsilon", opt.config.epsilon}}},
    };
    for (const auto& [name, var] : t.model.parameter_set()) ck.tensors["param/" + name] = var.value();
    for (const auto& [name, m] : opt.first_moment) ck.tensors["adam.m/" + name] = m;
    for (const auto& [name, v] : opt.second_moment) ck.tensors["adam.v/" + name] = v;
    return ck;
}

TrainedModel restore_checkpoint(const Checkpoint& ck) {
    const json& md = ck.metadata;
    try {
        TrainedModel t{UNet3D<float>(unet_config_from_json(md.at("model")), 0),
                       parse_objective_tag(md.at("objective").get<std::string>()),
                       md.at("diffusion_steps").get<int>(),
                       {}};
        t.state.step = md.at("step").get<std::int64_t>();
        t.state.rng.load_state(md.at("rng_state").get<std::string>());
        t.state.loss_history = md.at("loss_history").get<std::vector<double>>();
        const json& a = md.at("adam");
        auto& opt = t.state.optimizer;
        opt.step = a.at("step").get<std::int64_t>();
        opt.config.learning_rate = a.at("learning_rate").get<double>();
        opt.config.beta1 = a.at("beta1").get<double>();
        opt.config.beta2 = a.at("beta2").get<double>();
        opt.config.epsilon = a.at("epsilon").get<double>();

        auto& params = *t.model.parameters();
        std::size_t used = 0;
        for (auto& [name, var] : params) {
            const auto it = ck.tensors.find("param/" + name);
            if (it == ck.tensors.end()) throw ConfigError("checkpoint lacks parameter '" + name + "'");
            if (it->second.shape() != var.shape())
                throw ConfigError("checkpoint parameter '" + name + "' has shape " + tc::shape_str(it->second.shape()) +
                                  ", model expects " + tc::shape_str(var.shape()));
            var.mutable_value() = it->second;
            ++used;
        }
        for (const auto& [key, tensor] : ck.tensors) {
            const auto slash = key.find('/');
            const std::string kind = key.substr(0, slash), name = key.substr(slash + 1);
            if (kind == "param") continue;
            if ((kind != "adam.m" && kind != "adam.v") || !params.contains(name) ||
                params.at(name).shape() != tensor.shape())
                throw ConfigError("checkpoint tensor '" + key + "' does not match the model");
            (kind == "adam.m" ? opt.first_moment : opt.second_moment)[name] = tensor;
            ++used;
        }
        if (used != ck.tensors.size()) throw ConfigError("checkpoint holds tensors the model does not use");
        return t;
    } catch (const json::exception& e) {
        throw DataError(std::string("checkpoint metadata: ") + e.what());
    }
}

fs::path train_model(const RunConfig& cfg, const Manifest& manifest, Objective objective, bool attention,
                     const fs::path& dir, std::ostream* progress) {
    validate_run_config(cfg);
    if (!(manifest.dims == cfg.dims)) throw ConfigError("manifest extents differ from the configuration");
    const auto train = load_cases(manifest, Split::Train);
    const auto val = load_cases(manifest, Split::Val);
    if (train.x.empty()) throw DataError("manifest has no training cases");

    UNetConfig mc = cfg.model;
    mc.attention = attention;
    const std::uint64_t seed = cfg.seeds.training;
    TrainedModel t{UNet3D<float>(mc, Rng::mix(seed, 1)), objective, cfg.training.diffusion_steps, {}};
    t.state.rng = Rng(Rng::mix(seed, 2));
    t.state.optimizer.config.learning_rate = cfg.training.learning_rate;
    const TrainConfig tc{cfg.training.batch_size, cfg.training.learning_rate, cfg.training.clip_norm};
    const NoiseSchedule schedule = scaled_linear_schedule(cfg.training.diffusion_steps);

    const std::string name = model_name(objective, attention);
    const fs::path out = dir / "models" / name;
    fs::create_directories(out);
    std::string csv = "epoch,train_loss,val_loss\n";
    for (int epoch = 1; epoch <= cfg.training.epochs; ++epoch) {
        const double train_loss = train_epoch<float>(t.model, objective, train.x, train.cond, t.state, tc, &schedule);
        double val_loss = std::nan("");
        if (!val.x.empty()) {
            // Fixed noise every epoch keeps the curve comparable across epochs.
            const std::uint64_t vs = Rng::mix(seed, 3);
            val_loss = objective == Objective::FlowMatching
                           ? fm_validation_loss<float>(t.model, val.x, val.cond, vs, cfg.training.batch_size)
                           : ddpm_validation_loss<float>(t.model, val.x, val.cond, schedule, vs,
                                                         cfg.training.batch_size);
        }
        csv += std::to_string(epoch) + "," + number(train_loss) + "," + number(val_loss) + "\n";
        write_file_atomic(out / "loss.csv", csv);
        if (progress)
            *progress << name << " epoch " << epoch << "/" << cfg.training.epochs << " train " << train_loss << " val "
                      << val_loss << std::endl;
    }
    write_checkpoint(out / "checkpoint.gck", make_checkpoint(t));
    return out / "checkpoint.gck";
}

std::vector<EpochLog> read_loss_log(const fs::path& path) {
    std::istringstream in(read_file(path));
    std::string line;
    std::getline(in, line);
    if (line != "epoch,train_loss,val_loss") throw DataError(path.string() + ": unexpected header");
    std::vector<EpochLog> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        EpochLog e;
        char* end = nullptr;
        e.epoch = static_cast<int>(std::strtol(line.c_str(), &end, 10));
        if (*end != ',') throw DataError(path.string() + ": bad row '" + line + "'");
        e.train_loss = std::strtod(end + 1, &end);
        if (*end != ',') throw DataError(path.string() + ": bad row '" + line + "'");
        e.val_loss = std::strtod(end + 1, &end);
        out.push_back(e);
    }
    return out;
}

fs::path sample_split(const fs::path& checkpoint, const Manifest& manifest, Split split, int steps,
                      std::uint64_t seed, const fs::path& dir) {
    const Checkpoint ck = read_checkpoint(checkpoint);
    TrainedModel t = restore_checkpoint(ck);
    const UNetConfig& mc = t.model.config();
    check_spatial_extent(mc, {1, mc.in_channels, manifest.dims.x, manifest.dims.y, manifest.dims.z});
    if (steps < 1) throw ConfigError("sampler steps must be >= 1");
    const std::string name = ck.metadata.at("name").get<std::string>();
    const fs::path out = dir / "predictions" / name;
    const NoiseSchedule schedule =
        t.objective == Objective::Diffusion ? scaled_linear_schedule(t.diffusion_steps) : NoiseSchedule{};
    // Samples share one model, so cases run in order on this thread.
    for (std::size_t i = 0; i < manifest.cases.size(); ++i) {
        const CaseEntry& c = manifest.cases[i];
        if (c.split != split) continue;
        const auto cond = read_condition(manifest.path_of(c.condition));
        const std::uint64_t s = Rng::mix(seed, i);
        const auto r = t.objective == Objective::FlowMatching ? sample_ode<float>(t.model, cond, steps, s)
                                                              : sample_ancestral<float>(t.model, cond, schedule, s);
        write_categorical(out / (c.id + ".gvl"), r.volume);
    }
    return out;
}

std::string baseline_name(BaselineMethod m) { return m == BaselineMethod::Depthwise ? "depthwise" : "polygonal"; }

BaselineMethod parse_baseline(const std::string& s) {
    if (s == "depthwise") return BaselineMethod::Depthwise;
    if (s == "polygonal") return BaselineMethod::Polygonal;
    throw ConfigError("unknown baseline '" + s + "' (depthwise or polygonal)");
}

fs::path run_baseline(const Manifest& m, BaselineMethod method, Split split, const fs::path& dir, int threads) {
    const fs::path out = dir / "predictions" / baseline_name(method);
    const auto cases = m.in_split(split);
    parallel_for(static_cast<std::int64_t>(cases.size()), threads, [&](std::int64_t i) {
        const CaseEntry& c = *cases[static_cast<std::size_t>(i)];
        const auto cond = read_condition(m.path_of(c.condition));
        write_categorical(out / (c.id + ".gvl"),
                          method == BaselineMethod::Depthwise ? baseline_depthwise(cond) : baseline_polygonal(cond));
    });
    return out;
}

namespace {

json metrics_json(const MetricsReport& r) {
    return {{"acc_incl_air", r.acc_incl_air}, {"acc_excl_air", r.acc_excl_air}, {"miou_excl_air", r.miou_excl_air}};
}

}  // namespace

json evaluate_predictions(const fs::path& pred_dir, const Manifest& m, Split split) {
    ConfusionMatrix pooled;
    json per_case = json::array();
    for (const CaseEntry* c : m.in_split(split)) {
        const fs::path p = pred_dir / (c->id + ".gvl");
        if (!fs::exists(p)) continue;
        const auto cm = confusion(read_categorical(p), read_categorical(m.path_of(c->truth)));
        for (int a = 0; a < kNumCategories; ++a)
            for (int b = 0; b < kNumCategories; ++b)
                pooled.counts[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] +=
                    cm.counts[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
        json e = metrics_json(metrics_from_confusion(cm));
        e["id"] = c->id;
        per_case.push_back(e);
    }
    if (per_case.empty())
        throw DataError("no predictions for split '" + split_name(split) + "' in " + pred_dir.string());
    const MetricsReport r = metrics_from_confusion(pooled);
    json cats = json::array();
    for (int k = 0; k < kNumCategories; ++k) {
        const auto i = static_cast<std::size_t>(k);
        cats.push_back({{"id", k + 1},
                        {"name", std::string(facies_name(k + 1))},
                        {"present", r.present[i]},
                        {"proportion", r.proportion[i]},
                        {"recall", r.recall[i]},
                        {"iou", r.iou[i]}});
    }
    json confusion_rows = json::array();
    for (const auto& row : pooled.counts) confusion_rows.push_back(row);
    json j = {{"method", pred_dir.filename().string()},
              {"split", split_name(split)},
              {"cases", per_case.size()},
              {"pooled", metrics_json(r)},
              {"categories", cats},
              {"confusion", confusion_rows},
              {"per_case", per_case}};
    write_file_atomic(pred_dir / "metrics.json", j.dump(2) + "\n");
    return j;
}

}  // namespace geoflow
