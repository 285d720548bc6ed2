// Command-line front end. Every subcommand works on a run directory that
// holds config.json and manifest.json.

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "geoflow/pipeline.hpp"

namespace fs = std::filesystem;
using namespace geoflow;

namespace {

fs::path resolve_run(const std::string& dir) {
    fs::path p = dir;
    if (p.is_relative())
        if (const char* root = std::getenv("GEOFLOW_OUTPUT_ROOT"); root && *root) p = fs::path(root) / p;
    return p;
}

RunConfig run_config(const fs::path& run) {
    if (!fs::exists(run / "config.json")) throw DataError("no config.json in " + run.string());
    return load_run_config(run / "config.json");
}

Manifest run_manifest(const fs::path& run) { return read_manifest(run / "manifest.json"); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Conditional generative reconstruction of 3D geological volumes from sparse boreholes"};
    app.require_subcommand(1);

    std::string config_path, out_dir, run_dir, objective = "fm", attention = "on", method, split = "ood", model,
                                               checkpoint, pred_dir;
    int epochs = -1, steps = -1;
    std::uint64_t seed = 0;
    bool seed_set = false;

    auto* gen = app.add_subcommand("gen-dataset", "Generate cases, conditions and geophysical maps");
    gen->add_option("--config", config_path, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    gen->add_option("--out", out_dir, "Run directory (default: output_dir of the configuration)");

    auto* train = app.add_subcommand("train", "Train a generative model on the train split");
    train->add_option("--run", run_dir, "Run directory")->required();
    train->add_option("--objective", objective, "fm or ddpm")->check(CLI::IsMember({"fm", "ddpm"}));
    train->add_option("--attention", attention, "on or off")->check(CLI::IsMember({"on", "off"}));
    train->add_option("--epochs", epochs, "Override training.epochs");

    auto* sample = app.add_subcommand("sample", "Sample reconstructions for one split");
    sample->add_option("--run", run_dir, "Run directory")->required();
    sample->add_option("--model", model, "Model name under models/, e.g. fm_attention");
    sample->add_option("--checkpoint", checkpoint, "Checkpoint path (overrides --model)");
    sample->add_option("--split", split, "train, val or ood");
    sample->add_option("--steps", steps, "Euler steps for flow matching (default: sampler.ode_steps)");
    sample->add_option("--seed", seed, "Sampling seed (default: seeds.sampling)")->each([&](const std::string&) {
        seed_set = true;
    });

    auto* base = app.add_subcommand("baseline", "Run a deterministic baseline on one split");
    base->add_option("--run", run_dir, "Run directory")->required();
    base->add_option("--method", method, "depthwise or polygonal")
        ->required()
        ->check(CLI::IsMember({"depthwise", "polygonal"}));
    base->add_option("--split", split, "train, val or ood");

    auto* geo = app.add_subcommand("forward-geophys", "Recompute gravity and magnetic maps for every case");
    geo->add_option("--run", run_dir, "Run directory")->required();

    auto* eval = app.add_subcommand("evaluate", "Score predictions against the truth volumes");
    eval->add_option("--run", run_dir, "Run directory")->required();
    eval->add_option("--method", method, "Prediction set under predictions/");
    eval->add_option("--pred-dir", pred_dir, "Directory of <case>.gvl predictions (overrides --method)");
    eval->add_option("--split", split, "train, val or ood");

    auto* rep = app.add_subcommand("report", "Write comparison tables, slice images and loss curves");
    rep->add_option("--run", run_dir, "Run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) {
            const RunConfig cfg = load_run_config(config_path);
            const fs::path dir = out_dir.empty() ? resolve_output_dir(cfg) : resolve_run(out_dir);
            RunLock lock(dir);
            const Manifest m = gen_dataset(cfg, dir);
            const auto c = split_counts(cfg.dataset);
            std::cout << "wrote " << m.cases.size() << " cases (" << c.train << " train, " << c.val << " val, "
                      << c.ood << " ood) to " << dir.string() << "\n";
        } else if (train->parsed()) {
            const fs::path dir = resolve_run(run_dir);
            RunLock lock(dir);
            RunConfig cfg = run_config(dir);
            if (epochs >= 0) cfg.training.epochs = epochs;
            const auto path = train_model(cfg, run_manifest(dir),
                                          objective == "fm" ? Objective::FlowMatching : Objective::Diffusion,
                                          attention == "on", dir, &std::cout);
            std::cout << "wrote " << path.string() << "\n";
        } else if (sample->parsed()) {
            const fs::path dir = resolve_run(run_dir);
            RunLock lock(dir);
            const RunConfig cfg = run_config(dir);
            fs::path ck = checkpoint;
            if (ck.empty()) {
                if (model.empty()) throw ConfigError("sample needs --model or --checkpoint");
                ck = dir / "models" / model / "checkpoint.gck";
            }
            if (!fs::exists(ck)) throw DataError("checkpoint " + ck.string() + " not found");
            const auto out = sample_split(ck, run_manifest(dir), parse_split(split),
                                          steps > 0 ? steps : cfg.sampler.ode_steps,
                                          seed_set ? seed : cfg.seeds.sampling, dir);
            std::cout << "wrote " << out.string() << "\n";
        } else if (base->parsed()) {
            const fs::path dir = resolve_run(run_dir);
            RunLock lock(dir);
            const RunConfig cfg = run_config(dir);
            const auto out = run_baseline(run_manifest(dir), parse_baseline(method), parse_split(split), dir,
                                          cfg.threads);
            std::cout << "wrote " << out.string() << "\n";
        } else if (geo->parsed()) {
            const fs::path dir = resolve_run(run_dir);
            RunLock lock(dir);
            forward_geophys(run_config(dir), run_manifest(dir));
        } else if (eval->parsed()) {
            const fs::path dir = resolve_run(run_dir);
            RunLock lock(dir);
            fs::path pd = pred_dir;
            if (pd.empty()) {
                if (method.empty()) throw ConfigError("evaluate needs --method or --pred-dir");
                pd = dir / "predictions" / method;
            }
            if (!fs::is_directory(pd)) throw DataError("prediction directory " + pd.string() + " not found");
            const auto j = evaluate_predictions(pd, run_manifest(dir), parse_split(split));
            const auto& p = j.at("pooled");
            std::cout << j.at("method").get<std::string>() << ": acc incl. air " << p.at("acc_incl_air")
                      << ", acc excl. air " << p.at("acc_excl_air") << ", mIoU excl. air " << p.at("miou_excl_air")
                      << " over " << j.at("cases") << " cases\n";
        } else if (rep->parsed()) {
            const fs::path dir = resolve_run(run_dir);
            RunLock lock(dir);
            std::cout << build_report(dir);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return 0;
}
