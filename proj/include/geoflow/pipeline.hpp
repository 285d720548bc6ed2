#pragma once

// Run configuration, dataset manifests and the commands behind the CLI:
// dataset generation, training, sampling, baselines, geophysics, evaluation
// and reporting. Every command is deterministic given its inputs.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geoflow/evalbase.hpp"
#include "geoflow/genflow.hpp"
#include "geoflow/geophys.hpp"
#include "geoflow/geostory.hpp"
#include "geoflow/netmodel.hpp"
#include "geoflow/persist.hpp"

namespace geoflow {

// Out-of-distribution cases draw `parameter` from the upper part of its range
// and training cases from the lower `fraction`; the two never overlap.
struct OodSplit {
    std::string parameter;
    double fraction = 0.5;
    friend bool operator==(const OodSplit&, const OodSplit&) = default;
};

struct DatasetConfig {
    int cases = 150;            // total, including OOD
    double ood_fraction = 0.2;  // of all cases
    double val_fraction = 0.1;  // of the in-distribution cases
    int boreholes = 4;
    friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct TrainingConfig {
    int epochs = 30;
    int batch_size = 4;
    double learning_rate = 2e-4;
    double clip_norm = 1.0;
    int diffusion_steps = 200;
    friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

struct SamplerConfig {
    int ode_steps = 50;
    friend bool operator==(const SamplerConfig&, const SamplerConfig&) = default;
};

struct Seeds {
    std::uint64_t generation = 1, training = 1, sampling = 1;
    friend bool operator==(const Seeds&, const Seeds&) = default;
};

struct RunConfig {
    Dims dims{16, 16, 16};
    StoryRanges ranges = default_ranges({16, 16, 16});
    std::vector<OodSplit> ood_splits{{"fold_amplitude", 0.5}, {"tilt_dip", 0.5}};
    DatasetConfig dataset;
    SurveyConfig survey;
    InducingField inducing;
    UNetConfig model;
    TrainingConfig training;
    SamplerConfig sampler;
    Seeds seeds;
    int threads = 0;  // case-level workers; 0 = hardware concurrency
    std::string output_dir = "run";
    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

nlohmann::json to_json(const RunConfig& cfg);
nlohmann::json to_json(const UNetConfig& cfg);
UNetConfig unet_config_from_json(const nlohmann::json& j);

// Keys absent from `j` keep their defaults; `ranges` defaults to
// default_ranges(dims) and individual range keys override it. Unknown keys
// and malformed values throw ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
void validate_run_config(const RunConfig& cfg);

struct SplitRanges {
    StoryRanges train, ood;
};
SplitRanges split_ranges(const StoryRanges& ranges, const std::vector<OodSplit>& splits);

// `output_dir` resolved against GEOFLOW_OUTPUT_ROOT when that is set and the
// path is relative.
std::filesystem::path resolve_output_dir(const RunConfig& cfg);

enum class Split { Train, Val, Ood };
std::string split_name(Split s);
Split parse_split(const std::string& s);

struct CaseEntry {
    std::string id;
    Split split = Split::Train;
    std::uint64_t seed = 0;
    // Paths relative to the manifest directory.
    std::string truth, condition, gravity, magnetics;
    friend bool operator==(const CaseEntry&, const CaseEntry&) = default;
};

struct Manifest {
    std::uint64_t generation_seed = 0;
    Dims dims;
    std::vector<CaseEntry> cases;
    std::filesystem::path root;  // directory holding manifest.json; not serialised

    std::vector<const CaseEntry*> in_split(Split s) const;
    std::filesystem::path path_of(const std::string& rel) const { return root / rel; }
};

nlohmann::json to_json(const Manifest& m);
void write_manifest(const std::filesystem::path& path, const Manifest& m);
// Throws DataError on duplicate ids, missing files or files that fail to parse.
Manifest read_manifest(const std::filesystem::path& path);

struct SplitCounts {
    int train = 0, val = 0, ood = 0;
};
SplitCounts split_counts(const DatasetConfig& d);

// Exclusive holder of a run directory for the lifetime of the object.
class RunLock {
public:
    explicit RunLock(const std::filesystem::path& dir);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::filesystem::path file_;
};

// Runs body(i) for i in [0, n) on up to `threads` workers. The first
// exception (lowest index) is rethrown after all workers finish.
void parallel_for(std::int64_t n, int threads, const std::function<void(std::int64_t)>& body);

struct GeneratedCase {
    GeoStory story;
    CategoricalVolume truth;
    ConditionVolume condition;
    FieldMap gravity, magnetics;
};
GeneratedCase generate_case(const RunConfig& cfg, const StoryRanges& ranges, std::uint64_t seed);

// Writes config.json, manifest.json and cases/<id>/{truth,condition,gravity,
// magnetics}.gvl under `dir`.
Manifest gen_dataset(const RunConfig& cfg, const std::filesystem::path& dir);

std::string model_name(Objective objective, bool attention);

struct TrainedModel {
    UNet3D<float> model;
    Objective objective = Objective::FlowMatching;
    int diffusion_steps = 0;
    TrainState<float> state;
};

Checkpoint make_checkpoint(const TrainedModel& m);
// Throws ConfigError when tensor names or shapes do not match the stored
// model configuration.
TrainedModel restore_checkpoint(const Checkpoint& ckpt);

struct EpochLog {
    int epoch = 0;
    double train_loss = 0, val_loss = 0;
};

// Trains for cfg.training.epochs on the train split and writes
// models/<name>/{checkpoint.gck,loss.csv} under `dir`. Returns the checkpoint
// path.
std::filesystem::path train_model(const RunConfig& cfg, const Manifest& manifest, Objective objective, bool attention,
                                  const std::filesystem::path& dir, std::ostream* progress = nullptr);

std::vector<EpochLog> read_loss_log(const std::filesystem::path& csv);

// Samples every case of `split` into predictions/<name>/<id>.gvl. `steps` is
// the Euler step count for flow matching and ignored for diffusion.
std::filesystem::path sample_split(const std::filesystem::path& checkpoint, const Manifest& manifest, Split split,
                                   int steps, std::uint64_t seed, const std::filesystem::path& dir);

enum class BaselineMethod { Depthwise, Polygonal };
std::string baseline_name(BaselineMethod m);
BaselineMethod parse_baseline(const std::string& s);

std::filesystem::path run_baseline(const Manifest& manifest, BaselineMethod method, Split split,
                                   const std::filesystem::path& dir, int threads = 1);

// Recomputes the noisy gravity and magnetic maps of every case in place.
void forward_geophys(const RunConfig& cfg, const Manifest& manifest);

// Pooled metrics over the cases of `split` that have a prediction file in
// `pred_dir`; writes pred_dir/metrics.json and returns its content.
nlohmann::json evaluate_predictions(const std::filesystem::path& pred_dir, const Manifest& manifest, Split split);

// Writes report/{report.txt,loss_curves.csv,slices/*.pgm} under `run_dir` and
// returns the report text.
std::string build_report(const std::filesystem::path& run_dir);

// Binary PGM (P5) of a mid-slice normal to `axis` (0 = x, 1 = y, 2 = z), one
// gray level per category.
std::string slice_pgm(const CategoricalVolume& vol, int axis);

// Process exit code for an exception: 2 config, 3 data, 4 numerical, 1 other.
int exit_code_for(const std::exception& e);

}  // namespace geoflow
