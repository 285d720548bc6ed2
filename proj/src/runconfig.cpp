#include <cmath>
#include <cstdlib>
#include <set>

#include "geoflow/pipeline.hpp"

namespace geoflow {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::pair<const char*, Range StoryRanges::*>>& range_fields() {
    static const std::vector<std::pair<const char*, Range StoryRanges::*>> fields{
        {"layer_count", &StoryRanges::layer_count},
        {"layer_thickness", &StoryRanges::layer_thickness},
        {"tilt_dip", &StoryRanges::tilt_dip},
        {"tilt_azimuth", &StoryRanges::tilt_azimuth},
        {"fold_amplitude", &StoryRanges::fold_amplitude},
        {"fold_wavelength", &StoryRanges::fold_wavelength},
        {"fold_phase", &StoryRanges::fold_phase},
        {"fold_plunge", &StoryRanges::fold_plunge},
        {"fold_azimuth", &StoryRanges::fold_azimuth},
        {"fault_throw", &StoryRanges::fault_throw},
        {"fault_dip", &StoryRanges::fault_dip},
        {"fault_strike", &StoryRanges::fault_strike},
        {"fault_center", &StoryRanges::fault_center},
        {"dike_half_thickness", &StoryRanges::dike_half_thickness},
        {"dike_dip", &StoryRanges::dike_dip},
        {"dike_strike", &StoryRanges::dike_strike},
        {"dike_center", &StoryRanges::dike_center},
        {"phyllic_width", &StoryRanges::phyllic_width},
        {"argillic_width", &StoryRanges::argillic_width},
        {"propylitic_width", &StoryRanges::propylitic_width},
        {"surface_elevation", &StoryRanges::surface_elevation},
        {"topo_amplitude", &StoryRanges::topo_amplitude},
        {"topo_wavelength", &StoryRanges::topo_wavelength},
        {"topo_noise", &StoryRanges::topo_noise},
        {"soil_thickness", &StoryRanges::soil_thickness},
    };
    return fields;
}

Range StoryRanges::* find_range(const std::string& name) {
    for (const auto& [n, member] : range_fields())
        if (name == n) return member;
    return nullptr;
}

// Reads j[key] into out when present, mapping type errors to ConfigError.
template <typename V>
void read(const json& j, const char* key, V& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<V>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [k, v] : j.items()) {
        bool ok = false;
        for (const char* n : known) ok = ok || k == n;
        if (!ok) throw ConfigError("unknown config key '" + where + "." + k + "'");
    }
}

json ranges_json(const StoryRanges& r) {
    json j;
    for (const auto& [n, member] : range_fields()) j[n] = {(r.*member).min, (r.*member).max};
    j["basement_facies"] = r.basement_facies;
    j["host_facies"] = r.host_facies;
    j["fold_count"] = r.fold_count;
    j["fault_count"] = r.fault_count;
    j["dike_enabled"] = r.dike_enabled;
    j["min_subsurface_fraction"] = r.min_subsurface_fraction;
    return j;
}

void apply_ranges(const json& j, StoryRanges& r) {
    if (!j.is_object()) throw ConfigError("ranges must be an object");
    for (const auto& [k, v] : j.items()) {
        if (auto member = find_range(k)) {
            if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
                throw ConfigError("range '" + k + "' must be [min, max]");
            r.*member = Range{v[0].get<double>(), v[1].get<double>()};
        } else if (k == "basement_facies" || k == "host_facies" || k == "fold_count" || k == "fault_count" ||
                   k == "dike_enabled" || k == "min_subsurface_fraction") {
            read(j, "basement_facies", r.basement_facies);
            read(j, "host_facies", r.host_facies);
            read(j, "fold_count", r.fold_count);
            read(j, "fault_count", r.fault_count);
            read(j, "dike_enabled", r.dike_enabled);
            read(j, "min_subsurface_fraction", r.min_subsurface_fraction);
        } else {
            throw ConfigError("unknown config key 'ranges." + k + "'");
        }
    }
}

}  // namespace

json to_json(const UNetConfig& m) {
    return {{"levels", m.levels},
            {"base_channels", m.base_channels},
            {"channel_multiplier", m.channel_multiplier},
            {"gn_groups", m.gn_groups},
            {"gate_channels", m.gate_channels},
            {"in_channels", m.in_channels},
            {"out_channels", m.out_channels},
            {"time_embed_dim", m.time_embed_dim},
            {"time_hidden", m.time_hidden},
            {"attention", m.attention}};
}

UNetConfig unet_config_from_json(const json& j) {
    reject_unknown(j,
                   {"levels", "base_channels", "channel_multiplier", "gn_groups", "gate_channels", "in_channels",
                    "out_channels", "time_embed_dim", "time_hidden", "attention"},
                   "model");
    UNetConfig m;
    read(j, "levels", m.levels);
    read(j, "base_channels", m.base_channels);
    read(j, "channel_multiplier", m.channel_multiplier);
    read(j, "gn_groups", m.gn_groups);
    read(j, "gate_channels", m.gate_channels);
    read(j, "in_channels", m.in_channels);
    read(j, "out_channels", m.out_channels);
    read(j, "time_embed_dim", m.time_embed_dim);
    read(j, "time_hidden", m.time_hidden);
    read(j, "attention", m.attention);
    return m;
}

json to_json(const RunConfig& c) {
    json ood = json::array();
    for (const auto& s : c.ood_splits) ood.push_back({{"parameter", s.parameter}, {"fraction", s.fraction}});
    return {
        {"dims", {c.dims.x, c.dims.y, c.dims.z}},
        {"ranges", ranges_json(c.ranges)},
        {"ood_splits", ood},
        {"dataset",
         {{"cases", c.dataset.cases},
          {"ood_fraction", c.dataset.ood_fraction},
          {"val_fraction", c.dataset.val_fraction},
          {"boreholes", c.dataset.boreholes}}},
        {"survey",
         {{"nx", c.survey.nx},
          {"ny", c.survey.ny},
          {"voxel_size", c.survey.voxel_size},
          {"clearance_voxels", c.survey.clearance_voxels}}},
        {"inducing",
         {{"amplitude_nt", c.inducing.amplitude_nt},
          {"inclination_deg", c.inducing.inclination_deg},
          {"declination_deg", c.inducing.declination_deg}}},
        {"model", to_json(c.model)},
        {"training",
         {{"epochs", c.training.epochs},
          {"batch_size", c.training.batch_size},
          {"learning_rate", c.training.learning_rate},
          {"clip_norm", c.training.clip_norm},
          {"diffusion_steps", c.training.diffusion_steps}}},
        {"sampler", {{"ode_steps", c.sampler.ode_steps}}},
        {"seeds", {{"generation", c.seeds.generation}, {"training", c.seeds.training}, {"sampling", c.seeds.sampling}}},
        {"threads", c.threads},
        {"output_dir", c.output_dir},
    };
}

RunConfig run_config_from_json(const json& j) {
    reject_unknown(j,
                   {"dims", "ranges", "ood_splits", "dataset", "survey", "inducing", "model", "training", "sampler",
                    "seeds", "threads", "output_dir"},
                   "config");
    RunConfig c;
    if (j.contains("dims")) {
        std::vector<std::int64_t> d;
        read(j, "dims", d);
        if (d.size() != 3) throw ConfigError("dims must have three entries");
        if (d[0] <= 0 || d[1] <= 0 || d[2] <= 0) throw ConfigError("dims must be positive");
        c.dims = {d[0], d[1], d[2]};
    }
    c.ranges = default_ranges(c.dims);
    if (j.contains("ranges")) apply_ranges(j["ranges"], c.ranges);
    if (j.contains("ood_splits")) {
        const json& o = j["ood_splits"];
        if (!o.is_array()) throw ConfigError("ood_splits must be an array");
        c.ood_splits.clear();
        for (const auto& e : o) {
            reject_unknown(e, {"parameter", "fraction"}, "ood_splits[]");
            OodSplit s;
            read(e, "parameter", s.parameter);
            read(e, "fraction", s.fraction);
            c.ood_splits.push_back(s);
        }
    }
    if (j.contains("dataset")) {
        const json& d = j["dataset"];
        reject_unknown(d, {"cases", "ood_fraction", "val_fraction", "boreholes"}, "dataset");
        read(d, "cases", c.dataset.cases);
        read(d, "ood_fraction", c.dataset.ood_fraction);
        read(d, "val_fraction", c.dataset.val_fraction);
        read(d, "boreholes", c.dataset.boreholes);
    }
    if (j.contains("survey")) {
        const json& s = j["survey"];
        reject_unknown(s, {"nx", "ny", "voxel_size", "clearance_voxels"}, "survey");
        read(s, "nx", c.survey.nx);
        read(s, "ny", c.survey.ny);
        read(s, "voxel_size", c.survey.voxel_size);
        read(s, "clearance_voxels", c.survey.clearance_voxels);
    }
    if (j.contains("inducing")) {
        const json& f = j["inducing"];
        reject_unknown(f, {"amplitude_nt", "inclination_deg", "declination_deg"}, "inducing");
        read(f, "amplitude_nt", c.inducing.amplitude_nt);
        read(f, "inclination_deg", c.inducing.inclination_deg);
        read(f, "declination_deg", c.inducing.declination_deg);
    }
    if (j.contains("model")) c.model = unet_config_from_json(j["model"]);
    if (j.contains("training")) {
        const json& t = j["training"];
        reject_unknown(t, {"epochs", "batch_size", "learning_rate", "clip_norm", "diffusion_steps"}, "training");
        read(t, "epochs", c.training.epochs);
        read(t, "batch_size", c.training.batch_size);
        read(t, "learning_rate", c.training.learning_rate);
        read(t, "clip_norm", c.training.clip_norm);
        read(t, "diffusion_steps", c.training.diffusion_steps);
    }
    if (j.contains("sampler")) {
        reject_unknown(j["sampler"], {"ode_steps"}, "sampler");
        read(j["sampler"], "ode_steps", c.sampler.ode_steps);
    }
    if (j.contains("seeds")) {
        const json& s = j["seeds"];
        reject_unknown(s, {"generation", "training", "sampling"}, "seeds");
        read(s, "generation", c.seeds.generation);
        read(s, "training", c.seeds.training);
        read(s, "sampling", c.seeds.sampling);
    }
    read(j, "threads", c.threads);
    read(j, "output_dir", c.output_dir);
    validate_run_config(c);
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    return run_config_from_json(j);
}

void validate_run_config(const RunConfig& c) {
    if (c.dims.x <= 0 || c.dims.y <= 0 || c.dims.z <= 0) throw ConfigError("dims must be positive");
    validate_ranges(c.ranges);
    split_ranges(c.ranges, c.ood_splits);
    const auto& d = c.dataset;
    if (d.cases < 1) throw ConfigError("dataset.cases must be >= 1");
    if (!(d.ood_fraction >= 0 && d.ood_fraction < 1)) throw ConfigError("dataset.ood_fraction must be in [0, 1)");
    if (!(d.val_fraction >= 0 && d.val_fraction < 1)) throw ConfigError("dataset.val_fraction must be in [0, 1)");
    if (d.boreholes < 0 || d.boreholes > c.dims.columns()) throw ConfigError("dataset.boreholes outside [0, X*Y]");
    if (split_counts(d).train < 1) throw ConfigError("dataset leaves no training cases");
    if (c.survey.nx < 1 || c.survey.ny < 1 || !(c.survey.voxel_size > 0) || c.survey.clearance_voxels < 0)
        throw ConfigError("invalid survey configuration");
    validate_inducing(c.inducing);
    UNetConfig m = c.model;
    validate_config(m);
    if (m.in_channels != 2 * kNumCategories + 1 || m.out_channels != kNumCategories)
        throw ConfigError("model must map 19 input channels to 9 output channels");
    check_spatial_extent(m, {1, m.in_channels, c.dims.x, c.dims.y, c.dims.z});
    const auto& t = c.training;
    if (t.epochs < 0 || t.batch_size < 1 || !(t.learning_rate > 0) || !std::isfinite(t.clip_norm))
        throw ConfigError("invalid training configuration");
    if (t.diffusion_steps <= 20) throw ConfigError("training.diffusion_steps must exceed 20");
    if (c.sampler.ode_steps < 1) throw ConfigError("sampler.ode_steps must be >= 1");
    if (c.threads < 0) throw ConfigError("threads must be >= 0");
    if (c.output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

SplitRanges split_ranges(const StoryRanges& ranges, const std::vector<OodSplit>& splits) {
    SplitRanges out{ranges, ranges};
    std::set<std::string> seen;
    for (const auto& s : splits) {
        auto member = find_range(s.parameter);
        if (!member) throw ConfigError("unknown OOD parameter '" + s.parameter + "'");
        if (!seen.insert(s.parameter).second) throw ConfigError("OOD parameter '" + s.parameter + "' listed twice");
        if (!(s.fraction > 0 && s.fraction < 1)) throw ConfigError("OOD fraction must be in (0, 1)");
        const Range r = ranges.*member;
        if (!(r.max > r.min)) throw ConfigError("OOD parameter '" + s.parameter + "' has an empty range");
        const double cut = r.min + s.fraction * (r.max - r.min);
        out.train.*member = Range{r.min, cut};
        out.ood.*member = Range{std::nextafter(cut, r.max), r.max};
    }
    return out;
}

fs::path resolve_output_dir(const RunConfig& cfg) {
    fs::path p = cfg.output_dir;
    if (p.is_relative())
        if (const char* root = std::getenv("GEOFLOW_OUTPUT_ROOT"); root && *root) p = fs::path(root) / p;
    return p;
}

std::string split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Ood: return "ood";
    }
    return "train";
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "ood") return Split::Ood;
    throw ConfigError("unknown split '" + s + "' (train, val or ood)");
}

SplitCounts split_counts(const DatasetConfig& d) {
    SplitCounts c;
    c.ood = static_cast<int>(std::lround(d.cases * d.ood_fraction));
    c.val = static_cast<int>(std::lround((d.cases - c.ood) * d.val_fraction));
    c.train = d.cases - c.ood - c.val;
    return c;
}

std::vector<const CaseEntry*> Manifest::in_split(Split s) const {
    std::vector<const CaseEntry*> out;
    for (const auto& c : cases)
        if (c.split == s) out.push_back(&c);
    return out;
}

json to_json(const Manifest& m) {
    json cases = json::array();
    for (const auto& c : m.cases)
        cases.push_back({{"id", c.id},
                         {"split", split_name(c.split)},
                         {"seed", c.seed},
                         {"files",
                          {{"truth", c.truth},
                           {"condition", c.condition},
                           {"gravity", c.gravity},
                           {"magnetics", c.magnetics}}}});
    return {{"format", "geoflow-manifest"},
            {"version", 1},
            {"generation_seed", m.generation_seed},
            {"dims", {m.dims.x, m.dims.y, m.dims.z}},
            {"cases", cases}};
}

void write_manifest(const fs::path& path, const Manifest& m) { write_file_atomic(path, to_json(m).dump(2) + "\n"); }

Manifest read_manifest(const fs::path& path) {
    Manifest m;
    m.root = path.parent_path();
    try {
        const json j = json::parse(read_file(path));
        if (j.value("format", "") != "geoflow-manifest") throw DataError(path.string() + ": not a manifest");
        m.generation_seed = j.at("generation_seed").get<std::uint64_t>();
        const auto d = j.at("dims").get<std::vector<std::int64_t>>();
        if (d.size() != 3) throw DataError(path.string() + ": dims must have three entries");
        m.dims = {d[0], d[1], d[2]};
        for (const auto& e : j.at("cases")) {
            CaseEntry c;
            c.id = e.at("id").get<std::string>();
            c.split = parse_split(e.at("split").get<std::string>());
            c.seed = e.at("seed").get<std::uint64_t>();
            const auto& f = e.at("files");
            c.truth = f.at("truth").get<std::string>();
            c.condition = f.at("condition").get<std::string>();
            c.gravity = f.at("gravity").get<std::string>();
            c.magnetics = f.at("magnetics").get<std::string>();
            m.cases.push_back(std::move(c));
        }
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    } catch (const ConfigError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    std::set<std::string> ids;
    for (const auto& c : m.cases) {
        if (!ids.insert(c.id).second) throw DataError("duplicate case id '" + c.id + "'");
        const auto truth = read_categorical(m.path_of(c.truth));
        const auto cond = read_condition(m.path_of(c.condition));
        if (!(truth.dims() == m.dims) || !(cond.dims() == m.dims))
            throw DataError("case '" + c.id + "' does not match the manifest extents");
        read_fieldmap(m.path_of(c.gravity));
        read_fieldmap(m.path_of(c.magnetics));
    }
    return m;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const NumericalError*>(&e)) return 4;
    if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const GeometryError*>(&e)) return 3;
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const UsageError*>(&e) ||
        dynamic_cast<const ShapeError*>(&e))
        return 2;
    if (dynamic_cast<const fs::filesystem_error*>(&e)) return 3;
    return 1;
}

}  // namespace geoflow
