// Python bindings. Volumes cross the boundary as numpy arrays indexed
// [x, y, z] (z up); structured data crosses as JSON text and is decoded by the
// package wrapper.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "geoflow/evalbase.hpp"
#include "geoflow/geophys.hpp"
#include "geoflow/geostory.hpp"
#include "geoflow/persist.hpp"
#include "geoflow/pipeline.hpp"
#include "geoflow/sparsity.hpp"

namespace py = pybind11;
using namespace geoflow;
namespace fs = std::filesystem;

namespace {

template <typename L>
py::array_t<L> to_array(const LabelGrid<L>& g) {
    const Dims d = g.dims();
    py::array_t<L> a({d.x, d.y, d.z});
    std::memcpy(a.mutable_data(), g.labels().data(), g.labels().size() * sizeof(L));
    return a;
}

template <typename L>
LabelGrid<L> from_array(const py::array_t<L, py::array::c_style | py::array::forcecast>& a, L fill) {
    if (a.ndim() != 3) throw ShapeError("expected a 3-D array indexed [x, y, z]");
    LabelGrid<L> g({a.shape(0), a.shape(1), a.shape(2)}, fill);
    std::memcpy(g.labels().data(), a.data(), g.labels().size() * sizeof(L));
    return g;
}

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using I8Array = py::array_t<std::int8_t, py::array::c_style | py::array::forcecast>;

CategoricalVolume volume_from(const U8Array& a) {
    auto v = from_array<std::uint8_t>(a, 1);
    validate_volume(v);
    return v;
}

ConditionVolume condition_from(const I8Array& a) {
    ConditionVolume c{from_array<std::int8_t>(a, kUnsampled), {}};
    const Dims d = c.dims();
    for (std::int64_t x = 0; x < d.x; ++x)
        for (std::int64_t y = 0; y < d.y; ++y) {
            bool full = true;
            for (std::int64_t z = 0; z < d.z && full; ++z) full = c.labels.at(x, y, z) != kUnsampled;
            if (full) c.borehole_columns.emplace_back(x, y);
        }
    validate_condition(c);
    return c;
}

py::array_t<double> map_array(const FieldMap& m) {
    py::array_t<double> a({m.nx, m.ny});
    std::memcpy(a.mutable_data(), m.values.data(), m.values.size() * sizeof(double));
    return a;
}

RunConfig config_from(const std::string& text) {
    const auto j = text.empty() ? to_json(RunConfig{}) : nlohmann::json::parse(text);
    auto cfg = run_config_from_json(j);
    validate_run_config(cfg);
    return cfg;
}

Objective parse_objective(const std::string& s) {
    if (s == "fm") return Objective::FlowMatching;
    if (s == "ddpm") return Objective::Diffusion;
    throw UsageError("objective must be 'fm' or 'ddpm'");
}

}  // namespace

PYBIND11_MODULE(_geoflow, m) {
    m.doc() = "Geological facies volume generation, baselines, geophysics and generative models";

    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_IOError);
    py::register_exception<GeometryError>(m, "GeometryError", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

    m.attr("NUM_CATEGORIES") = kNumCategories;
    m.attr("AIR") = kAir;
    m.attr("UNSAMPLED") = kUnsampled;
    m.def("facies_name", [](int label) { return std::string(facies_name(label)); }, py::arg("label"));

    m.def(
        "generate_volume",
        [](std::uint64_t seed, std::array<std::int64_t, 3> dims) {
            const Dims d{dims[0], dims[1], dims[2]};
            return to_array(realize(sample_story(seed, d, default_ranges(d))));
        },
        py::arg("seed"), py::arg("dims") = std::array<std::int64_t, 3>{16, 16, 16},
        "Samples a geological history and realises it as a facies volume.");

    m.def(
        "sample_sparse",
        [](const U8Array& vol, std::int64_t n_holes, std::uint64_t seed) {
            return to_array(sample_sparse(volume_from(vol), n_holes, seed).labels);
        },
        py::arg("volume"), py::arg("n_holes"), py::arg("seed"),
        "Condition grid: air, surface and borehole voxels labelled, -1 elsewhere.");

    m.def(
        "baseline_depthwise", [](const I8Array& c) { return to_array(baseline_depthwise(condition_from(c))); },
        py::arg("condition"));
    m.def(
        "baseline_polygonal", [](const I8Array& c) { return to_array(baseline_polygonal(condition_from(c))); },
        py::arg("condition"));

    m.def(
        "compute_metrics",
        [](const U8Array& pred, const U8Array& truth) {
            const auto r = compute_metrics(volume_from(pred), volume_from(truth));
            py::dict out;
            out["acc_incl_air"] = r.acc_incl_air;
            out["acc_excl_air"] = r.acc_excl_air;
            out["miou_excl_air"] = r.miou_excl_air;
            out["recall"] = std::vector<double>(r.recall.begin(), r.recall.end());
            out["iou"] = std::vector<double>(r.iou.begin(), r.iou.end());
            out["proportion"] = std::vector<double>(r.proportion.begin(), r.proportion.end());
            out["present"] = std::vector<bool>(r.present.begin(), r.present.end());
            return out;
        },
        py::arg("prediction"), py::arg("truth"));

    m.def(
        "forward_maps",
        [](const U8Array& vol, std::int64_t nx, std::int64_t ny, double voxel_size) {
            const auto v = volume_from(vol);
            SurveyConfig survey;
            survey.nx = nx;
            survey.ny = ny;
            survey.voxel_size = voxel_size;
            const auto rx = drape_receivers(v, survey);
            const auto props = map_properties(v, default_property_table());
            return py::make_tuple(map_array(forward_gravity(props.density, voxel_size, rx, nx, ny)),
                                  map_array(forward_magnetics(props.susceptibility, InducingField{}, voxel_size, rx,
                                                              nx, ny)));
        },
        py::arg("volume"), py::arg("nx") = 30, py::arg("ny") = 30, py::arg("voxel_size") = 10.0,
        "Noise-free gravity (mGal) and total-field magnetic (nT) maps.");

    m.def(
        "read_volume", [](const fs::path& p) { return to_array(read_categorical(p)); }, py::arg("path"));
    m.def(
        "write_volume", [](const fs::path& p, const U8Array& vol) { write_categorical(p, volume_from(vol)); },
        py::arg("path"), py::arg("volume"));
    m.def(
        "read_condition", [](const fs::path& p) { return to_array(read_condition(p).labels); }, py::arg("path"));

    m.def("default_config_json", [] { return to_json(RunConfig{}).dump(); });
    m.def(
        "normalize_config_json", [](const std::string& text) { return to_json(config_from(text)).dump(); },
        py::arg("text"));
    m.def(
        "gen_dataset",
        [](const std::string& config, const fs::path& dir) {
            py::gil_scoped_release release;
            return gen_dataset(config_from(config), dir).cases.size();
        },
        py::arg("config"), py::arg("dir"));
    m.def(
        "train",
        [](const fs::path& dir, const std::string& objective, bool attention, int epochs) {
            py::gil_scoped_release release;
            auto cfg = load_run_config(dir / "config.json");
            if (epochs > 0) cfg.training.epochs = epochs;
            return train_model(cfg, read_manifest(dir / "manifest.json"), parse_objective(objective), attention, dir);
        },
        py::arg("dir"), py::arg("objective"), py::arg("attention") = true, py::arg("epochs") = 0);
    m.def(
        "sample",
        [](const fs::path& dir, const fs::path& checkpoint, const std::string& split, int steps, std::uint64_t seed) {
            py::gil_scoped_release release;
            const auto cfg = load_run_config(dir / "config.json");
            return sample_split(checkpoint, read_manifest(dir / "manifest.json"), parse_split(split),
                                steps > 0 ? steps : cfg.sampler.ode_steps, seed, dir);
        },
        py::arg("dir"), py::arg("checkpoint"), py::arg("split") = "ood", py::arg("steps") = 0, py::arg("seed") = 1);
    m.def(
        "baseline",
        [](const fs::path& dir, const std::string& method, const std::string& split) {
            py::gil_scoped_release release;
            return run_baseline(read_manifest(dir / "manifest.json"), parse_baseline(method), parse_split(split), dir);
        },
        py::arg("dir"), py::arg("method"), py::arg("split") = "ood");
    m.def(
        "evaluate_json",
        [](const fs::path& dir, const fs::path& pred_dir, const std::string& split) {
            py::gil_scoped_release release;
            return evaluate_predictions(pred_dir, read_manifest(dir / "manifest.json"), parse_split(split)).dump();
        },
        py::arg("dir"), py::arg("pred_dir"), py::arg("split") = "ood");
    m.def(
        "report",
        [](const fs::path& dir) {
            py::gil_scoped_release release;
            return build_report(dir);
        },
        py::arg("dir"));
}
