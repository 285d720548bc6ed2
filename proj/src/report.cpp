#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "geoflow/pipeline.hpp"

namespace geoflow {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Row order and display names of the comparison table.
const std::vector<std::pair<std::string, std::string>>& method_rows() {
    static const std::vector<std::pair<std::string, std::string>> rows{
        {"depthwise", "Depth-wise majority"},
        {"polygonal", "Polygonal nearest borehole"},
        {"ddpm_plain", "DDPM"},
        {"ddpm_attention", "DDPM + attention gates"},
        {"fm_plain", "Flow matching"},
        {"fm_attention", "Flow matching + attention gates"},
    };
    return rows;
}

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
    return buf;
}

std::string fixed(double v, int digits) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string pad(const std::string& s, std::size_t w) { return s + std::string(w > s.size() ? w - s.size() : 0, ' '); }

ConfusionMatrix confusion_from_json(const json& rows) {
    ConfusionMatrix cm;
    if (rows.size() != kNumCategories) throw DataError("metrics confusion matrix must be 9 x 9");
    for (std::size_t a = 0; a < kNumCategories; ++a) {
        if (rows[a].size() != kNumCategories) throw DataError("metrics confusion matrix must be 9 x 9");
        for (std::size_t b = 0; b < kNumCategories; ++b) cm.counts[a][b] = rows[a][b].get<std::int64_t>();
    }
    return cm;
}

}  // namespace

std::string slice_pgm(const CategoricalVolume& vol, int axis) {
    const Dims& d = vol.dims();
    std::int64_t w = 0, h = 0;
    // Width runs along the first remaining axis; for vertical sections row 0
    // is the top of the model.
    switch (axis) {
        case 0: w = d.y, h = d.z; break;
        case 1: w = d.x, h = d.z; break;
        case 2: w = d.x, h = d.y; break;
        default: throw UsageError("slice axis must be 0, 1 or 2");
    }
    std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    for (std::int64_t r = 0; r < h; ++r)
        for (std::int64_t c = 0; c < w; ++c) {
            std::uint8_t l = 0;
            if (axis == 0) l = vol.at(d.x / 2, c, d.z - 1 - r);
            if (axis == 1) l = vol.at(c, d.y / 2, d.z - 1 - r);
            if (axis == 2) l = vol.at(c, r, d.z / 2);
            out.push_back(static_cast<char>((static_cast<int>(l) - 1) * 255 / (kNumCategories - 1)));
        }
    return out;
}

std::string build_report(const fs::path& run_dir) {
    const Manifest manifest = read_manifest(run_dir / "manifest.json");
    const fs::path out = run_dir / "report";
    std::map<std::string, json> metrics;
    if (fs::exists(run_dir / "predictions"))
        for (const auto& e : fs::directory_iterator(run_dir / "predictions")) {
            const fs::path f = e.path() / "metrics.json";
            if (!fs::exists(f)) continue;
            try {
                metrics[e.path().filename().string()] = json::parse(read_file(f));
            } catch (const json::exception& ex) {
                throw DataError(f.string() + ": " + ex.what());
            }
        }

    std::ostringstream rep;
    rep << "Reconstruction accuracy";
    if (!metrics.empty()) rep << " (" << metrics.begin()->second.value("split", "?") << " split)";
    rep << "\n\n";
    const std::size_t w = 34;
    rep << pad("Method", w) << pad("Acc incl. air", 15) << pad("Acc excl. air", 15) << "mIoU excl. air\n";
    std::string best;
    for (const auto& [key, label] : method_rows()) {
        auto it = metrics.find(key);
        if (it == metrics.end()) continue;
        const json& p = it->second.at("pooled");
        rep << pad(label, w) << pad(pct(p.at("acc_incl_air").get<double>()), 15)
            << pad(pct(p.at("acc_excl_air").get<double>()), 15) << fixed(p.at("miou_excl_air").get<double>(), 4)
            << "\n";
        best = key;
    }
    for (const auto& [key, m] : metrics) {
        bool known = false;
        for (const auto& r : method_rows()) known = known || r.first == key;
        if (known) continue;
        const json& p = m.at("pooled");
        rep << pad(key, w) << pad(pct(p.at("acc_incl_air").get<double>()), 15)
            << pad(pct(p.at("acc_excl_air").get<double>()), 15) << fixed(p.at("miou_excl_air").get<double>(), 4)
            << "\n";
    }
    if (metrics.empty()) rep << "(no evaluated predictions)\n";

    if (!best.empty()) {
        rep << "\nPer-category results for " << best << "\n\n";
        rep << format_category_table(metrics_from_confusion(confusion_from_json(metrics[best].at("confusion"))));
    }

    // Mid-slices of the first evaluated case for the truth and every method.
    for (const auto& [key, m] : metrics) {
        const auto& pc = m.at("per_case");
        if (pc.empty()) continue;
        const std::string id = pc[0].at("id").get<std::string>();
        const CaseEntry* entry = nullptr;
        for (const auto& c : manifest.cases)
            if (c.id == id) entry = &c;
        if (!entry) throw DataError("metrics refer to unknown case '" + id + "'");
        const auto pred = read_categorical(run_dir / "predictions" / key / (id + ".gvl"));
        const auto truth = read_categorical(manifest.path_of(entry->truth));
        for (int axis = 0; axis < 3; ++axis) {
            const std::string suffix = "_" + id + "_" + "xyz"[axis] + ".pgm";
            write_file_atomic(out / "slices" / (key + suffix), slice_pgm(pred, axis));
            write_file_atomic(out / "slices" / ("truth" + suffix), slice_pgm(truth, axis));
        }
    }

    std::string curves = "model,epoch,train_loss,val_loss\n";
    if (fs::exists(run_dir / "models")) {
        std::vector<fs::path> models;
        for (const auto& e : fs::directory_iterator(run_dir / "models"))
            if (fs::exists(e.path() / "loss.csv")) models.push_back(e.path());
        std::sort(models.begin(), models.end());
        for (const auto& mdir : models) {
            const std::string text = read_file(mdir / "loss.csv");
            std::istringstream in(text);
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line))
                if (!line.empty()) curves += mdir.filename().string() + "," + line + "\n";
        }
    }
    write_file_atomic(out / "loss_curves.csv", curves);
    write_file_atomic(out / "report.txt", rep.str());
    return rep.str();
}

}  // namespace geoflow
