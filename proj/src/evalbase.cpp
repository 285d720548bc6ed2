#include "geoflow/evalbase.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <vector>

namespace geoflow {

namespace {

// Most frequent id in counts[1..9]; ties to the lowest id; 0 when empty.
int majority(const std::array<std::int64_t, kNumCategories + 1>& counts) {
    int best = 0;
    for (int k = 1; k <= kNumCategories; ++k)
        if (counts[static_cast<std::size_t>(k)] > 0 && (best == 0 || counts[static_cast<std::size_t>(k)] > counts[static_cast<std::size_t>(best)]))
            best = k;
    return best;
}

CategoricalVolume pass_through(const ConditionVolume& cond) {
    CategoricalVolume out(cond.dims(), kAir);
    for (std::int64_t i = 0; i < cond.dims().voxels(); ++i)
        if (cond.labels[i] != kUnsampled) out[i] = static_cast<std::uint8_t>(cond.labels[i]);
    return out;
}

}  // namespace

CategoricalVolume baseline_depthwise(const ConditionVolume& cond) {
    validate_condition(cond);
    const Dims& d = cond.dims();
    std::vector<int> slice_major(static_cast<std::size_t>(d.z), 0);
    std::array<std::int64_t, kNumCategories + 1> global{};
    for (std::int64_t z = 0; z < d.z; ++z) {
        std::array<std::int64_t, kNumCategories + 1> counts{};
        for (std::int64_t x = 0; x < d.x; ++x)
            for (std::int64_t y = 0; y < d.y; ++y) {
                const int l = cond.labels.at(x, y, z);
                if (l == kUnsampled) continue;
                ++global[static_cast<std::size_t>(l)];
                if (l != kAir) ++counts[static_cast<std::size_t>(l)];
            }
        slice_major[static_cast<std::size_t>(z)] = majority(counts);
    }
    const int fallback = majority(global);
    if (fallback == 0) throw DataError("depthwise baseline: condition has no labelled voxels");

    std::vector<int> fill(static_cast<std::size_t>(d.z), fallback);
    for (std::int64_t z = 0; z < d.z; ++z) {
        int v = slice_major[static_cast<std::size_t>(z)];
        for (std::int64_t b = z - 1; v == 0 && b >= 0; --b) v = slice_major[static_cast<std::size_t>(b)];
        for (std::int64_t a = z + 1; v == 0 && a < d.z; ++a) v = slice_major[static_cast<std::size_t>(a)];
        if (v != 0) fill[static_cast<std::size_t>(z)] = v;
    }

    CategoricalVolume out = pass_through(cond);
    for (std::int64_t x = 0; x < d.x; ++x)
        for (std::int64_t y = 0; y < d.y; ++y)
            for (std::int64_t z = 0; z < d.z; ++z)
                if (cond.labels.at(x, y, z) == kUnsampled)
                    out.at(x, y, z) = static_cast<std::uint8_t>(fill[static_cast<std::size_t>(z)]);
    return out;
}

CategoricalVolume baseline_polygonal(const ConditionVolume& cond) {
    validate_condition(cond);
    if (cond.borehole_columns.empty()) throw DataError("polygonal baseline needs at least one borehole");
    const Dims& d = cond.dims();
    auto holes = cond.borehole_columns;
    std::sort(holes.begin(), holes.end());  // smaller x, then y wins ties below
    CategoricalVolume out = pass_through(cond);
    for (std::int64_t x = 0; x < d.x; ++x)
        for (std::int64_t y = 0; y < d.y; ++y) {
            std::int64_t best = -1;
            std::size_t pick = 0;
            for (std::size_t h = 0; h < holes.size(); ++h) {
                const std::int64_t dx = holes[h].first - x, dy = holes[h].second - y;
                const std::int64_t dist = dx * dx + dy * dy;
                if (best < 0 || dist < best) {
                    best = dist;
                    pick = h;
                }
            }
            const auto [hx, hy] = holes[pick];
            for (std::int64_t z = 0; z < d.z; ++z)
                if (cond.labels.at(x, y, z) == kUnsampled)
                    out.at(x, y, z) = static_cast<std::uint8_t>(cond.labels.at(hx, hy, z));
        }
    return out;
}

std::int64_t ConfusionMatrix::total() const {
    std::int64_t t = 0;
    for (const auto& r : counts) t += std::accumulate(r.begin(), r.end(), std::int64_t{0});
    return t;
}

std::int64_t ConfusionMatrix::row(int k) const {
    const auto& r = counts[static_cast<std::size_t>(k)];
    return std::accumulate(r.begin(), r.end(), std::int64_t{0});
}

std::int64_t ConfusionMatrix::col(int k) const {
    std::int64_t s = 0;
    for (const auto& r : counts) s += r[static_cast<std::size_t>(k)];
    return s;
}

ConfusionMatrix confusion(const CategoricalVolume& pred, const CategoricalVolume& truth) {
    if (!(pred.dims() == truth.dims())) throw ShapeError("metrics: prediction and truth dims differ");
    ConfusionMatrix cm;
    for (std::int64_t i = 0; i < truth.dims().voxels(); ++i) {
        const int t = truth[i], p = pred[i];
        if (!is_valid_category(t) || !is_valid_category(p)) throw DataError("metrics: invalid category id");
        ++cm.counts[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(p - 1)];
    }
    return cm;
}

MetricsReport metrics_from_confusion(const ConfusionMatrix& cm, int air_id) {
    MetricsReport m;
    m.voxels = cm.total();
    const int air = air_id - 1;
    std::int64_t diag = 0, diag_rock = 0, rock = 0;
    double iou_sum = 0;
    int iou_n = 0;
    for (int k = 0; k < kNumCategories; ++k) {
        const auto ks = static_cast<std::size_t>(k);
        const std::int64_t tp = cm.counts[ks][ks], r = cm.row(k), c = cm.col(k);
        diag += tp;
        m.present[ks] = r > 0;
        m.proportion[ks] = m.voxels ? static_cast<double>(r) / static_cast<double>(m.voxels) : 0.0;
        m.recall[ks] = r ? static_cast<double>(tp) / static_cast<double>(r) : 0.0;
        const std::int64_t uni = r + c - tp;
        m.iou[ks] = uni ? static_cast<double>(tp) / static_cast<double>(uni) : 0.0;
        if (k != air) {
            diag_rock += tp;
            rock += r;
            if (r > 0) {
                iou_sum += m.iou[ks];
                ++iou_n;
            }
        }
    }
    m.acc_incl_air = m.voxels ? static_cast<double>(diag) / static_cast<double>(m.voxels) : 0.0;
    m.acc_excl_air = rock ? static_cast<double>(diag_rock) / static_cast<double>(rock) : 0.0;
    m.miou_excl_air = iou_n ? iou_sum / iou_n : 0.0;
    return m;
}

MetricsReport compute_metrics(const CategoricalVolume& pred, const CategoricalVolume& truth, int air_id) {
    if (!is_valid_category(air_id)) throw ConfigError("air id must be a category id");
    return metrics_from_confusion(confusion(pred, truth), air_id);
}

std::string format_category_table(const MetricsReport& m) {
    std::vector<int> order(kNumCategories);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return m.proportion[static_cast<std::size_t>(a)] > m.proportion[static_cast<std::size_t>(b)];
    });
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "%-28s %12s %9s %9s\n", "Category", "Proportion", "Acc", "IoU");
    os << line;
    for (int k : order) {
        const auto ks = static_cast<std::size_t>(k);
        std::snprintf(line, sizeof line, "%-28s %11.2f%% %8.2f%% %8.2f%%\n", std::string(facies_name(k + 1)).c_str(),
                      100 * m.proportion[ks], 100 * m.recall[ks], 100 * m.iou[ks]);
        os << line;
    }
    return os.str();
}

}  // namespace geoflow
