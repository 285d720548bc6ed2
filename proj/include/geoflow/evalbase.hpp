#pragma once

// Deterministic reconstruction baselines and voxel-wise metrics.

#include <array>
#include <cstdint>
#include <string>

#include "geoflow/sparsity.hpp"

namespace geoflow {

// Fills every unlabelled voxel with the most frequent labelled non-air
// category of its depth slice. Empty slices borrow from the nearest slice
// below, else above; ties go to the lowest id. Throws DataError when nothing
// is labelled.
CategoricalVolume baseline_depthwise(const ConditionVolume& cond);

// Copies, at the same depth, the label of the horizontally nearest borehole
// column (ties: smaller x, then smaller y). Throws DataError without
// boreholes.
CategoricalVolume baseline_polygonal(const ConditionVolume& cond);

// Rows are truth, columns prediction; index = category id - 1.
struct ConfusionMatrix {
    std::array<std::array<std::int64_t, kNumCategories>, kNumCategories> counts{};
    std::int64_t total() const;
    std::int64_t row(int k) const;
    std::int64_t col(int k) const;
};

ConfusionMatrix confusion(const CategoricalVolume& pred, const CategoricalVolume& truth);

struct MetricsReport {
    double acc_incl_air = 0;
    double acc_excl_air = 0;   // over voxels whose truth is not air
    double miou_excl_air = 0;  // mean IoU of non-air categories present in the truth
    std::array<double, kNumCategories> recall{};
    std::array<double, kNumCategories> iou{};
    std::array<double, kNumCategories> proportion{};  // truth share over all voxels
    std::array<bool, kNumCategories> present{};
    std::int64_t voxels = 0;
};

MetricsReport metrics_from_confusion(const ConfusionMatrix& cm, int air_id = kAir);

// Throws ShapeError when dims differ.
MetricsReport compute_metrics(const CategoricalVolume& pred, const CategoricalVolume& truth, int air_id = kAir);

// Category, proportion, accuracy and IoU rows ordered by decreasing proportion.
std::string format_category_table(const MetricsReport& m);

}  // namespace geoflow
