#pragma once

// Sparse conditioning (surface + vertical boreholes) and the {-1,+1} one-hot
// embedding used by the generative models.

#include <cstdint>
#include <utility>
#include <vector>

#include "geoflow/tensor.hpp"
#include "geoflow/volume.hpp"

namespace geoflow {

inline constexpr std::int8_t kUnsampled = -1;

struct ConditionVolume {
    LabelGrid<std::int8_t> labels;  // -1 = unsampled, else 1..9
    std::vector<std::pair<std::int64_t, std::int64_t>> borehole_columns;  // ascending (x, y)

    const Dims& dims() const { return labels.dims(); }
    std::int64_t labelled_count() const;
    friend bool operator==(const ConditionVolume&, const ConditionVolume&) = default;
};

// Labels every air voxel, the topmost rock voxel of every column and the full
// depth of `n_holes` distinct random columns. Throws UsageError when n_holes
// is outside [0, X*Y].
ConditionVolume sample_sparse(const CategoricalVolume& vol, std::int64_t n_holes, std::uint64_t seed);

// Checks labels and that every borehole column is fully labelled.
void validate_condition(const ConditionVolume& cond);

// [9, X, Y, Z]; channel k-1 is +1 where the label is k, else -1.
tc::Tensor<float> embed(const CategoricalVolume& vol);

// Per-voxel argmax over the 9 channels; ties go to the lowest id.
template <typename T>
CategoricalVolume decode(const tc::Tensor<T>& cv);

// [10, X, Y, Z]: one-hot {-1,+1} where labelled, 0 where masked, then the
// known-mask channel.
tc::Tensor<float> condition_channels(const ConditionVolume& cond);

// Mask of labelled voxels as a [X, Y, Z] 0/1 tensor.
tc::Tensor<float> condition_mask(const ConditionVolume& cond);

}  // namespace geoflow
