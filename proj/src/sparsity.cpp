#include "geoflow/sparsity.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "geoflow/rng.hpp"

namespace geoflow {

std::int64_t ConditionVolume::labelled_count() const {
    std::int64_t n = 0;
    for (auto l : labels.labels()) n += l != kUnsampled;
    return n;
}

ConditionVolume sample_sparse(const CategoricalVolume& vol, std::int64_t n_holes, std::uint64_t seed) {
    const Dims& d = vol.dims();
    if (n_holes < 0 || n_holes > d.columns())
        throw UsageError("n_holes " + std::to_string(n_holes) + " outside [0, " + std::to_string(d.columns()) + "]");
    validate_volume(vol);

    ConditionVolume c{LabelGrid<std::int8_t>(d, kUnsampled), {}};
    for (std::int64_t x = 0; x < d.x; ++x)
        for (std::int64_t y = 0; y < d.y; ++y) {
            const std::int64_t top = surface_index(vol, x, y);
            for (std::int64_t z = std::max<std::int64_t>(top, 0); z < d.z; ++z)
                c.labels.at(x, y, z) = static_cast<std::int8_t>(vol.at(x, y, z));
        }

    // Partial Fisher-Yates over column indices.
    std::vector<std::int64_t> cols(static_cast<std::size_t>(d.columns()));
    std::iota(cols.begin(), cols.end(), 0);
    Rng rng(seed);
    for (std::int64_t i = 0; i < n_holes; ++i) {
        const auto j = i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(d.columns() - i)));
        std::swap(cols[static_cast<std::size_t>(i)], cols[static_cast<std::size_t>(j)]);
        const std::int64_t x = cols[static_cast<std::size_t>(i)] / d.y, y = cols[static_cast<std::size_t>(i)] % d.y;
        c.borehole_columns.emplace_back(x, y);
        for (std::int64_t z = 0; z < d.z; ++z) c.labels.at(x, y, z) = static_cast<std::int8_t>(vol.at(x, y, z));
    }
    std::sort(c.borehole_columns.begin(), c.borehole_columns.end());
    return c;
}

void validate_condition(const ConditionVolume& cond) {
    const Dims& d = cond.dims();
    for (auto l : cond.labels.labels())
        if (l != kUnsampled && !is_valid_category(l)) throw DataError("invalid condition label " + std::to_string(l));
    for (auto [x, y] : cond.borehole_columns) {
        if (x < 0 || y < 0 || x >= d.x || y >= d.y) throw DataError("borehole column outside grid");
        for (std::int64_t z = 0; z < d.z; ++z)
            if (cond.labels.at(x, y, z) == kUnsampled) throw DataError("borehole column has unlabelled voxels");
    }
}

tc::Tensor<float> embed(const CategoricalVolume& vol) {
    const std::int64_t n = vol.dims().voxels();
    const Dims& d = vol.dims();
    tc::Tensor<float> out({kNumCategories, d.x, d.y, d.z}, -1.0f);
    for (std::int64_t i = 0; i < n; ++i) {
        const int l = vol[i];
        if (!is_valid_category(l)) throw DataError("invalid label " + std::to_string(l));
        out[(l - 1) * n + i] = 1.0f;
    }
    return out;
}

template <typename T>
CategoricalVolume decode(const tc::Tensor<T>& cv) {
    if (cv.rank() != 4 || cv.dim(0) != kNumCategories)
        throw ShapeError("decode expects [9, X, Y, Z], got " + tc::shape_str(cv.shape()));
    const Dims d{cv.dim(1), cv.dim(2), cv.dim(3)};
    const std::int64_t n = d.voxels();
    CategoricalVolume out(d, 1);
    for (std::int64_t i = 0; i < n; ++i) {
        int best = 0;
        for (int k = 1; k < kNumCategories; ++k)
            if (cv[k * n + i] > cv[best * n + i]) best = k;
        out[i] = static_cast<std::uint8_t>(best + 1);
    }
    return out;
}

template CategoricalVolume decode(const tc::Tensor<float>&);
template CategoricalVolume decode(const tc::Tensor<double>&);

tc::Tensor<float> condition_channels(const ConditionVolume& cond) {
    const Dims& d = cond.dims();
    const std::int64_t n = d.voxels();
    tc::Tensor<float> out({kNumCategories + 1, d.x, d.y, d.z}, 0.0f);
    for (std::int64_t i = 0; i < n; ++i) {
        const int l = cond.labels[i];
        if (l == kUnsampled) continue;
        if (!is_valid_category(l)) throw DataError("invalid condition label " + std::to_string(l));
        for (int k = 0; k < kNumCategories; ++k) out[k * n + i] = (k + 1 == l) ? 1.0f : -1.0f;
        out[kNumCategories * n + i] = 1.0f;
    }
    return out;
}

tc::Tensor<float> condition_mask(const ConditionVolume& cond) {
    const Dims& d = cond.dims();
    tc::Tensor<float> out({d.x, d.y, d.z}, 0.0f);
    for (std::int64_t i = 0; i < d.voxels(); ++i) out[i] = cond.labels[i] != kUnsampled ? 1.0f : 0.0f;
    return out;
}

}  // namespace geoflow
