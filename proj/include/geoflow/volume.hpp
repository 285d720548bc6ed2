#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include "geoflow/errors.hpp"

namespace geoflow {

inline constexpr int kNumCategories = 9;
inline constexpr std::uint8_t kAir = 1;

enum class Facies : std::uint8_t {
    Air = 1,
    MollyDarlingSandstone = 2,
    Ignimbrite = 3,
    MtJanetAndesite = 4,
    Conglomerate = 5,
    SiltstoneMudstone = 6,
    SurfaceSandSoil = 7,
    OuterArgillicAlteration = 8,
    PhyllicSilicification = 9,
};

constexpr std::uint8_t id(Facies f) { return static_cast<std::uint8_t>(f); }
constexpr bool is_valid_category(int label) { return label >= 1 && label <= kNumCategories; }

// Display name for category ids 1..9.
std::string_view facies_name(int label);

struct Dims {
    std::int64_t x = 0, y = 0, z = 0;
    std::int64_t voxels() const { return x * y * z; }
    std::int64_t columns() const { return x * y; }
    friend bool operator==(const Dims&, const Dims&) = default;
};

// Dense label grid indexed [x][y][z] with z the fastest axis and z = 0 the
// bottom of the model.
template <typename Label>
class LabelGrid {
public:
    LabelGrid() = default;
    LabelGrid(Dims dims, Label fill) : dims_(dims), labels_(static_cast<std::size_t>(dims.voxels()), fill) {
        if (dims.x <= 0 || dims.y <= 0 || dims.z <= 0) throw ConfigError("grid extents must be positive");
    }

    const Dims& dims() const { return dims_; }
    std::int64_t index(std::int64_t x, std::int64_t y, std::int64_t z) const { return (x * dims_.y + y) * dims_.z + z; }

    Label& at(std::int64_t x, std::int64_t y, std::int64_t z) { return labels_[static_cast<std::size_t>(index(x, y, z))]; }
    Label at(std::int64_t x, std::int64_t y, std::int64_t z) const {
        return labels_[static_cast<std::size_t>(index(x, y, z))];
    }
    Label& operator[](std::int64_t i) { return labels_[static_cast<std::size_t>(i)]; }
    Label operator[](std::int64_t i) const { return labels_[static_cast<std::size_t>(i)]; }

    std::vector<Label>& labels() { return labels_; }
    const std::vector<Label>& labels() const { return labels_; }

    friend bool operator==(const LabelGrid&, const LabelGrid&) = default;

private:
    Dims dims_;
    std::vector<Label> labels_;
};

// Ground-truth facies volume; every voxel holds a category id in 1..9.
using CategoricalVolume = LabelGrid<std::uint8_t>;

// Validates labels and the per-column air rule (once air going up, always air).
void validate_volume(const CategoricalVolume& vol);

// Index of the topmost non-air voxel in column (x, y), or -1 when the column
// is entirely air.
std::int64_t surface_index(const CategoricalVolume& vol, std::int64_t x, std::int64_t y);

}  // namespace geoflow
