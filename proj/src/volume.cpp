#include "geoflow/volume.hpp"

#include <string>

namespace geoflow {

std::string_view facies_name(int label) {
    static constexpr std::array<std::string_view, kNumCategories> names{
        "Air",
        "Molly Darling Sandstone",
        "Ignimbrite",
        "Mt Janet Andesite",
        "Conglomerate",
        "Siltstone / Mudstone",
        "Surface Sand / Soil",
        "Outer Argillic Alteration",
        "Phyllic + Silicification",
    };
    if (!is_valid_category(label)) throw DataError("invalid category id " + std::to_string(label));
    return names[static_cast<std::size_t>(label - 1)];
}

void validate_volume(const CategoricalVolume& vol) {
    const Dims& d = vol.dims();
    for (std::int64_t x = 0; x < d.x; ++x)
        for (std::int64_t y = 0; y < d.y; ++y) {
            bool air_seen = false;
            for (std::int64_t z = 0; z < d.z; ++z) {
                const int v = vol.at(x, y, z);
                if (!is_valid_category(v))
                    throw DataError("invalid label " + std::to_string(v) + " at (" + std::to_string(x) + "," +
                                    std::to_string(y) + "," + std::to_string(z) + ")");
                if (v == kAir) air_seen = true;
                else if (air_seen)
                    throw DataError("rock above air in column (" + std::to_string(x) + "," + std::to_string(y) + ")");
            }
        }
}

std::int64_t surface_index(const CategoricalVolume& vol, std::int64_t x, std::int64_t y) {
    for (std::int64_t z = vol.dims().z - 1; z >= 0; --z)
        if (vol.at(x, y, z) != kAir) return z;
    return -1;
}

}  // namespace geoflow
