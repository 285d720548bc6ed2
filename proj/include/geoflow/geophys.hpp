#pragma once

// Synthetic potential-field surveys over categorical volumes: property
// lookup, closed-form rectangular-prism gravity and total-field magnetic
// kernels, receiver draping and multiplicative-scale Gaussian noise.

#include <cstdint>
#include <map>
#include <vector>

#include "geoflow/volume.hpp"

namespace geoflow {

inline constexpr double kBackgroundDensity = 2050.0;       // kg/m^3
inline constexpr double kBackgroundSusceptibility = 5e-4;  // SI
inline constexpr double kGravitationalConstant = 6.6743e-11;

struct PropertyEntry {
    double density = 0;         // contrast, kg/m^3
    double susceptibility = 0;  // contrast, SI
    friend bool operator==(const PropertyEntry&, const PropertyEntry&) = default;
};

// Contrasts per category id. Air is stored for completeness but air cells
// are excluded from the forward computation (see ScalarGrid::active).
using PropertyTable = std::map<int, PropertyEntry>;

PropertyTable default_property_table();

// Cell-centred scalar field over the voxel grid plus the active-cell mask.
struct ScalarGrid {
    Dims dims;
    std::vector<double> values;
    std::vector<std::uint8_t> active;  // empty means every cell is active

    bool is_active(std::int64_t i) const { return active.empty() || active[static_cast<std::size_t>(i)] != 0; }
};

struct PropertyGrids {
    ScalarGrid density;
    ScalarGrid susceptibility;
};

// Voxelwise lookup; throws ConfigError when a present category has no entry.
PropertyGrids map_properties(const CategoricalVolume& vol, const PropertyTable& table);

struct Receiver {
    double easting = 0, northing = 0, elevation = 0;  // metres, z up, grid origin at the bottom corner
    friend bool operator==(const Receiver&, const Receiver&) = default;
};

struct FieldMap {
    std::int64_t nx = 0, ny = 0;       // receiver lattice, row-major with northing fastest
    std::vector<Receiver> receivers;
    std::vector<double> values;        // mGal or nT
    double noise_sigma = 0;            // absolute standard deviation of the added noise
    double noise_fraction = 0;         // sigma relative to the map RMS
    friend bool operator==(const FieldMap&, const FieldMap&) = default;
};

struct InducingField {
    double amplitude_nt = 50000.0;
    double inclination_deg = -50.0;
    double declination_deg = 10.0;
    friend bool operator==(const InducingField&, const InducingField&) = default;
};

void validate_inducing(const InducingField& f);

struct SurveyConfig {
    std::int64_t nx = 30, ny = 30;
    double voxel_size = 10.0;  // metres
    double clearance_voxels = 1.0;
    friend bool operator==(const SurveyConfig&, const SurveyConfig&) = default;
};

// Regular lattice spanning the horizontal extent, each receiver placed
// `clearance_voxels` above the highest rock top among the columns it touches.
std::vector<Receiver> drape_receivers(const CategoricalVolume& vol, const SurveyConfig& survey);

// Vertical attraction (positive down) in mGal. Throws GeometryError when a
// receiver lies inside or on an active cell.
FieldMap forward_gravity(const ScalarGrid& density, double voxel_size, const std::vector<Receiver>& receivers,
                         std::int64_t nx = 30, std::int64_t ny = 30);

// Total-field anomaly in nT from magnetisation induced by `inducing`.
FieldMap forward_magnetics(const ScalarGrid& susceptibility, const InducingField& inducing, double voxel_size,
                           const std::vector<Receiver>& receivers, std::int64_t nx = 30, std::int64_t ny = 30);

// Unit vector of the inducing field in the (east, north, up) frame.
std::array<double, 3> field_direction(const InducingField& f);

// Adds N(0, (sigma * rms)^2) with sigma ~ U(0.005, 0.01); rms falls back to 1
// for an all-zero map.
FieldMap add_noise(const FieldMap& map, std::uint64_t seed);

}  // namespace geoflow
