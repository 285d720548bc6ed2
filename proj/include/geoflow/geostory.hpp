#pragma once

// Procedural geological histories ("geostories") and their voxelisation.
//
// A story is an ordered event list: deposition, tilt, folds, faults, one
// dike with alteration halos, then topography with a soil veneer. Realising
// a story maps every voxel centre back through the structural events to its
// pre-deformation stratigraphic elevation and reads the deposited layer.

#include <cstdint>
#include <variant>
#include <vector>

#include "geoflow/volume.hpp"

namespace geoflow {

struct Vec3 {
    double x = 0, y = 0, z = 0;
    friend bool operator==(const Vec3&, const Vec3&) = default;
};

// Layer stack from the bottom up. The first layer extends indefinitely
// downward and the last indefinitely upward; layer i occupies stratigraphic
// elevations (B[i-1], B[i]] with B the running sum of thicknesses.
struct Deposit {
    std::vector<double> thicknesses;
    std::vector<std::uint8_t> facies;
    friend bool operator==(const Deposit&, const Deposit&) = default;
};

// Rigid rotation by `dip_deg` about a horizontal axis with the given azimuth
// (degrees clockwise from +y), through the grid centre.
struct Tilt {
    double azimuth_deg = 0, dip_deg = 0;
    friend bool operator==(const Tilt&, const Tilt&) = default;
};

// Sinusoidal vertical displacement across a horizontal fold axis. Plunge
// shifts the phase linearly along the axis.
struct Fold {
    double amplitude = 0, wavelength = 1, phase = 0, plunge_deg = 0, azimuth_deg = 0;
    friend bool operator==(const Fold&, const Fold&) = default;
};

// Normal fault: the block on the side the normal points to (hanging wall)
// drops vertically by `throw_voxels`.
struct Fault {
    Vec3 point, normal{0, 0, 1};
    double throw_voxels = 0;
    friend bool operator==(const Fault&, const Fault&) = default;
};

// Halo radii are distances from the dike plane, strictly increasing outward.
struct HaloRadii {
    double phyllic = 0, argillic = 0, propylitic = 0;
    friend bool operator==(const HaloRadii&, const HaloRadii&) = default;
};

struct Dike {
    Vec3 point, normal{1, 0, 0};
    double half_thickness = 0;
    HaloRadii halos;
    friend bool operator==(const Dike&, const Dike&) = default;
};

// Surface elevation h(x, y) = base + amplitude * sin(.) * sin(.) + smooth
// seeded noise, clamped to keep at least `min_subsurface_fraction` of every
// column below ground. Voxels whose centre lies above h are air; the
// `soil_thickness` below h is soil.
struct Topography {
    double base_elevation = 0;
    double amplitude = 0;
    double wavelength_x = 1, wavelength_y = 1;
    double phase_x = 0, phase_y = 0;
    double noise_amplitude = 0;
    std::uint64_t noise_seed = 0;
    double soil_thickness = 0;
    double min_subsurface_fraction = 0.6;
    friend bool operator==(const Topography&, const Topography&) = default;
};

using Event = std::variant<Deposit, Tilt, Fold, Fault, Dike, Topography>;

struct GeoStory {
    std::uint64_t seed = 0;
    Dims dims;
    std::vector<Event> events;
    friend bool operator==(const GeoStory&, const GeoStory&) = default;
};

struct Range {
    double min = 0, max = 0;
    bool contains(double v) const { return v >= min && v <= max; }
    friend bool operator==(const Range&, const Range&) = default;
};

// Parameter ranges for sample_story. Lengths are in voxels, angles in
// degrees (fold phase in radians).
struct StoryRanges {
    Range layer_count{4, 7};
    Range layer_thickness{6, 16};
    std::vector<std::uint8_t> basement_facies{4, 2};
    std::vector<std::uint8_t> host_facies{2, 3, 4, 5, 6};

    Range tilt_dip{0, 20};
    Range tilt_azimuth{0, 360};

    int fold_count = 1;
    Range fold_amplitude{0, 6};
    Range fold_wavelength{24, 96};
    Range fold_phase{0, 6.283185307179586};
    Range fold_plunge{0, 15};
    Range fold_azimuth{0, 180};

    int fault_count = 2;
    Range fault_throw{2, 10};
    Range fault_dip{50, 80};
    Range fault_strike{0, 360};
    Range fault_center{0.2, 0.8};  // fraction of the lateral extent

    bool dike_enabled = true;
    Range dike_half_thickness{1, 2.5};
    Range dike_dip{70, 90};
    Range dike_strike{0, 180};
    Range dike_center{0.3, 0.7};  // fraction of the lateral extent
    Range phyllic_width{1, 3};
    Range argillic_width{1, 3};
    Range propylitic_width{2, 5};

    Range surface_elevation{46, 54};
    Range topo_amplitude{0, 5};
    Range topo_wavelength{32, 128};
    Range topo_noise{0, 2};
    Range soil_thickness{1, 2.5};
    double min_subsurface_fraction = 0.6;

    friend bool operator==(const StoryRanges&, const StoryRanges&) = default;
};

// Defaults tuned for a 64-voxel column, rescaled to `dims` (vertical lengths
// by z/64, lateral wavelengths by x/64).
StoryRanges default_ranges(const Dims& dims);

// Throws ConfigError for min > max, empty facies pools or negative counts.
void validate_ranges(const StoryRanges& ranges);

// Throws ConfigError when event order or parameters are invalid.
void validate_story(const GeoStory& story);

GeoStory sample_story(std::uint64_t seed, const Dims& dims, const StoryRanges& ranges);

CategoricalVolume realize(const GeoStory& story);

// Overwrites non-air voxels by distance to the dike plane: inside the dike or
// phyllic radius -> phyllic+silicification, up to the argillic radius ->
// outer argillic, propylitic shell keeps the host label.
CategoricalVolume apply_dike_and_halos(const CategoricalVolume& vol, const Dike& dike);

// Surface elevation (voxel units, z up) at horizontal position (x, y).
double surface_elevation(const Topography& topo, const Dims& dims, double x, double y);

}  // namespace geoflow
