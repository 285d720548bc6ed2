#include "geoflow/geostory.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "geoflow/rng.hpp"

namespace geoflow {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec3 sub(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

Vec3 unit(const Vec3& n, const char* what) {
    const double len = norm(n);
    if (!(len > 0.0) || !std::isfinite(len)) throw ConfigError(std::string(what) + ": plane normal must be non-zero");
    return {n.x / len, n.y / len, n.z / len};
}

// Upward-pointing normal of a plane with the given dip and dip direction.
Vec3 plane_normal(double dip_deg, double dip_direction_deg) {
    const double d = dip_deg * kDeg, a = dip_direction_deg * kDeg;
    return {std::sin(d) * std::sin(a), std::sin(d) * std::cos(a), std::cos(d)};
}

// Rotation of v about the unit axis u by angle (Rodrigues).
Vec3 rotate(const Vec3& v, const Vec3& u, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    const double ud = dot(u, v);
    const Vec3 cr{u.y * v.z - u.z * v.y, u.z * v.x - u.x * v.z, u.x * v.y - u.y * v.x};
    return {v.x * c + cr.x * s + u.x * ud * (1 - c), v.y * c + cr.y * s + u.y * ud * (1 - c),
            v.z * c + cr.z * s + u.z * ud * (1 - c)};
}

void check_range(const Range& r, const char* name) {
    if (!(r.min <= r.max) || !std::isfinite(r.min) || !std::isfinite(r.max))
        throw ConfigError(std::string("range '") + name + "' is empty or non-finite");
}

double draw(Rng& rng, const Range& r) { return r.min == r.max ? r.min : rng.uniform(r.min, r.max); }

// Lattice value in [-1, 1] for the topography noise.
double lattice_value(std::uint64_t seed, std::int64_t i, std::int64_t j) {
    const std::uint64_t h = Rng::mix(Rng::mix(seed, static_cast<std::uint64_t>(i) + 1000003ULL),
                                     static_cast<std::uint64_t>(j) + 7919ULL);
    return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

double smooth_noise(std::uint64_t seed, double u, double v) {
    const double fu = std::floor(u), fv = std::floor(v);
    const auto i = static_cast<std::int64_t>(fu), j = static_cast<std::int64_t>(fv);
    auto fade = [](double t) { return t * t * (3 - 2 * t); };
    const double tu = fade(u - fu), tv = fade(v - fv);
    const double a = lattice_value(seed, i, j), b = lattice_value(seed, i + 1, j);
    const double c = lattice_value(seed, i, j + 1), d = lattice_value(seed, i + 1, j + 1);
    return (a * (1 - tu) + b * tu) * (1 - tv) + (c * (1 - tu) + d * tu) * tv;
}

int event_rank(const Event& e) {
    return std::visit(
        [](const auto& ev) {
            using E = std::decay_t<decltype(ev)>;
            if constexpr (std::is_same_v<E, Deposit>) return 0;
            else if constexpr (std::is_same_v<E, Tilt>) return 1;
            else if constexpr (std::is_same_v<E, Fold>) return 2;
            else if constexpr (std::is_same_v<E, Fault>) return 3;
            else if constexpr (std::is_same_v<E, Dike>) return 4;
            else return 5;
        },
        e);
}

void validate_dike(const Dike& d) {
    unit(d.normal, "dike");
    const auto& h = d.halos;
    if (d.half_thickness < 0) throw ConfigError("dike half-thickness must be >= 0");
    const bool disabled = h.phyllic == 0 && h.argillic == 0 && h.propylitic == 0;
    if (!disabled && !(d.half_thickness <= h.phyllic && h.phyllic < h.argillic && h.argillic < h.propylitic))
        throw ConfigError("halo radii must satisfy half-thickness <= phyllic < argillic < propylitic");
}

}  // namespace

StoryRanges default_ranges(const Dims& dims) {
    StoryRanges r;
    const double vz = static_cast<double>(dims.z) / 64.0;
    const double lx = static_cast<double>(std::max(dims.x, dims.y)) / 64.0;
    auto scale = [](Range v, double k) { return Range{v.min * k, v.max * k}; };
    r.layer_thickness = scale(r.layer_thickness, vz);
    r.fold_amplitude = scale(r.fold_amplitude, vz);
    r.fold_wavelength = scale(r.fold_wavelength, lx);
    r.fault_throw = scale(r.fault_throw, vz);
    r.dike_half_thickness = scale(r.dike_half_thickness, lx);
    r.phyllic_width = scale(r.phyllic_width, lx);
    r.argillic_width = scale(r.argillic_width, lx);
    r.propylitic_width = scale(r.propylitic_width, lx);
    r.surface_elevation = scale(r.surface_elevation, vz);
    r.topo_amplitude = scale(r.topo_amplitude, vz);
    r.topo_wavelength = scale(r.topo_wavelength, lx);
    r.topo_noise = scale(r.topo_noise, vz);
    // Below ~1 voxel these features vanish on coarse grids.
    r.dike_half_thickness.min = std::max(r.dike_half_thickness.min, 0.75);
    r.dike_half_thickness.max = std::max(r.dike_half_thickness.max, 1.0);
    r.phyllic_width = {std::max(r.phyllic_width.min, 0.5), std::max(r.phyllic_width.max, 1.0)};
    r.argillic_width = {std::max(r.argillic_width.min, 0.75), std::max(r.argillic_width.max, 1.25)};
    r.layer_thickness.min = std::max(r.layer_thickness.min, std::min(1.5, r.layer_thickness.max));
    return r;
}

void validate_ranges(const StoryRanges& r) {
    check_range(r.layer_count, "layer_count");
    if (r.layer_count.min < 1) throw ConfigError("layer_count must be >= 1");
    check_range(r.layer_thickness, "layer_thickness");
    if (r.layer_thickness.min <= 0) throw ConfigError("layer thicknesses must be positive");
    if (r.basement_facies.empty() || r.host_facies.empty()) throw ConfigError("facies pools must be non-empty");
    for (auto f : r.basement_facies)
        if (!is_valid_category(f) || f == kAir) throw ConfigError("invalid basement facies id");
    for (auto f : r.host_facies)
        if (!is_valid_category(f) || f == kAir) throw ConfigError("invalid host facies id");
    check_range(r.tilt_dip, "tilt_dip");
    check_range(r.tilt_azimuth, "tilt_azimuth");
    if (r.fold_count < 0 || r.fault_count < 0) throw ConfigError("event counts must be >= 0");
    check_range(r.fold_amplitude, "fold_amplitude");
    check_range(r.fold_wavelength, "fold_wavelength");
    if (r.fold_wavelength.min <= 0) throw ConfigError("fold wavelength must be positive");
    check_range(r.fold_phase, "fold_phase");
    check_range(r.fold_plunge, "fold_plunge");
    check_range(r.fold_azimuth, "fold_azimuth");
    check_range(r.fault_throw, "fault_throw");
    check_range(r.fault_dip, "fault_dip");
    check_range(r.fault_strike, "fault_strike");
    check_range(r.fault_center, "fault_center");
    check_range(r.dike_half_thickness, "dike_half_thickness");
    check_range(r.dike_dip, "dike_dip");
    check_range(r.dike_strike, "dike_strike");
    check_range(r.dike_center, "dike_center");
    check_range(r.phyllic_width, "phyllic_width");
    check_range(r.argillic_width, "argillic_width");
    check_range(r.propylitic_width, "propylitic_width");
    if (r.dike_enabled && (r.argillic_width.min <= 0 || r.propylitic_width.min <= 0))
        throw ConfigError("argillic and propylitic halo widths must be positive");
    check_range(r.surface_elevation, "surface_elevation");
    check_range(r.topo_amplitude, "topo_amplitude");
    check_range(r.topo_wavelength, "topo_wavelength");
    if (r.topo_wavelength.min <= 0) throw ConfigError("topography wavelength must be positive");
    check_range(r.topo_noise, "topo_noise");
    check_range(r.soil_thickness, "soil_thickness");
    if (r.min_subsurface_fraction < 0 || r.min_subsurface_fraction > 1)
        throw ConfigError("min_subsurface_fraction must lie in [0, 1]");
}

void validate_story(const GeoStory& story) {
    if (story.dims.x <= 0 || story.dims.y <= 0 || story.dims.z <= 0) throw ConfigError("story grid must be non-empty");
    if (story.events.empty() || !std::holds_alternative<Deposit>(story.events.front()))
        throw ConfigError("a story starts with a deposition event");
    int last = -1, dikes = 0, deposits = 0, topos = 0;
    for (const auto& e : story.events) {
        const int r = event_rank(e);
        if (r < last) throw ConfigError("events out of order: deposition, tilt, folds, faults, dike, topography");
        last = r;
        std::visit(
            [&](const auto& ev) {
                using E = std::decay_t<decltype(ev)>;
                if constexpr (std::is_same_v<E, Deposit>) {
                    ++deposits;
                    if (ev.thicknesses.empty() || ev.thicknesses.size() != ev.facies.size())
                        throw ConfigError("deposit needs one facies per layer");
                    for (double t : ev.thicknesses)
                        if (!(t > 0)) throw ConfigError("layer thicknesses must be positive");
                    for (auto f : ev.facies)
                        if (!is_valid_category(f) || f == kAir) throw ConfigError("invalid deposited facies");
                } else if constexpr (std::is_same_v<E, Fold>) {
                    if (!(ev.wavelength > 0)) throw ConfigError("fold wavelength must be positive");
                } else if constexpr (std::is_same_v<E, Fault>) {
                    unit(ev.normal, "fault");
                } else if constexpr (std::is_same_v<E, Dike>) {
                    ++dikes;
                    validate_dike(ev);
                } else if constexpr (std::is_same_v<E, Topography>) {
                    ++topos;
                    if (ev.soil_thickness < 0) throw ConfigError("soil thickness must be >= 0");
                    if (ev.wavelength_x <= 0 || ev.wavelength_y <= 0)
                        throw ConfigError("topography wavelengths must be positive");
                }
            },
            e);
    }
    if (deposits != 1) throw ConfigError("exactly one deposition event is required");
    if (dikes > 1) throw ConfigError("at most one dike per story");
    if (topos > 1) throw ConfigError("at most one topography event per story");
}

GeoStory sample_story(std::uint64_t seed, const Dims& dims, const StoryRanges& r) {
    validate_ranges(r);
    if (dims.x <= 0 || dims.y <= 0 || dims.z <= 0) throw ConfigError("grid extents must be positive");
    Rng rng(Rng::mix(seed, 0x5703));
    GeoStory story;
    story.seed = seed;
    story.dims = dims;

    Deposit dep;
    const auto lo = static_cast<std::int64_t>(std::ceil(r.layer_count.min));
    const auto hi = static_cast<std::int64_t>(std::floor(r.layer_count.max));
    if (hi < lo) throw ConfigError("layer_count range contains no integer");
    const auto n_layers = lo + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
    std::uint8_t prev = r.basement_facies[rng.below(r.basement_facies.size())];
    dep.facies.push_back(prev);
    dep.thicknesses.push_back(draw(rng, r.layer_thickness));
    for (std::int64_t i = 1; i < n_layers; ++i) {
        std::vector<std::uint8_t> pool;
        for (auto f : r.host_facies)
            if (f != prev) pool.push_back(f);
        if (pool.empty()) pool = r.host_facies;
        prev = pool[rng.below(pool.size())];
        dep.facies.push_back(prev);
        dep.thicknesses.push_back(draw(rng, r.layer_thickness));
    }
    story.events.emplace_back(std::move(dep));

    story.events.emplace_back(Tilt{draw(rng, r.tilt_azimuth), draw(rng, r.tilt_dip)});

    for (int i = 0; i < r.fold_count; ++i) {
        Fold f;
        f.amplitude = draw(rng, r.fold_amplitude);
        f.wavelength = draw(rng, r.fold_wavelength);
        f.phase = draw(rng, r.fold_phase);
        f.plunge_deg = draw(rng, r.fold_plunge);
        f.azimuth_deg = draw(rng, r.fold_azimuth);
        story.events.emplace_back(f);
    }

    const double cx = static_cast<double>(dims.x), cy = static_cast<double>(dims.y), cz = static_cast<double>(dims.z);
    for (int i = 0; i < r.fault_count; ++i) {
        Fault f;
        f.throw_voxels = draw(rng, r.fault_throw);
        const double dip = draw(rng, r.fault_dip);
        const double strike = draw(rng, r.fault_strike);
        f.normal = plane_normal(dip, strike + 90.0);
        f.point = {draw(rng, r.fault_center) * cx, draw(rng, r.fault_center) * cy, 0.5 * cz};
        story.events.emplace_back(f);
    }

    if (r.dike_enabled) {
        Dike d;
        d.half_thickness = draw(rng, r.dike_half_thickness);
        const double dip = draw(rng, r.dike_dip);
        const double strike = draw(rng, r.dike_strike);
        d.normal = plane_normal(dip, strike + 90.0);
        d.point = {draw(rng, r.dike_center) * cx, draw(rng, r.dike_center) * cy, 0.5 * cz};
        d.halos.phyllic = d.half_thickness + draw(rng, r.phyllic_width);
        d.halos.argillic = d.halos.phyllic + draw(rng, r.argillic_width);
        d.halos.propylitic = d.halos.argillic + draw(rng, r.propylitic_width);
        story.events.emplace_back(d);
    }

    Topography t;
    t.base_elevation = draw(rng, r.surface_elevation);
    t.amplitude = draw(rng, r.topo_amplitude);
    t.wavelength_x = draw(rng, r.topo_wavelength);
    t.wavelength_y = draw(rng, r.topo_wavelength);
    t.phase_x = rng.uniform(0.0, 2.0 * std::numbers::pi);
    t.phase_y = rng.uniform(0.0, 2.0 * std::numbers::pi);
    t.noise_amplitude = draw(rng, r.topo_noise);
    t.noise_seed = Rng::mix(seed, 0x70F0);
    t.soil_thickness = draw(rng, r.soil_thickness);
    t.min_subsurface_fraction = r.min_subsurface_fraction;
    story.events.emplace_back(t);
    return story;
}

double surface_elevation(const Topography& t, const Dims& dims, double x, double y) {
    double h = t.base_elevation;
    if (t.amplitude != 0.0)
        h += t.amplitude * std::sin(2.0 * std::numbers::pi * x / t.wavelength_x + t.phase_x) *
             std::sin(2.0 * std::numbers::pi * y / t.wavelength_y + t.phase_y);
    if (t.noise_amplitude != 0.0) {
        const double cell = std::max<double>(1.0, static_cast<double>(std::max(dims.x, dims.y)) / 4.0);
        h += t.noise_amplitude * smooth_noise(t.noise_seed, x / cell, y / cell);
    }
    return std::max(h, t.min_subsurface_fraction * static_cast<double>(dims.z));
}

CategoricalVolume apply_dike_and_halos(const CategoricalVolume& vol, const Dike& dike) {
    validate_dike(dike);
    const Vec3 n = unit(dike.normal, "dike");
    CategoricalVolume out = vol;
    const Dims& d = vol.dims();
    for (std::int64_t x = 0; x < d.x; ++x)
        for (std::int64_t y = 0; y < d.y; ++y)
            for (std::int64_t z = 0; z < d.z; ++z) {
                auto& v = out.at(x, y, z);
                if (v == kAir) continue;
                const Vec3 p{x + 0.5, y + 0.5, z + 0.5};
                const double dist = std::abs(dot(sub(p, dike.point), n));
                if (dist < dike.half_thickness || dist < dike.halos.phyllic)
                    v = id(Facies::PhyllicSilicification);
                else if (dist < dike.halos.argillic)
                    v = id(Facies::OuterArgillicAlteration);
                // The propylitic shell alters mineralogy only; the host label stays.
            }
    return out;
}

CategoricalVolume realize(const GeoStory& story) {
    validate_story(story);
    const Dims& d = story.dims;
    const Vec3 centre{0.5 * d.x, 0.5 * d.y, 0.5 * d.z};

    const auto& dep = std::get<Deposit>(story.events.front());
    std::vector<double> tops(dep.thicknesses.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < tops.size(); ++i) tops[i] = (acc += dep.thicknesses[i]);

    // Structural events in reverse order, pre-normalised.
    struct Step {
        int kind;
        Vec3 a, b;
        double p0 = 0, p1 = 0, p2 = 0, p3 = 0;
    };
    std::vector<Step> inverse;
    const Dike* dike = nullptr;
    const Topography* topo = nullptr;
    for (auto it = story.events.rbegin(); it != story.events.rend(); ++it) {
        if (const auto* t = std::get_if<Tilt>(&*it)) {
            const double az = t->azimuth_deg * kDeg;
            inverse.push_back({1, {std::sin(az), std::cos(az), 0.0}, {}, -t->dip_deg * kDeg});
        } else if (const auto* f = std::get_if<Fold>(&*it)) {
            const double az = f->azimuth_deg * kDeg;
            inverse.push_back({2, {std::sin(az), std::cos(az), 0.0}, {}, f->amplitude, f->wavelength, f->phase,
                               std::tan(f->plunge_deg * kDeg)});
        } else if (const auto* fl = std::get_if<Fault>(&*it)) {
            inverse.push_back({3, fl->point, unit(fl->normal, "fault"), fl->throw_voxels});
        } else if (const auto* dk = std::get_if<Dike>(&*it)) {
            dike = dk;
        } else if (const auto* tp = std::get_if<Topography>(&*it)) {
            topo = tp;
        }
    }

    CategoricalVolume vol(d, dep.facies.back());
    for (std::int64_t x = 0; x < d.x; ++x)
        for (std::int64_t y = 0; y < d.y; ++y)
            for (std::int64_t z = 0; z < d.z; ++z) {
                Vec3 q{x + 0.5, y + 0.5, z + 0.5};
                for (const auto& s : inverse) {
                    if (s.kind == 1) {
                        if (s.p0 != 0.0) {
                            const Vec3 r = rotate(sub(q, centre), s.a, s.p0);
                            q = {centre.x + r.x, centre.y + r.y, centre.z + r.z};
                        }
                    } else if (s.kind == 2) {
                        if (s.p0 != 0.0) {
                            // a: unit vector across the fold axis; along-axis is its perpendicular.
                            const double across = q.x * s.a.x + q.y * s.a.y;
                            const double along = -q.x * s.a.y + q.y * s.a.x;
                            q.z -= s.p0 * std::sin(2.0 * std::numbers::pi * (across + along * s.p3) / s.p1 + s.p2);
                        }
                    } else if (s.kind == 3) {
                        if (dot(sub(q, s.a), s.b) > 0.0) q.z += s.p0;
                    }
                }
                // Layer i spans (tops[i-1], tops[i]]; a boundary value belongs to the deeper layer.
                const auto it = std::lower_bound(tops.begin(), tops.end() - 1, q.z);
                vol.at(x, y, z) = dep.facies[static_cast<std::size_t>(it - tops.begin())];
            }

    if (dike) vol = apply_dike_and_halos(vol, *dike);

    if (topo) {
        for (std::int64_t x = 0; x < d.x; ++x)
            for (std::int64_t y = 0; y < d.y; ++y) {
                const double h = surface_elevation(*topo, d, x + 0.5, y + 0.5);
                for (std::int64_t z = 0; z < d.z; ++z) {
                    const double zc = z + 0.5;
                    if (zc > h) vol.at(x, y, z) = kAir;
                    else if (zc > h - topo->soil_thickness) vol.at(x, y, z) = id(Facies::SurfaceSandSoil);
                }
            }
    }
    return vol;
}

}  // namespace geoflow
