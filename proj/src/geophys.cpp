#include "geoflow/geophys.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "geoflow/rng.hpp"

namespace geoflow {

PropertyTable default_property_table() {
    return {
        {1, {-kBackgroundDensity, -kBackgroundSusceptibility}},
        {2, {-50.0, 0.0}},
        {3, {-100.0, 1e-4}},
        {4, {150.0, 1e-3}},
        {5, {50.0, 0.0}},
        {6, {-20.0, 0.0}},
        {7, {-150.0, 0.0}},
        {8, {-80.0, 1e-3}},
        {9, {30.0, 5e-3}},
    };
}

PropertyGrids map_properties(const CategoricalVolume& vol, const PropertyTable& table) {
    const Dims& d = vol.dims();
    const auto n = static_cast<std::size_t>(d.voxels());
    PropertyGrids g{{d, std::vector<double>(n), std::vector<std::uint8_t>(n)},
                    {d, std::vector<double>(n), std::vector<std::uint8_t>(n)}};
    for (std::size_t i = 0; i < n; ++i) {
        const int l = vol.labels()[i];
        if (!is_valid_category(l)) throw DataError("invalid label " + std::to_string(l));
        const auto it = table.find(l);
        if (it == table.end()) throw ConfigError("property table has no entry for category " + std::to_string(l));
        g.density.values[i] = it->second.density;
        g.susceptibility.values[i] = it->second.susceptibility;
        const std::uint8_t act = l != kAir;
        g.density.active[i] = act;
        g.susceptibility.active[i] = act;
    }
    return g;
}

void validate_inducing(const InducingField& f) {
    if (!(f.amplitude_nt > 0) || !std::isfinite(f.amplitude_nt)) throw ConfigError("inducing amplitude must be > 0");
    if (!(std::abs(f.inclination_deg) <= 90)) throw ConfigError("inclination must lie in [-90, 90]");
    if (!(std::abs(f.declination_deg) <= 360)) throw ConfigError("declination must lie in [-360, 360]");
}

std::array<double, 3> field_direction(const InducingField& f) {
    const double inc = f.inclination_deg * std::numbers::pi / 180.0;
    const double dec = f.declination_deg * std::numbers::pi / 180.0;
    // Positive inclination points down; z is up.
    return {std::cos(inc) * std::sin(dec), std::cos(inc) * std::cos(dec), -std::sin(inc)};
}

namespace {

// Cell indices whose closed interval [i*s, (i+1)*s] contains p.
std::pair<std::int64_t, std::int64_t> touching(double p, double s, std::int64_t n) {
    const double q = p / s;
    const auto lo = std::max<std::int64_t>(static_cast<std::int64_t>(std::ceil(q)) - 1, 0);
    const auto hi = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(q)), n - 1);
    return {lo, hi};
}

void check_receivers(const ScalarGrid& g, double s, const std::vector<Receiver>& rx, std::int64_t nx,
                     std::int64_t ny) {
    if (!(s > 0)) throw ConfigError("voxel size must be positive");
    if (static_cast<std::int64_t>(rx.size()) != nx * ny)
        throw ConfigError("receiver count " + std::to_string(rx.size()) + " does not match lattice " +
                          std::to_string(nx) + "x" + std::to_string(ny));
    if (static_cast<std::int64_t>(g.values.size()) != g.dims.voxels()) throw ShapeError("property grid size mismatch");
    const Dims& d = g.dims;
    for (const auto& r : rx) {
        auto [x0, x1] = touching(r.easting, s, d.x);
        auto [y0, y1] = touching(r.northing, s, d.y);
        auto [z0, z1] = touching(r.elevation, s, d.z);
        for (auto x = x0; x <= x1; ++x)
            for (auto y = y0; y <= y1; ++y)
                for (auto z = z0; z <= z1; ++z)
                    if (g.is_active((x * d.y + y) * d.z + z))
                        throw GeometryError("receiver at (" + std::to_string(r.easting) + ", " +
                                            std::to_string(r.northing) + ", " + std::to_string(r.elevation) +
                                            ") lies inside an active cell");
    }
}

// Signed corner sums of every active cell, gathered onto the node lattice.
// Each cell contributes +-value at its 8 corners (+ at upper bounds); nodes
// interior to uniform regions cancel and are dropped.
struct NodeWeight {
    double x, y, z, w;
};

std::vector<NodeWeight> node_weights(const ScalarGrid& g, double s) {
    const Dims& d = g.dims;
    const std::int64_t NX = d.x + 1, NY = d.y + 1, NZ = d.z + 1;
    std::vector<double> w(static_cast<std::size_t>(NX * NY * NZ), 0.0);
    for (std::int64_t x = 0; x < d.x; ++x)
        for (std::int64_t y = 0; y < d.y; ++y)
            for (std::int64_t z = 0; z < d.z; ++z) {
                const std::int64_t i = (x * d.y + y) * d.z + z;
                const double v = g.values[static_cast<std::size_t>(i)];
                if (v == 0.0 || !g.is_active(i)) continue;
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b)
                        for (int c = 0; c < 2; ++c) {
                            // Product of +1 (upper bound) / -1 (lower bound) over the axes.
                            const double corner = (a + b + c) % 2 == 1 ? 1.0 : -1.0;
                            w[static_cast<std::size_t>(((x + a) * NY + (y + b)) * NZ + (z + c))] += corner * v;
                        }
            }
    std::vector<NodeWeight> out;
    for (std::int64_t x = 0; x < NX; ++x)
        for (std::int64_t y = 0; y < NY; ++y)
            for (std::int64_t z = 0; z < NZ; ++z) {
                const double v = w[static_cast<std::size_t>((x * NY + y) * NZ + z)];
                if (v != 0.0) out.push_back({x * s, y * s, z * s, v});
            }
    return out;
}

// ln(v + r) with the v-independent ln(sqrt(u^2 + w^2)) dropped; it cancels
// in every bracket over v.
double log_term(double v, double rho) {
    if (rho > 0) return std::asinh(v / rho);
    if (v == 0) return 0.0;
    return std::copysign(std::log(2.0 * std::abs(v)), v);
}

double atan_term(double num, double den) { return den == 0.0 ? 0.0 : std::atan(num / den); }

// Antiderivative of the vertical attraction kernel of a unit-density prism.
double gravity_kernel(double u, double v, double w) {
    const double r = std::sqrt(u * u + v * v + w * w);
    double k = 0.0;
    if (u != 0) k += u * log_term(v, std::hypot(u, w));
    if (v != 0) k += v * log_term(u, std::hypot(v, w));
    if (w != 0) k -= w * atan_term(u * v, w * r);
    return k;
}

FieldMap make_map(const std::vector<Receiver>& rx, std::int64_t nx, std::int64_t ny) {
    FieldMap m;
    m.nx = nx;
    m.ny = ny;
    m.receivers = rx;
    m.values.assign(rx.size(), 0.0);
    return m;
}

}  // namespace

std::vector<Receiver> drape_receivers(const CategoricalVolume& vol, const SurveyConfig& survey) {
    if (survey.nx <= 0 || survey.ny <= 0) throw ConfigError("receiver lattice must be non-empty");
    if (!(survey.voxel_size > 0)) throw ConfigError("voxel size must be positive");
    if (!(survey.clearance_voxels > 0)) throw ConfigError("receiver clearance must be positive");
    const Dims& d = vol.dims();
    const double s = survey.voxel_size;
    std::vector<Receiver> out;
    out.reserve(static_cast<std::size_t>(survey.nx * survey.ny));
    for (std::int64_t a = 0; a < survey.nx; ++a)
        for (std::int64_t b = 0; b < survey.ny; ++b) {
            Receiver r;
            r.easting = (a + 0.5) * d.x * s / survey.nx;
            r.northing = (b + 0.5) * d.y * s / survey.ny;
            auto [x0, x1] = touching(r.easting, s, d.x);
            auto [y0, y1] = touching(r.northing, s, d.y);
            double top = 0.0;
            for (auto x = x0; x <= x1; ++x)
                for (auto y = y0; y <= y1; ++y)
                    top = std::max(top, static_cast<double>(surface_index(vol, x, y) + 1) * s);
            r.elevation = top + survey.clearance_voxels * s;
            out.push_back(r);
        }
    return out;
}

FieldMap forward_gravity(const ScalarGrid& density, double voxel_size, const std::vector<Receiver>& receivers,
                         std::int64_t nx, std::int64_t ny) {
    check_receivers(density, voxel_size, receivers, nx, ny);
    const auto nodes = node_weights(density, voxel_size);
    FieldMap m = make_map(receivers, nx, ny);
    for (std::size_t i = 0; i < receivers.size(); ++i) {
        const auto& r = receivers[i];
        double acc = 0.0;
        for (const auto& n : nodes) acc += n.w * gravity_kernel(n.x - r.easting, n.y - r.northing, n.z - r.elevation);
        m.values[i] = kGravitationalConstant * acc * 1e5;  // m/s^2 -> mGal
    }
    return m;
}

FieldMap forward_magnetics(const ScalarGrid& susceptibility, const InducingField& inducing, double voxel_size,
                           const std::vector<Receiver>& receivers, std::int64_t nx, std::int64_t ny) {
    validate_inducing(inducing);
    check_receivers(susceptibility, voxel_size, receivers, nx, ny);
    const auto t = field_direction(inducing);
    const double txx = t[0] * t[0], tyy = t[1] * t[1], tzz = t[2] * t[2];
    const double txy = 2 * t[0] * t[1], txz = 2 * t[0] * t[2], tyz = 2 * t[1] * t[2];
    const auto nodes = node_weights(susceptibility, voxel_size);
    FieldMap m = make_map(receivers, nx, ny);
    for (std::size_t i = 0; i < receivers.size(); ++i) {
        const auto& rc = receivers[i];
        double acc = 0.0;
        for (const auto& n : nodes) {
            const double u = n.x - rc.easting, v = n.y - rc.northing, w = n.z - rc.elevation;
            const double r = std::sqrt(u * u + v * v + w * w);
            // Second derivatives of the Newtonian potential of the prism.
            const double kxx = -atan_term(v * w, u * r);
            const double kyy = -atan_term(u * w, v * r);
            const double kzz = -atan_term(u * v, w * r);
            const double kxy = log_term(w, std::hypot(u, v));
            const double kxz = log_term(v, std::hypot(u, w));
            const double kyz = log_term(u, std::hypot(v, w));
            acc += n.w * (txx * kxx + tyy * kyy + tzz * kzz + txy * kxy + txz * kxz + tyz * kyz);
        }
        m.values[i] = inducing.amplitude_nt / (4.0 * std::numbers::pi) * acc;
    }
    return m;
}

FieldMap add_noise(const FieldMap& map, std::uint64_t seed) {
    FieldMap out = map;
    double ss = 0.0;
    for (double v : map.values) {
        if (!std::isfinite(v)) throw NumericalError("non-finite field value");
        ss += v * v;
    }
    double rms = map.values.empty() ? 0.0 : std::sqrt(ss / static_cast<double>(map.values.size()));
    if (rms == 0.0) rms = 1.0;
    Rng rng(seed);
    const double frac = rng.uniform(0.005, 0.01);
    out.noise_fraction = frac;
    out.noise_sigma = frac * rms;
    for (double& v : out.values) v += out.noise_sigma * rng.normal();
    return out;
}

}  // namespace geoflow
