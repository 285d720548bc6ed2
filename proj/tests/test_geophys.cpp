#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <numbers>

#include "geoflow/geophys.hpp"
#include "geoflow/geostory.hpp"

using namespace geoflow;

namespace {

ScalarGrid single_cell(Dims d, std::int64_t x, std::int64_t y, std::int64_t z, double v) {
    ScalarGrid g{d, std::vector<double>(static_cast<std::size_t>(d.voxels()), 0.0), {}};
    g.values[static_cast<std::size_t>((x * d.y + y) * d.z + z)] = v;
    return g;
}

double max_abs(const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

CategoricalVolume story_volume(std::uint64_t seed, Dims d = {16, 16, 16}) {
    return realize(sample_story(seed, d, default_ranges(d)));
}

}  // namespace

TEST(MapProperties, UniformAndCheckerboard) {
    const auto table = default_property_table();
    CategoricalVolume v({4, 4, 4}, 4);
    auto g = map_properties(v, table);
    for (double x : g.density.values) EXPECT_EQ(x, table.at(4).density);
    for (double x : g.susceptibility.values) EXPECT_EQ(x, table.at(4).susceptibility);

    for (std::int64_t i = 0; i < v.dims().voxels(); ++i) v[i] = (i % 2) ? 2 : 9;
    g = map_properties(v, table);
    for (std::int64_t i = 0; i < v.dims().voxels(); ++i)
        EXPECT_EQ(g.density.values[static_cast<std::size_t>(i)], table.at(i % 2 ? 2 : 9).density);

    PropertyTable zero;
    for (int k = 1; k <= 9; ++k) zero[k] = {};
    g = map_properties(v, zero);
    for (double x : g.density.values) EXPECT_EQ(x, 0.0);
}

TEST(MapProperties, AirUsesAirEntryAndIsInactive) {
    CategoricalVolume v({2, 2, 2}, 1);
    v.at(0, 0, 0) = 3;
    auto g = map_properties(v, default_property_table());
    EXPECT_EQ(g.density.values[1], -kBackgroundDensity);
    EXPECT_FALSE(g.density.is_active(1));
    EXPECT_TRUE(g.density.is_active(0));
}

TEST(MapProperties, MissingEntryIsConfigError) {
    auto table = default_property_table();
    table.erase(5);
    CategoricalVolume v({2, 2, 2}, 5);
    EXPECT_THROW(map_properties(v, table), ConfigError);
}

TEST(ForwardGravity, SingleCubeMatchesQuadrature) {
    const double s = 10.0, rho = 1000.0;
    auto g = single_cell({3, 3, 3}, 1, 1, 1, rho);
    const Receiver r{15.0, 15.0, 35.0};
    auto m = forward_gravity(g, s, {r}, 1, 1);

    // Newtonian integral of the vertical attraction, positive down.
    using boost::math::quadrature::gauss_kronrod;
    auto integrand_z = [&](double x, double y) {
        return gauss_kronrod<double, 31>::integrate(
            [&](double z) {
                const double dx = x - r.easting, dy = y - r.northing, dz = z - r.elevation;
                const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
                return -dz / (d * d * d);
            },
            10.0, 20.0, 10, 1e-12);
    };
    auto integrand_y = [&](double x) {
        return gauss_kronrod<double, 31>::integrate([&](double y) { return integrand_z(x, y); }, 10.0, 20.0, 10,
                                                    1e-12);
    };
    const double integral = gauss_kronrod<double, 31>::integrate(integrand_y, 10.0, 20.0, 10, 1e-12);
    const double oracle = kGravitationalConstant * rho * integral * 1e5;
    EXPECT_GT(m.values[0], 0.0);
    EXPECT_LT(std::abs(m.values[0] - oracle) / oracle, 0.005);
    // Point-mass sanity: 20 m away, 1000 m^3 at 1000 kg/m^3.
    EXPECT_NEAR(m.values[0], kGravitationalConstant * rho * 1000.0 / 400.0 * 1e5, 0.05 * m.values[0]);
}

TEST(ForwardGravity, ZeroContrastGivesZero) {
    CategoricalVolume v({8, 8, 8}, 2);
    PropertyTable zero;
    for (int k = 1; k <= 9; ++k) zero[k] = {};
    auto g = map_properties(v, zero);
    auto rx = drape_receivers(v, {});
    auto m = forward_gravity(g.density, 10.0, rx);
    EXPECT_EQ(max_abs(m.values), 0.0);
    auto mm = forward_magnetics(g.susceptibility, {}, 10.0, rx);
    EXPECT_EQ(max_abs(mm.values), 0.0);
}

TEST(ForwardFields, SuperpositionAndScaling) {
    const auto va = story_volume(1), vb = story_volume(2);
    auto ga = map_properties(va, default_property_table());
    auto gb = map_properties(vb, default_property_table());
    // Shared active mask so the operator is the same for A, B and A + B.
    ScalarGrid a{va.dims(), ga.density.values, {}}, b{va.dims(), gb.density.values, {}}, ab = a;
    for (std::size_t i = 0; i < ab.values.size(); ++i) ab.values[i] += b.values[i];
    SurveyConfig survey;
    survey.clearance_voxels = 2.0;
    auto rx = drape_receivers(CategoricalVolume(va.dims(), 2), survey);

    auto fa = forward_gravity(a, 10.0, rx), fb = forward_gravity(b, 10.0, rx), fab = forward_gravity(ab, 10.0, rx);
    const double scale = max_abs(fab.values);
    for (std::size_t i = 0; i < rx.size(); ++i)
        ASSERT_LT(std::abs(fab.values[i] - fa.values[i] - fb.values[i]), 1e-10 * scale);

    ScalarGrid ma{va.dims(), ga.susceptibility.values, {}}, mb{va.dims(), gb.susceptibility.values, {}}, mab = ma;
    for (std::size_t i = 0; i < mab.values.size(); ++i) mab.values[i] += mb.values[i];
    auto ta = forward_magnetics(ma, {}, 10.0, rx), tb = forward_magnetics(mb, {}, 10.0, rx),
         tab = forward_magnetics(mab, {}, 10.0, rx);
    const double mscale = max_abs(tab.values);
    for (std::size_t i = 0; i < rx.size(); ++i)
        ASSERT_LT(std::abs(tab.values[i] - ta.values[i] - tb.values[i]), 1e-10 * mscale);

    ScalarGrid a3 = a;
    for (double& x : a3.values) x *= 3.0;
    auto f3 = forward_gravity(a3, 10.0, rx);
    for (std::size_t i = 0; i < rx.size(); ++i) ASSERT_LT(std::abs(f3.values[i] - 3 * fa.values[i]), 1e-10 * scale);
}

TEST(ForwardGravity, MirrorSymmetricBodyGivesMirrorSymmetricMap) {
    const Dims d{10, 8, 6};
    ScalarGrid g{d, std::vector<double>(static_cast<std::size_t>(d.voxels()), 0.0), {}};
    for (std::int64_t x = 0; x < d.x; ++x)
        for (std::int64_t y = 0; y < d.y; ++y)
            for (std::int64_t z = 0; z < d.z; ++z) {
                const std::int64_t xm = std::min(x, d.x - 1 - x);
                g.values[static_cast<std::size_t>((x * d.y + y) * d.z + z)] = 10.0 * xm + 3.0 * y - 7.0 * z;
            }
    auto rx = drape_receivers(CategoricalVolume(d, 2), {});
    auto m = forward_gravity(g, 10.0, rx);
    const double scale = max_abs(m.values);
    for (std::int64_t a = 0; a < 30; ++a)
        for (std::int64_t b = 0; b < 30; ++b)
            ASSERT_LT(std::abs(m.values[static_cast<std::size_t>(a * 30 + b)] -
                               m.values[static_cast<std::size_t>((29 - a) * 30 + b)]),
                      1e-9 * scale);
}

TEST(ForwardGravity, PositiveBodyPeaksAboveEpicentre) {
    const Dims d{15, 15, 10};
    ScalarGrid g{d, std::vector<double>(static_cast<std::size_t>(d.voxels()), 0.0), {}};
    for (std::int64_t x = 6; x < 9; ++x)
        for (std::int64_t y = 6; y < 9; ++y)
            for (std::int64_t z = 4; z < 7; ++z) g.values[static_cast<std::size_t>((x * d.y + y) * d.z + z)] = 500.0;
    auto rx = drape_receivers(CategoricalVolume(d, 2), {});
    auto m = forward_gravity(g, 10.0, rx);
    const auto peak = std::max_element(m.values.begin(), m.values.end()) - m.values.begin();
    EXPECT_GT(m.values[static_cast<std::size_t>(14 * 30 + 14)], 0.0);
    EXPECT_EQ(peak / 30 >= 14 && peak / 30 <= 15, true);
    EXPECT_EQ(peak % 30 >= 14 && peak % 30 <= 15, true);
}

TEST(ForwardMagnetics, FarFieldMatchesPointDipole) {
    const double s = 10.0, chi = 0.01;
    auto g = single_cell({1, 1, 1}, 0, 0, 0, chi);
    InducingField f;
    const auto t = field_direction(f);
    std::vector<Receiver> rx;
    for (double dx : {-120.0, 0.0, 90.0})
        for (double dy : {-100.0, 0.0, 130.0}) rx.push_back({5.0 + dx, 5.0 + dy, 5.0 + 110.0});
    rx.push_back({5.0, 5.0, 5.0 + 100.0});
    rx.push_back({5.0 + 150.0 * t[0], 5.0 + 150.0 * t[1], 5.0 + 150.0 * std::abs(t[2])});
    const auto n = static_cast<std::int64_t>(rx.size());
    auto m = forward_magnetics(g, f, s, rx, n, 1);
    for (std::size_t i = 0; i < rx.size(); ++i) {
        const double rxv = rx[i].easting - 5.0, ryv = rx[i].northing - 5.0, rzv = rx[i].elevation - 5.0;
        const double r = std::sqrt(rxv * rxv + ryv * ryv + rzv * rzv);
        const double cosang = (t[0] * rxv + t[1] * ryv + t[2] * rzv) / r;
        const double dipole = chi * f.amplitude_nt * s * s * s / (4 * std::numbers::pi) * (3 * cosang * cosang - 1) /
                              (r * r * r);
        if (std::abs(3 * cosang * cosang - 1) < 0.2) continue;  // near the nodal cone
        EXPECT_LT(std::abs(m.values[i] - dipole) / std::abs(dipole), 0.02) << "receiver " << i;
    }
}

TEST(ForwardFields, ReceiverInsideActiveCellIsGeometryError) {
    auto g = single_cell({3, 3, 3}, 1, 1, 1, 100.0);
    EXPECT_THROW(forward_gravity(g, 10.0, {{15, 15, 15}}, 1, 1), GeometryError);
    EXPECT_THROW(forward_gravity(g, 10.0, {{15, 15, 30}}, 1, 1), GeometryError);  // on the top face
    EXPECT_THROW(forward_magnetics(g, {}, 10.0, {{5, 5, 5}}, 1, 1), GeometryError);
    EXPECT_NO_THROW(forward_gravity(g, 10.0, {{15, 15, 30.5}}, 1, 1));
    EXPECT_THROW(forward_gravity(g, 10.0, {{15, 15, 40}, {1, 1, 40}}, 1, 1), ConfigError);
}

TEST(DrapeReceivers, LatticeSitsOneVoxelAboveSurface) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        auto v = story_volume(seed);
        auto rx = drape_receivers(v, {});
        ASSERT_EQ(rx.size(), 900u);
        auto g = map_properties(v, default_property_table());
        EXPECT_NO_THROW(forward_gravity(g.density, 10.0, rx));
        for (const auto& r : rx) {
            const auto x = static_cast<std::int64_t>(r.easting / 10.0), y = static_cast<std::int64_t>(r.northing / 10.0);
            EXPECT_GE(r.elevation, (surface_index(v, x, y) + 2) * 10.0 - 1e-9);
        }
        EXPECT_DOUBLE_EQ(rx[0].easting, 0.5 * 160.0 / 30.0);
        EXPECT_DOUBLE_EQ(rx[1].northing, 1.5 * 160.0 / 30.0);
    }
}

TEST(ForwardFields, StoryVolumeMapsAreFinite) {
    auto v = story_volume(5);
    auto g = map_properties(v, default_property_table());
    auto rx = drape_receivers(v, {});
    for (const auto& m : {forward_gravity(g.density, 10.0, rx), forward_magnetics(g.susceptibility, {}, 10.0, rx)}) {
        for (double x : m.values) ASSERT_TRUE(std::isfinite(x));
        EXPECT_GT(max_abs(m.values), 0.0);
    }
}

TEST(AddNoise, DeterministicAndScaled) {
    FieldMap m;
    m.nx = 100;
    m.ny = 100;
    m.values.assign(10000, 0.0);
    for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = std::sin(0.01 * static_cast<double>(i)) * 4.0;
    auto a = add_noise(m, 9), b = add_noise(m, 9);
    EXPECT_EQ(a, b);
    EXPECT_GE(a.noise_fraction, 0.005);
    EXPECT_LE(a.noise_fraction, 0.01);
    double ss = 0, rs = 0;
    for (std::size_t i = 0; i < m.values.size(); ++i) {
        const double e = a.values[i] - m.values[i];
        ss += e * e;
        rs += m.values[i] * m.values[i];
    }
    const double rms = std::sqrt(rs / 1e4);
    EXPECT_NEAR(a.noise_sigma, a.noise_fraction * rms, 1e-12);
    EXPECT_LT(std::abs(std::sqrt(ss / 1e4) - a.noise_sigma) / a.noise_sigma, 0.05);
}

TEST(AddNoise, ZeroMapFallsBackToUnitScale) {
    FieldMap m;
    m.nx = m.ny = 30;
    m.values.assign(900, 0.0);
    auto a = add_noise(m, 4);
    EXPECT_EQ(a.noise_sigma, a.noise_fraction);
    double ss = 0;
    for (double x : a.values) ss += x * x;
    const double sd = std::sqrt(ss / 900.0);
    EXPECT_GE(sd, 0.005 * 0.9);
    EXPECT_LE(sd, 0.01 * 1.1);
    EXPECT_LT(std::abs(sd - a.noise_sigma) / a.noise_sigma, 0.1);
}

TEST(InducingField, ValidatesAmplitudeAndAngles) {
    EXPECT_THROW(validate_inducing({0.0, -50, 10}), ConfigError);
    EXPECT_THROW(validate_inducing({50000, -95, 10}), ConfigError);
    EXPECT_NO_THROW(validate_inducing({}));
    const auto t = field_direction({});
    EXPECT_NEAR(t[0] * t[0] + t[1] * t[1] + t[2] * t[2], 1.0, 1e-15);
    EXPECT_GT(t[2], 0.0);  // negative inclination points up
}
