#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sunsense/simgen.hpp"
#include "test_helpers.hpp"

using namespace sunsense;
using namespace sunsense::simgen;

namespace {

SensorGeometry basic_geom() {
    SensorGeometry g;
    g.focal_length_mm = 5.0;
    g.pitch_mm = 0.005;
    return g;
}

} // namespace

TEST_CASE("render_spot: boresight centroid at the origin") {
    RandomStream rng(1, 0);
    MaskSpec mask;
    mask.aperture_diameter_mm = 0.04; // 8 px spot
    NoiseModel none;
    const Image img = render_spot(basic_geom(), mask, {0, 0}, none, rng);
    const auto [cx, cy] = testutil::reference_centroid(img);
    CHECK(std::abs(cx) < 1e-3);
    CHECK(std::abs(cy) < 1e-3);
}

TEST_CASE("render_spot: tan(beta)=0.1 lands at X = 100 px") {
    RandomStream rng(1, 0);
    MaskSpec mask;
    mask.aperture_diameter_mm = 0.04;
    NoiseModel none;
    RenderConfig cfg;
    cfg.image_width = 301;
    cfg.image_height = 151;
    const double beta = rad2deg(std::atan(0.1));
    const Image img = render_spot(basic_geom(), mask, {0, beta}, none, rng, cfg);
    const auto [cx, cy] = testutil::reference_centroid(img);
    CHECK(cx == doctest::Approx(100.0).epsilon(1e-5));
    CHECK(std::abs(cy) < 1e-3);
}

TEST_CASE("render_spot: sub-pixel centers track the projection to 1e-3 px") {
    RandomStream rng(1, 0);
    MaskSpec mask;
    mask.aperture_diameter_mm = 0.12; // r = 12 px: quantization bias << 1e-3
    NoiseModel none;
    const SensorGeometry g = basic_geom();
    for (double frac : {0.13, 0.377, 0.5, 0.832}) {
        const double x_px = 20.0 + frac;
        const double beta = rad2deg(std::atan(x_px * g.pitch_mm / g.focal_length_mm));
        const Image img = render_spot(g, mask, {0, beta}, none, rng);
        const auto [cx, cy] = testutil::reference_centroid(img);
        CHECK(std::abs(cx - x_px) < 1e-3);
        CHECK(std::abs(cy) < 1e-3);
    }
}

TEST_CASE("render_spot: mask thickness clips the footprint to two arcs") {
    RandomStream rng(1, 0);
    MaskSpec mask;
    mask.aperture_diameter_mm = 0.24;
    NoiseModel none;
    SensorGeometry g;
    g.focal_length_mm = 2.0;
    g.pitch_mm = 0.02;
    const SunAngles truth{0, 25};

    const Image flat = render_spot(g, mask, truth, none, rng);
    g.mask_thickness_mm = 0.15;
    const Image thick = render_spot(g, mask, truth, none, rng);

    auto lit_area_mm2 = [](const Image& img) {
        double cov = 0;
        double peak = 0;
        for (double v : img.data) peak = std::max(peak, v);
        for (double v : img.data) cov += v / peak;
        return cov * img.pitch_mm * img.pitch_mm;
    };

    // Oracle: closed-form lens area of the two shadowing discs.
    const SpotShape s = spot_shape(g, truth);
    const double r = 0.5 * mask.aperture_diameter_mm;
    const double az = s.azimuth_rad;
    const double lens = testutil::disc_intersection_area(
        s.lower_center_mm * std::cos(az), s.lower_center_mm * std::sin(az), r,
        s.upper_center_mm * std::cos(az), s.upper_center_mm * std::sin(az), r);
    const double circle = kPi * r * r;

    CHECK(lit_area_mm2(thick) == doctest::Approx(lens).epsilon(0.02));
    CHECK(lit_area_mm2(flat) == doctest::Approx(circle).epsilon(0.02));
    CHECK(lit_area_mm2(thick) < lit_area_mm2(flat));
}

TEST_CASE("spot_shape: t -> 0 collapses the arc gap proportionally") {
    SensorGeometry g = basic_geom();
    const SunAngles truth{10, 20};
    std::vector<double> ts = {0.2, 0.1, 0.05, 0.0};
    std::vector<double> gaps;
    for (double t : ts) {
        g.mask_thickness_mm = t;
        const SpotShape s = spot_shape(g, truth);
        gaps.push_back(s.upper_center_mm - s.lower_center_mm);
        CHECK(s.center_gap_mm == doctest::Approx(s.upper_center_mm - s.lower_center_mm));
    }
    CHECK(gaps[3] == doctest::Approx(0.0));
    CHECK(gaps[0] == doctest::Approx(2.0 * gaps[1]).epsilon(1e-12));
    CHECK(gaps[1] == doctest::Approx(2.0 * gaps[2]).epsilon(1e-12));
}

TEST_CASE("render_spot: off-detector angles raise OutOfFov") {
    RandomStream rng(1, 0);
    MaskSpec mask;
    NoiseModel none;
    RenderConfig cfg;
    cfg.image_width = 65;
    cfg.image_height = 65;
    CHECK_THROWS_AS(
        (void)render_spot(basic_geom(), mask, {0, 60}, none, rng, cfg), Error);
}

TEST_CASE("render_spot: total intensity non-increasing with incidence") {
    RandomStream rng(1, 0);
    MaskSpec mask;
    mask.aperture_diameter_mm = 0.12;
    NoiseModel none;
    SensorGeometry g;
    g.focal_length_mm = 2.0;
    g.pitch_mm = 0.02;
    double prev = 1e300;
    for (double beta : {0.0, 10.0, 20.0, 30.0}) {
        const Image img = render_spot(g, mask, {0, beta}, none, rng);
        double tot = 0;
        for (double v : img.data) tot += v;
        CHECK(tot <= prev * (1.0 + 1e-9));
        prev = tot;
    }
}

TEST_CASE("N-slit profile: boresight peaks at the reference centroids") {
    RandomStream rng(3, 0);
    SensorGeometry g = basic_geom();
    MaskSpec mask;
    mask.kind = MaskKind::NSlit;
    mask.slit_positions_mm = {-2.0, 0.0, 2.0};
    NoiseModel none;
    const Image prof = render_slit_profiles(g, mask, {0, 0}, none, rng);
    // Three local maxima at L_r, C_r, R_r.
    const auto pos = slit_peak_positions_mm(g, mask, {0, 0});
    CHECK(pos[0] == doctest::Approx(-2.0));
    CHECK(pos[1] == doctest::Approx(0.0));
    CHECK(pos[2] == doctest::Approx(2.0));
    int peaks = 0;
    for (int i = 1; i + 1 < prof.width; ++i)
        if (prof.at(i, 0) > prof.at(i - 1, 0) && prof.at(i, 0) >= prof.at(i + 1, 0) &&
            prof.at(i, 0) > 0.25 * prof.max_value())
            ++peaks;
    CHECK(peaks == 3);
}

TEST_CASE("N-slit: pure alpha shifts all three peaks equally") {
    SensorGeometry g = basic_geom();
    MaskSpec mask;
    mask.kind = MaskKind::NSlit;
    mask.slit_positions_mm = {-2.0, 0.0, 2.0};
    const auto ref = slit_peak_positions_mm(g, mask, {0, 0});
    const auto moved = slit_peak_positions_mm(g, mask, {7.0, 0.0});
    const double d0 = moved[0] - ref[0];
    CHECK(moved[1] - ref[1] == doctest::Approx(d0).epsilon(1e-12));
    CHECK(moved[2] - ref[2] == doctest::Approx(d0).epsilon(1e-12));
    CHECK(d0 == doctest::Approx(5.0 * std::tan(deg2rad(7.0))).epsilon(1e-12));
}

TEST_CASE("5-slit profile: five peaks with parity focal planes") {
    RandomStream rng(4, 0);
    SensorGeometry g = basic_geom();
    g.mask_thickness_mm = 0.5;
    MaskSpec mask;
    mask.kind = MaskKind::MultiSlit;
    mask.slit_positions_mm = {-4.0, -2.0, 0.0, 2.0, 4.0};
    NoiseModel none;
    const SunAngles truth{0, 15};
    const Image prof = render_slit_profiles(g, mask, truth, none, rng);
    int peaks = 0;
    for (int i = 1; i + 1 < prof.width; ++i)
        if (prof.at(i, 0) > prof.at(i - 1, 0) && prof.at(i, 0) >= prof.at(i + 1, 0) &&
            prof.at(i, 0) > 0.25 * prof.max_value())
            ++peaks;
    CHECK(peaks == 5);

    // Odd (1-based) slits project through h + t, even through h.
    const auto pos = slit_peak_positions_mm(g, mask, truth);
    const double tb = std::tan(deg2rad(15.0));
    CHECK(pos[0] - mask.slit_positions_mm[0] == doctest::Approx(5.5 * tb));
    CHECK(pos[1] - mask.slit_positions_mm[1] == doctest::Approx(5.0 * tb));
    CHECK(pos[2] - mask.slit_positions_mm[2] == doctest::Approx(5.5 * tb));
}

TEST_CASE("periodic rows obey the F1+F3 = F2+F4 = a0 identity") {
    const std::vector<double> an = {40.0, 11.0, 3.5};
    for (double alpha : {-3.7, 0.0, 1.3, 5.9}) {
        const auto f = periodic_row_outputs(alpha, 100.0, an, 8.0);
        CHECK(f[0] + f[2] == doctest::Approx(100.0).epsilon(1e-12));
        CHECK(f[1] + f[3] == doctest::Approx(100.0).epsilon(1e-12));
    }
}

TEST_CASE("periodic mask renders the four fine-code rows") {
    RandomStream rng(12, 0);
    SensorGeometry g = basic_geom();
    MaskSpec mask;
    mask.kind = MaskKind::Periodic;
    mask.period_theta0_deg = 8.0;
    mask.fourier_a0 = 100.0;
    mask.fourier_an = {30.0};
    NoiseModel none;
    const Image rows = render_slit_profiles(g, mask, {2.3, 0.0}, none, rng);
    REQUIRE(rows.width == 1);
    REQUIRE(rows.height == 4);
    const auto f = periodic_row_outputs(2.3, 100.0, mask.fourier_an, 8.0);
    for (int k = 0; k < 4; ++k) CHECK(rows.at(0, k) == doctest::Approx(f[k]));
}

TEST_CASE("render_black_sun: dark core centered on the truth projection") {
    RandomStream rng(5, 0);
    SensorGeometry g = basic_geom();
    MaskSpec mask;
    mask.aperture_diameter_mm = 0.12;
    BloomParams bloom;
    const SunAngles truth{rad2deg(std::atan(60 * 0.005 / 5.0)),
                          rad2deg(std::atan(50 * 0.005 / 5.0))};
    const Image img = render_black_sun(g, mask, truth, bloom, rng);
    // Centroid of the dark pixels inside the saturated blob's bbox.
    int i0 = img.width, i1 = -1, j0 = img.height, j1 = -1;
    for (int j = 0; j < img.height; ++j)
        for (int i = 0; i < img.width; ++i)
            if (img.at(i, j) >= 0.98 * img.max_value()) {
                i0 = std::min(i0, i); i1 = std::max(i1, i);
                j0 = std::min(j0, j); j1 = std::max(j1, j);
            }
    REQUIRE(i1 >= i0);
    double sx = 0, sy = 0, n = 0;
    for (int j = j0; j <= j1; ++j)
        for (int i = i0; i <= i1; ++i)
            if (img.at(i, j) <= bloom.core_level_frac * img.max_value() + 1) {
                sx += img.coord_x(i);
                sy += img.coord_y(j);
                n += 1;
            }
    REQUIRE(n > 0);
    CHECK(sx / n == doctest::Approx(50.0).epsilon(0.02));
    CHECK(sy / n == doctest::Approx(60.0).epsilon(0.02));
}

TEST_CASE("render_black_sun: saturation off reduces to render_spot") {
    RandomStream rng1(6, 0), rng2(6, 0);
    SensorGeometry g = basic_geom();
    MaskSpec mask;
    NoiseModel none;
    BloomParams bloom;
    bloom.saturation = false;
    const Image a = render_black_sun(g, mask, {3, -4}, bloom, rng1);
    const Image b = render_spot(g, mask, {3, -4}, none, rng2);
    REQUIRE(a.data.size() == b.data.size());
    for (size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == b.data[i]);
}

TEST_CASE("synth_events: single lit pixel yields a single event") {
    RandomStream rng(7, 0);
    Image prof(16, 1);
    prof.at(5, 0) = 100;
    TfsParams tfs;
    const EventStream ev = synth_events(prof, tfs, rng);
    REQUIRE(ev.events.size() == 1);
    CHECK(ev.events[0].pixel == 5);
}

TEST_CASE("synth_events: 2:1 intensity ratio gives 1:2 latency ratio") {
    RandomStream rng(7, 0);
    Image prof(16, 1);
    prof.at(3, 0) = 200;
    prof.at(9, 0) = 100;
    TfsParams tfs;
    tfs.reset_time_us = 10.0;
    const EventStream ev = synth_events(prof, tfs, rng);
    REQUIRE(ev.events.size() == 2);
    const double lat3 = ev.events[0].t_us - 10.0;
    const double lat9 = ev.events[1].t_us - 10.0;
    CHECK(lat9 == doctest::Approx(2.0 * lat3).epsilon(1e-12));
}

TEST_CASE("synth_events: all-dark profile raises EmptyStream") {
    RandomStream rng(7, 0);
    Image prof(8, 1);
    TfsParams tfs;
    try {
        (void)synth_events(prof, tfs, rng);
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyStream);
    }
}

TEST_CASE("add_noise: identity when all knobs are off") {
    RandomStream rng(8, 0);
    Image img(16, 16);
    img.at(4, 4) = 77;
    NoiseModel none;
    const Image out = add_noise(img, none, rng);
    CHECK(out.data == img.data);
}

TEST_CASE("add_noise: dark offset on a zero image is constant") {
    RandomStream rng(8, 0);
    Image img(8, 8);
    NoiseModel nm;
    nm.dark_offset = 10.0;
    const Image out = add_noise(img, nm, rng);
    for (double v : out.data) CHECK(v == doctest::Approx(10.0));
}

TEST_CASE("add_noise: sample sigma matches the model within 2%") {
    RandomStream rng(8, 1);
    Image img(1000, 1000, 1.0, 16);
    for (double& v : img.data) v = 1000.0;
    NoiseModel nm;
    nm.gaussian_sigma = 5.0;
    const Image out = add_noise(img, nm, rng);
    std::vector<double> dev(out.data.size());
    for (size_t i = 0; i < dev.size(); ++i) dev[i] = out.data[i] - 1000.0;
    CHECK(testutil::stdev(dev) == doctest::Approx(5.0).epsilon(0.02));
}
