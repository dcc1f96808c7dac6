#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sunsense/calib.hpp"
#include "sunsense/random.hpp"
#include "sunsense/simgen.hpp"
#include "test_helpers.hpp"

using namespace sunsense;
using namespace sunsense::calib;

TEST_CASE("spm_invert: origin, 100 px example, round trip with the renderer") {
    SensorGeometry g;
    g.focal_length_mm = 5.0;
    g.pitch_mm = 0.005;
    CHECK(spm_invert({0, 0}, g).alpha_deg == doctest::Approx(0.0));
    CHECK(spm_invert({0, 0}, g).beta_deg == doctest::Approx(0.0));

    const SunAngles a = spm_invert({100, 0}, g);
    CHECK(a.beta_deg == doctest::Approx(5.7105931375).epsilon(1e-9));

    // End-to-end against the forward renderer.
    simgen::MaskSpec mask;
    mask.aperture_diameter_mm = 0.12;
    simgen::NoiseModel none;
    RandomStream rng(2, 0);
    const SunAngles truth{3.1, -2.2};
    const Image img = simgen::render_spot(g, mask, truth, none, rng);
    const auto c = features::moment_centroid(img);
    const SunAngles est = spm_invert(c, g);
    CHECK(std::abs(est.alpha_deg - truth.alpha_deg) < 0.02);
    CHECK(std::abs(est.beta_deg - truth.beta_deg) < 0.02);
}

TEST_CASE("lsq_geom: zero parameters reproduce spm_invert bit-for-bit") {
    SensorGeometry g;
    g.focal_length_mm = 5.0;
    g.pitch_mm = 0.005;
    const LsqGeomParams zero;
    RandomStream rng(7, 1);
    for (int k = 0; k < 200; ++k) {
        const features::Centroid c{rng.uniform(-400, 400), rng.uniform(-400, 400),
                                   1.0, 1, false};
        const SunAngles spm = spm_invert(c, g);
        const SunAngles lsq = lsq_geom_apply(zero, g.focal_length_mm,
                                             c.x * g.pitch_mm, c.y * g.pitch_mm);
        CHECK(spm.alpha_deg == lsq.alpha_deg);
        CHECK(spm.beta_deg == lsq.beta_deg);
    }
}

TEST_CASE("lsq_geom: inverse-crime fit recovers the injected parameters") {
    const double F = 5.0;
    LsqGeomParams truth;
    truth.dF_mm = 0.1;
    truth.alpha0_deg = 0.2;
    truth.beta0_deg = -0.1;

    std::vector<LsqGeomSample> samples;
    for (double a = -20; a <= 20; a += 5)
        for (double b = -20; b <= 20; b += 5) {
            // Forward model: spot position that the perturbed sensor produces
            // when the calibrated inverse must report (a, b).
            const double Feff = F + truth.dF_mm;
            const double x = Feff * std::tan(deg2rad(b + truth.beta0_deg));
            const double y = Feff * std::tan(deg2rad(a + truth.alpha0_deg));
            samples.push_back({x, y, SunAngles{a, b}});
        }
    const LsqGeomParams fit = lsq_geom_calibrate(samples, F);
    CHECK(fit.dF_mm == doctest::Approx(truth.dF_mm).epsilon(1e-4));
    CHECK(fit.alpha0_deg == doctest::Approx(truth.alpha0_deg).epsilon(1e-4));
    CHECK(fit.beta0_deg == doctest::Approx(truth.beta0_deg).epsilon(1e-4));
    CHECK(std::abs(fit.dF_mm - truth.dF_mm) < 1e-4);

    // The refined inverse beats the plain projection on the same data.
    SensorGeometry g;
    g.focal_length_mm = F;
    g.pitch_mm = 1.0;
    double rms_fit = 0.0, rms_spm = 0.0;
    for (const auto& s : samples) {
        const SunAngles est = lsq_geom_apply(fit, F, s.x_mm, s.y_mm);
        const SunAngles raw = spm_invert({s.x_mm, s.y_mm}, g);
        rms_fit += std::pow(est.alpha_deg - s.truth.alpha_deg, 2) +
                   std::pow(est.beta_deg - s.truth.beta_deg, 2);
        rms_spm += std::pow(raw.alpha_deg - s.truth.alpha_deg, 2) +
                   std::pow(raw.beta_deg - s.truth.beta_deg, 2);
    }
    CHECK(rms_fit < rms_spm * 0.01);
}

TEST_CASE("lsq_geom: rank-deficient samples raise") {
    std::vector<LsqGeomSample> two = {{0.0, 0.0, {0, 0}}, {0.1, 0.1, {1, 1}}};
    CHECK_THROWS_AS((void)lsq_geom_calibrate(two, 5.0), Error);
}

TEST_CASE("qpd_gap_balance: zero gap reduces to the plain balance") {
    const auto plain = features::voltage_balance(0.2, 0.4, 0.3, 0.1);
    const auto corr =
        qpd_gap_balance(0.2, 0.4, 0.3, 0.1, {1, 1, 1, 1}, 0.0, 0.0, 1.0);
    CHECK(corr.s_a == doctest::Approx(plain.s_a));
    CHECK(corr.s_b == doctest::Approx(plain.s_b));
}

TEST_CASE("qpd_gap_balance: symmetric spot stays symmetric") {
    const auto corr = qpd_gap_balance(0.25, 0.25, 0.25, 0.25,
                                      {0.2, 0.2, 0.2, 0.2}, 0.0, 0.0, 1.0);
    CHECK(corr.s_a == doctest::Approx(0.0));
    CHECK(corr.s_b == doctest::Approx(0.0));
}

TEST_CASE("qpd_gap_balance: corrected error beats uncorrected across incidence") {
    // Uniform square spot of half-side r over a vertical gap band of
    // half-width g: measured quadrants exclude the band, so the plain
    // balance reads cx / (r - g) instead of cx / r. The signed gap term
    // with k_G = 2 r (r - g) undoes the bias exactly.
    const double r = 0.8, g = 0.05;
    double err_plain = 0.0, err_corr = 0.0;
    for (double cx : {-0.3, -0.2, -0.1, 0.0, 0.1, 0.2, 0.3}) {
        const double right = cx + r - g;
        const double left = r - cx - g;
        const double top = r, bottom = r; // y-axis unaffected
        // Quadrant signals: Q2, Q3 on +x; Q1, Q4 on -x (uniform irradiance).
        const double q2 = right * top, q3 = right * bottom;
        const double q1 = left * top, q4 = left * bottom;
        const std::array<double, 4> areas = {q1, q2, q3, q4};
        const auto plain = features::voltage_balance(q1, q2, q3, q4);
        const double truth_balance = cx / r;

        const double gap_x = -2.0 * g * (r - g) * plain.s_a;
        const double k_g = 2.0 * r * (r - g);
        const auto corr =
            qpd_gap_balance(q1, q2, q3, q4, areas, gap_x, 0.0, k_g);
        err_plain += std::abs(plain.s_a - truth_balance);
        err_corr += std::abs(corr.s_a - truth_balance);
        CHECK(std::abs(corr.s_a - truth_balance) < 1e-9);
    }
    CHECK(err_corr < err_plain);
}

TEST_CASE("slit_correct: identity and doubled focal length") {
    SlitParams ident;
    CHECK(slit_correct(ident, {12.0, 7.0}) == doctest::Approx(12.0).epsilon(1e-12));

    SlitParams doubled;
    doubled.f_prime = 10.0;
    doubled.f = 5.0;
    const double corr = slit_correct(doubled, {20.0, 0.0});
    CHECK(std::tan(deg2rad(corr)) ==
          doctest::Approx(2.0 * std::tan(deg2rad(20.0))).epsilon(1e-12));
}

TEST_CASE("slit_correct: injected deflection reduces RMS at least 5x") {
    SlitParams inj;
    inj.theta_deg = 0.5;
    inj.delta_deg = 0.3;
    double rms_raw = 0.0, rms_corr = 0.0;
    int count = 0;
    for (double a = -25; a <= 25; a += 5)
        for (double b = -15; b <= 15; b += 5) {
            // Measured alpha inverts the correction for the injected
            // installation errors: find am with corrected(am) = a by bisection.
            double lo = a - 5, hi = a + 5;
            for (int it = 0; it < 80; ++it) {
                const double mid = 0.5 * (lo + hi);
                (slit_correct(inj, {mid, b}) < a ? lo : hi) = mid;
            }
            const double measured = 0.5 * (lo + hi);
            rms_raw += std::pow(measured - a, 2);
            rms_corr += std::pow(slit_correct(inj, {measured, b}) - a, 2);
            ++count;
        }
    rms_raw = std::sqrt(rms_raw / count);
    rms_corr = std::sqrt(rms_corr / count);
    CHECK(rms_corr * 5.0 <= rms_raw);
}

TEST_CASE("multi_slit_angles: zero thickness aligns all parities") {
    MultiSlitParams p;
    p.h_mm = 5.0;
    p.t_mm = 0.0;
    p.d_mm = {-4, -2, 0, 2, 4};
    const double tb = std::tan(deg2rad(9.0));
    std::vector<double> xs;
    for (double d : p.d_mm) xs.push_back(d + 5.0 * tb);
    const auto res = multi_slit_angles(p, xs);
    for (double th : res.per_slit_deg) CHECK(th == doctest::Approx(9.0).epsilon(1e-12));
}

TEST_CASE("multi_slit_angles: consistent forward input has ~zero spread") {
    MultiSlitParams p;
    p.h_mm = 5.0;
    p.t_mm = 0.4;
    p.d_mm = {-4, -2, 0, 2, 4};
    const double tb = std::tan(deg2rad(-7.0));
    std::vector<double> xs;
    for (size_t i = 0; i < p.d_mm.size(); ++i) {
        const double plane = (i % 2 == 0) ? p.h_mm + p.t_mm : p.h_mm;
        xs.push_back(p.d_mm[i] + plane * tb);
    }
    const auto res = multi_slit_angles(p, xs);
    for (double th : res.per_slit_deg)
        CHECK(th == doctest::Approx(-7.0).epsilon(1e-9));
    CHECK(res.fused_deg == doctest::Approx(-7.0).epsilon(1e-9));
}

TEST_CASE("multi_slit_angles: fused std shrinks like 1/sqrt(5)") {
    MultiSlitParams p;
    p.h_mm = 5.0;
    p.t_mm = 0.0;
    p.d_mm = {-4, -2, 0, 2, 4};
    RandomStream rng(55, 2);
    std::vector<double> single_err, fused_err;
    for (int k = 0; k < 4000; ++k) {
        const double tb = std::tan(deg2rad(3.0));
        std::vector<double> xs;
        for (double d : p.d_mm) xs.push_back(d + 5.0 * tb + rng.normal(0.0, 0.002));
        const auto res = multi_slit_angles(p, xs);
        single_err.push_back(res.per_slit_deg[0] - 3.0);
        fused_err.push_back(res.fused_deg - 3.0);
    }
    const double ratio = testutil::stdev(fused_err) / testutil::stdev(single_err);
    CHECK(ratio == doctest::Approx(1.0 / std::sqrt(5.0)).epsilon(0.2));
}

TEST_CASE("vslit: ideal geometry at boresight and round trip") {
    VSlitParams p;
    p.slit_length_y_mm = 8.0;
    p.focal_h_mm = 5.0;
    const auto [x1, x2] = vslit_forward(p, {0, 0});
    const SunAngles bore = vslit_angles(p, x1, x2);
    CHECK(bore.alpha_deg == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(bore.beta_deg == doctest::Approx(0.0).epsilon(1e-12));

    const SunAngles truth{3.0, -2.0};
    const auto [m1, m2] = vslit_forward(p, truth);
    const SunAngles est = vslit_angles(p, m1, m2);
    CHECK(est.alpha_deg == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(est.beta_deg == doctest::Approx(-2.0).epsilon(1e-9));
}

TEST_CASE("vslit: perturbed intrinsics still round trip") {
    VSlitParams p;
    p.slit_length_y_mm = 8.0;
    p.focal_h_mm = 5.0;
    // Small rotation about z by 0.2 degrees plus offsets.
    const double c = std::cos(deg2rad(0.2)), s = std::sin(deg2rad(0.2));
    p.rotation = {c, -s, 0, s, c, 0, 0, 0, 1};
    p.displacement = {0.02, -0.01, 0.03};
    const SunAngles truth{-4.0, 5.5};
    const auto [m1, m2] = vslit_forward(p, truth);
    const SunAngles est = vslit_angles(p, m1, m2);
    CHECK(est.alpha_deg == doctest::Approx(truth.alpha_deg).epsilon(1e-9));
    CHECK(est.beta_deg == doctest::Approx(truth.beta_deg).epsilon(1e-9));
}

TEST_CASE("vslit: displacement sensitivity matches finite differences") {
    VSlitParams p;
    p.slit_length_y_mm = 8.0;
    p.focal_h_mm = 5.0;
    const SunAngles truth{2.0, 1.0};
    const auto [x1, x2] = vslit_forward(p, truth);

    const double h = 0.01; // 10 um
    VSlitParams plus = p;
    plus.displacement[0] += h;
    VSlitParams minus = p;
    minus.displacement[0] -= h;
    const double da_fd = (vslit_angles(plus, x1, x2).alpha_deg -
                          vslit_angles(minus, x1, x2).alpha_deg) /
                         (2.0 * h);
    // Direction consistency with a half-step numeric Jacobian.
    VSlitParams half = p;
    half.displacement[0] += 0.5 * h;
    const double da_half = (vslit_angles(half, x1, x2).alpha_deg -
                            vslit_angles(p, x1, x2).alpha_deg) /
                           (0.5 * h);
    CHECK(da_fd == doctest::Approx(da_half).epsilon(1e-3));
    CHECK(std::abs(da_fd) > 0.0);
}

TEST_CASE("vslit: non-orthonormal rotation is rejected") {
    VSlitParams p;
    p.rotation = {1, 0, 0, 0, 2, 0, 0, 0, 1};
    CHECK_THROWS_AS((void)vslit_angles(p, 0.0, 0.0), Error);
}

TEST_CASE("nslit_angles: reference positions give the boresight") {
    NSlitParams p;
    const SunAngles bore = nslit_angles(p, p.l_ref_mm, p.c_ref_mm, p.r_ref_mm);
    CHECK(bore.alpha_deg == doctest::Approx(0.0));
    CHECK(bore.beta_deg == doctest::Approx(0.0));
}

TEST_CASE("nslit_angles: equal shifts cancel in the beta relation") {
    NSlitParams p;
    const double shift = 0.37;
    const SunAngles est = nslit_angles(p, p.l_ref_mm + shift, p.c_ref_mm + shift,
                                       p.r_ref_mm + shift);
    CHECK(est.beta_deg == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(est.alpha_deg > 0.0);
}

TEST_CASE("nslit_angles: renderer round trip within 0.02 degrees") {
    SensorGeometry g;
    g.focal_length_mm = 5.0;
    g.pitch_mm = 0.005;
    simgen::MaskSpec mask;
    mask.kind = simgen::MaskKind::NSlit;
    mask.slit_positions_mm = {-2.0, 0.0, 2.0};
    simgen::NoiseModel none;
    NSlitParams p;
    p.l_ref_mm = -2.0;
    p.c_ref_mm = 0.0;
    p.r_ref_mm = 2.0;
    p.h_mm = 5.0;
    p.delta_deg = 45.0;

    RandomStream rng(4, 4);
    const SunAngles truth{6.0, -4.0};
    const Image prof =
        simgen::render_slit_profiles(g, mask, truth, none, rng);
    // Peak positions via per-blob moments on the 1-D profile.
    auto spots = features::detect_spots(prof, 0.2, 2, 3);
    REQUIRE(spots.size() == 3);
    std::sort(spots.begin(), spots.end(),
              [](const auto& a, const auto& b) { return a.x < b.x; });
    const SunAngles est =
        nslit_angles(p, spots[0].x * g.pitch_mm, spots[1].x * g.pitch_mm,
                     spots[2].x * g.pitch_mm);
    CHECK(std::abs(est.alpha_deg - truth.alpha_deg) < 0.02);
    CHECK(std::abs(est.beta_deg - truth.beta_deg) < 0.02);
}

TEST_CASE("nslit_angles: missing centroid raises") {
    NSlitParams p;
    CHECK_THROWS_AS(
        (void)nslit_angles(p, std::nan(""), 0.0, 2.0), Error);
}

TEST_CASE("camera_angles: principal point, 45 degrees, SPM consistency") {
    const SunAngles center = camera_angles(1000, 320, 240, 320, 240);
    CHECK(center.alpha_deg == doctest::Approx(0.0));
    CHECK(center.beta_deg == doctest::Approx(0.0));

    const SunAngles a45 = camera_angles(1000, 320, 240, 1320, 240);
    CHECK(a45.beta_deg == doctest::Approx(45.0));

    // Pitch-normalized consistency with the projection model.
    SensorGeometry g;
    g.focal_length_mm = 5.0;
    g.pitch_mm = 0.005;
    const double f_px = g.focal_length_mm / g.pitch_mm;
    const features::Centroid c{120.0, -80.0, 1.0, 1, false};
    const SunAngles spm = spm_invert(c, g);
    // v runs down in camera coordinates; y runs up in detector coordinates.
    const SunAngles cam = camera_angles(f_px, 0.0, 0.0, c.x, -c.y);
    CHECK(cam.alpha_deg == doctest::Approx(spm.alpha_deg).epsilon(1e-12));
    CHECK(cam.beta_deg == doctest::Approx(spm.beta_deg).epsilon(1e-12));
}

TEST_CASE("fit_nonphysical: exact cubic recovery") {
    std::vector<FitSample> data;
    for (double f = -3.0; f <= 3.0; f += 0.25)
        data.push_back({f, 0.5 - 1.25 * f + 0.75 * f * f - 0.2 * f * f * f});
    const auto m = fit_nonphysical(data, FitKind::Polynomial, 3, -60, 60);
    CHECK(m.coeffs[0] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(m.coeffs[1] == doctest::Approx(-1.25).epsilon(1e-9));
    CHECK(m.coeffs[2] == doctest::Approx(0.75).epsilon(1e-9));
    CHECK(m.coeffs[3] == doctest::Approx(-0.2).epsilon(1e-9));
}

TEST_CASE("fit_nonphysical: sixth degree fits SPM pipeline data to < 0.05 deg") {
    // Feature: the angle an SPM inverse reports from a miscalibrated focal
    // length; target: the turntable truth.
    const double h_true = 5.0, h_assumed = 5.1;
    std::vector<FitSample> data;
    for (double a = -60; a <= 60; a += 1.0) {
        const double spot = h_true * std::tan(deg2rad(a));
        data.push_back({rad2deg(std::atan(spot / h_assumed)), a});
    }
    const auto m = fit_nonphysical(data, FitKind::Polynomial, 6, -60, 60);
    double worst = 0.0;
    for (const auto& s : data)
        worst = std::max(worst,
                         std::abs(eval_nonphysical(m, s.feature) - s.angle_deg));
    CHECK(worst < 0.05);
}

TEST_CASE("fit_nonphysical: residuals non-increasing in degree up to 11") {
    SensorGeometry g;
    g.focal_length_mm = 5.0;
    g.pitch_mm = 0.02;
    std::vector<FitSample> data;
    for (double a = -60; a <= 60; a += 2.0)
        data.push_back({std::tan(deg2rad(a)), a});
    double prev = 1e300;
    for (int deg = 1; deg <= 11; ++deg) {
        const auto m = fit_nonphysical(data, FitKind::Polynomial, deg, -60, 60);
        double ss = 0.0;
        for (const auto& s : data)
            ss += std::pow(eval_nonphysical(m, s.feature) - s.angle_deg, 2);
        CHECK(ss <= prev * (1.0 + 1e-9));
        prev = ss;
    }
}

TEST_CASE("fit_nonphysical: linear fit improves on nested small FOVs") {
    // QPD-like response: balance = tan(a)/tan(a_max), non-linear in angle
    // at the FOV edges.
    auto balance = [](double a_deg) {
        return std::tan(deg2rad(a_deg)) / std::tan(deg2rad(60.0));
    };
    double prev_err = -1.0;
    for (double fov : {60.0, 40.0, 20.0}) {
        std::vector<FitSample> data;
        for (double a = -fov; a <= fov; a += fov / 12.0)
            data.push_back({balance(a), a});
        const auto m = fit_nonphysical(data, FitKind::Linear, 1, -fov, fov);
        double err = 0.0;
        for (const auto& s : data)
            err = std::max(err,
                           std::abs(eval_nonphysical(m, s.feature) - s.angle_deg));
        if (prev_err >= 0.0) CHECK(err < prev_err);
        prev_err = err;
    }
}

TEST_CASE("fit_nonphysical: trig kind resolves the quadrant by sign") {
    std::vector<FitSample> data;
    for (double a = 0; a <= 45; a += 2.5)
        data.push_back({std::sin(deg2rad(a)), a});
    const auto m = fit_nonphysical(data, FitKind::Trigonometric, 1, -45, 45);
    const double f = std::sin(deg2rad(20.0));
    CHECK(eval_nonphysical(m, f, +1) == doctest::Approx(20.0).epsilon(1e-6));
    CHECK(eval_nonphysical(m, f, -1) == doctest::Approx(-20.0).epsilon(1e-6));
}

TEST_CASE("fit_nonphysical: Fourier kind fits a periodic error curve") {
    std::vector<FitSample> data;
    for (double f = 0; f <= 8.0; f += 0.1)
        data.push_back({f, 1.0 + 0.5 * std::cos(2.0 * kPi * f / 8.0) -
                               0.2 * std::sin(4.0 * kPi * f / 8.0)});
    const auto m = fit_nonphysical(data, FitKind::Fourier, 2, -8, 8);
    double worst = 0.0;
    for (const auto& s : data)
        worst = std::max(worst,
                         std::abs(eval_nonphysical(m, s.feature) - s.angle_deg));
    CHECK(worst < 1e-6);
}

TEST_CASE("fit_nonphysical: sigmoid composite fits its own model class") {
    std::vector<FitSample> data;
    for (double f = -1.0; f <= 1.0; f += 0.05) {
        const double y = 10.0 / (1.0 + std::exp(-3.0 * (f - 0.1))) +
                         0.6 * std::sin(kPi * f) + 0.3 * std::cos(kPi * f) - 5.0;
        data.push_back({f, y});
    }
    const auto m =
        fit_nonphysical(data, FitKind::SigmoidComposite, 1, -60, 60);
    double worst = 0.0;
    for (const auto& s : data)
        worst = std::max(worst,
                         std::abs(eval_nonphysical(m, s.feature) - s.angle_deg));
    CHECK(worst < 0.05);
}

TEST_CASE("lut: node value, midpoint blend, reference configuration") {
    // Smooth synthetic compensation curve sampled at 0.25-degree spacing.
    auto truth = [](double a) { return 0.02 * a + 0.5 * std::sin(a / 10.0); };
    std::vector<FitSample> data;
    for (double a = -64; a <= 64; a += 0.25) data.push_back({a, truth(a)});
    const LutModel m = lut_build(data, 1.0, 8, -64.0, 64.0);
    CHECK((int)m.node_polys.size() == 129);

    // Node query returns that node's polynomial value.
    CHECK(lut_eval(m, -64.0) == doctest::Approx(truth(-64.0)).epsilon(1e-6));
    CHECK(lut_eval(m, 10.0) == doctest::Approx(truth(10.0)).epsilon(1e-8));

    // Midpoint blends the neighbors half and half.
    const double q = 10.5;
    const double left = [&] {
        const double u = q - 10.0;
        double acc = 0.0;
        for (size_t i = m.node_polys[74].size(); i-- > 0;)
            acc = acc * u + m.node_polys[74][i];
        return acc;
    }();
    const double right = [&] {
        const double u = q - 11.0;
        double acc = 0.0;
        for (size_t i = m.node_polys[75].size(); i-- > 0;)
            acc = acc * u + m.node_polys[75][i];
        return acc;
    }();
    CHECK(lut_eval(m, q) == doctest::Approx(0.5 * (left + right)).epsilon(1e-12));
}

TEST_CASE("lut: continuity across node boundaries") {
    auto truth = [](double a) { return std::sin(a / 7.0) - 0.01 * a * a / 10.0; };
    std::vector<FitSample> data;
    for (double a = -64; a <= 64; a += 0.2) data.push_back({a, truth(a)});
    const LutModel m = lut_build(data, 1.0, 8, -64.0, 64.0);
    for (double node : {-30.0, -1.0, 0.0, 17.0, 55.0}) {
        const double below = lut_eval(m, node - 1e-9);
        const double above = lut_eval(m, node + 1e-9);
        CHECK(std::abs(below - above) < 1e-7);
    }
}

TEST_CASE("lut: out-of-grid query raises an extrapolation error") {
    std::vector<FitSample> data;
    for (double a = -10; a <= 10; a += 0.2) data.push_back({a, a});
    const LutModel m = lut_build(data, 1.0, 3, -10.0, 10.0);
    try {
        (void)lut_eval(m, 12.0);
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ExtrapolationError);
    }
}

TEST_CASE("refraction: unity indices leave the correction at identity") {
    RefractionStack s;
    s.n2 = 1.0;
    s.n3 = 1.0;
    const double theta = refraction_solve_incidence(s, s.height_mm() * std::tan(deg2rad(25)));
    CHECK(theta == doctest::Approx(25.0).epsilon(1e-9));
    CHECK(refraction_k(s, theta) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("refraction: residual at the solved root is below 1e-10") {
    RefractionStack s;
    s.h2_mm = 1.0;
    s.h3_mm = 1.0;
    s.h4_mm = 3.0;
    s.n2 = 1.5;
    const double theta_true = 30.0;
    const double l = (s.h2_mm + s.h4_mm) * std::tan(deg2rad(theta_true)) +
                     s.h3_mm * std::tan(std::asin(std::sin(deg2rad(theta_true)) / s.n2));
    const double root = refraction_solve_incidence(s, l);
    CHECK(std::abs(refraction_residual(s, root, l)) < 1e-10);
    CHECK(root == doctest::Approx(theta_true).epsilon(1e-9));
}

TEST_CASE("refraction: correction grows with incidence for n2 > 1") {
    RefractionStack s;
    s.n2 = 1.6;
    double prev = 0.0;
    for (double th = 5; th <= 60; th += 5) {
        const double k = refraction_k(s, th);
        CHECK(k >= prev);
        CHECK(k > 1.0);
        prev = k;
    }
}

TEST_CASE("refraction_correct: glass-displaced spots recover the truth") {
    RefractionStack s;
    s.h2_mm = 1.0;
    s.h3_mm = 1.0;
    s.h4_mm = 3.0;
    s.n2 = 1.5;
    const double h = s.height_mm();
    const double theta = 22.0;
    // Forward: both spots displaced by the refracted landing offset.
    const double l1 = refraction_residual(s, theta, 0.0);
    const double mu = refraction_correct(s, l1, 2.0 * l1, 0.0, l1, h).mu_deg;
    CHECK(mu == doctest::Approx(theta).epsilon(1e-6));
}

TEST_CASE("periodic_phase_compensate: zero amplitude keeps the fine code") {
    const std::array<double, 4> abcd = {0.0, 1.0, -1.0, 0.0}; // atan(1/tan) family
    // With k = 0 the compensated output is continuous in the sum angle.
    double prev = periodic_phase_compensate(10.0, 0.5, 0.0, 0.0, abcd, 10.5);
    for (double a2 = 0.6; a2 < 2.0; a2 += 0.1) {
        const double out = periodic_phase_compensate(10.0, a2, 0.0, 0.0, abcd,
                                                     10.0 + a2);
        CHECK(std::abs(out - prev) < 1.0);
        prev = out;
    }
}

TEST_CASE("periodic_phase_compensate: sinusoidal error removed by compensation") {
    const std::array<double, 4> abcd = {0.0, 1.0, -1.0, 0.0};
    const double k = 0.01, t = 0.3;
    double before = 0.0, after = 0.0;
    for (double alpha = 1.0; alpha <= 8.0; alpha += 0.25) {
        // Measured fine code carries the injected sinusoidal error.
        const double fine_true = 0.4 * alpha;
        const double fine_meas =
            fine_true - k * std::sin(4.0 * kPi * deg2rad(alpha) + t);
        const double coarse = 0.6 * alpha;
        const double comp_meas =
            periodic_phase_compensate(coarse, fine_meas, k, t, abcd, alpha);
        const double comp_true =
            periodic_phase_compensate(coarse, fine_true, 0.0, t, abcd, alpha);
        const double raw = periodic_phase_compensate(coarse, fine_meas, 0.0, t,
                                                     abcd, alpha);
        before += std::abs(raw - comp_true);
        after += std::abs(comp_meas - comp_true);
    }
    CHECK(after < 0.05 * before);
}

TEST_CASE("periodic_phase_compensate: singular configuration raises") {
    const std::array<double, 4> abcd = {std::tan(deg2rad(30.0)), 1.0, 1.0, 0.0};
    CHECK_THROWS_AS(
        (void)periodic_phase_compensate(15.0, 15.0, 0.0, 0.0, abcd, 30.0), Error);
}

TEST_CASE("shadow_center_correct: zero thickness is the identity") {
    SensorGeometry g;
    g.focal_length_mm = 5.0;
    g.pitch_mm = 0.005;
    const features::Centroid raw{12.3, -4.5, 1.0, 1, false};
    const auto out = shadow_center_correct(g, raw);
    CHECK(out.x == raw.x);
    CHECK(out.y == raw.y);
}

TEST_CASE("shadow_center_correct: renderer sweep improves at least 3x") {
    SensorGeometry g;
    g.focal_length_mm = 2.0;
    g.pitch_mm = 0.02;
    g.mask_thickness_mm = 0.2;
    simgen::MaskSpec mask;
    mask.aperture_diameter_mm = 0.24;
    simgen::NoiseModel none;
    double err_raw = 0.0, err_corr = 0.0;
    for (double b : {35.0, 40.0, 45.0, 50.0}) {
        RandomStream rng(6, 6);
        const SunAngles truth{0.0, b};
        const Image img = simgen::render_spot(g, mask, truth, none, rng);
        const auto c = features::moment_centroid(img);
        const SunAngles raw = spm_invert(c, g);
        const auto corrected = shadow_center_correct(g, c);
        const SunAngles fixed = spm_invert(corrected, g);
        err_raw += std::abs(raw.beta_deg - b);
        err_corr += std::abs(fixed.beta_deg - b);
    }
    CHECK(err_corr * 3.0 <= err_raw);
}

TEST_CASE("shadow_center_correct: correction opposes the azimuth in 8 directions") {
    SensorGeometry g;
    g.focal_length_mm = 5.0;
    g.pitch_mm = 0.005;
    g.mask_thickness_mm = 0.3;
    for (int k = 0; k < 8; ++k) {
        const double az = 2.0 * kPi * k / 8.0;
        const features::Centroid raw{200.0 * std::cos(az), 200.0 * std::sin(az),
                                     1.0, 1, false};
        const auto out = shadow_center_correct(g, raw);
        const double r_raw = std::hypot(raw.x, raw.y);
        const double r_out = std::hypot(out.x, out.y);
        CHECK(r_out < r_raw);
        // Direction preserved: the correction is purely radial.
        CHECK(out.x * raw.y - out.y * raw.x == doctest::Approx(0.0).epsilon(1e-9));
    }
}

TEST_CASE("non-physical model JSON round trip") {
    std::vector<FitSample> data;
    for (double f = -3.0; f <= 3.0; f += 0.25)
        data.push_back({f, 1.0 + 0.5 * f - 0.25 * f * f});
    const auto m = fit_nonphysical(data, FitKind::Polynomial, 2, -45, 45);
    std::string axis;
    const auto back =
        nonphysical_from_json(nonphysical_to_json(m, "beta", "demo"), &axis);
    CHECK(axis == "beta");
    CHECK(back.kind == FitKind::Polynomial);
    CHECK(eval_nonphysical(back, 1.3) ==
          doctest::Approx(eval_nonphysical(m, 1.3)).epsilon(1e-12));
}

TEST_CASE("geometric inverses compose with forwards on a 3x3 grid") {
    // Quick version of the acceptance identity for SPM and N-slit.
    SensorGeometry g;
    g.focal_length_mm = 2.0;
    g.pitch_mm = 0.02;
    simgen::MaskSpec pin;
    pin.aperture_diameter_mm = 0.24;
    simgen::NoiseModel none;
    for (double a : {-10.0, 0.0, 10.0})
        for (double b : {-10.0, 0.0, 10.0}) {
            RandomStream rng(10, 1);
            const Image img = simgen::render_spot(g, pin, {a, b}, none, rng);
            const auto c = features::moment_centroid(img);
            const SunAngles est = spm_invert(c, g);
            CHECK(std::abs(est.alpha_deg - a) < 0.02);
            CHECK(std::abs(est.beta_deg - b) < 0.02);
        }
}
