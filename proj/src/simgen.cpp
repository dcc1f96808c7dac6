#include "sunsense/simgen.hpp"

#include <algorithm>
#include <cmath>

namespace sunsense::simgen {

namespace {

struct TangentDir {
    double tx, ty;        // tan components along x (beta) and y (alpha)
    double tan_inc;       // tan of the incidence angle from the normal
    double cos_inc;
    double ux, uy;        // unit displacement direction in the plane
};

TangentDir tangent_dir(const SunAngles& truth) {
    TangentDir d;
    d.tx = std::tan(deg2rad(truth.beta_deg));
    d.ty = std::tan(deg2rad(truth.alpha_deg));
    d.tan_inc = std::hypot(d.tx, d.ty);
    d.cos_inc = 1.0 / std::sqrt(1.0 + d.tan_inc * d.tan_inc);
    if (d.tan_inc > 0.0) {
        d.ux = d.tx / d.tan_inc;
        d.uy = d.ty / d.tan_inc;
    } else {
        d.ux = 1.0;
        d.uy = 0.0;
    }
    return d;
}

// Radial displacement of a ray traced through the cover stack to a plane
// `height` above the detector: air runs straight, glass bends per Snell.
double refracted_displacement(const SensorGeometry& geom, double height,
                              double tan_inc) {
    double glass = 0.0, disp = 0.0;
    const double sin_inc = tan_inc / std::sqrt(1.0 + tan_inc * tan_inc);
    for (const auto& g : geom.glass_layers) {
        glass += g.thickness_mm;
        const double s = sin_inc / g.refractive_index;
        disp += g.thickness_mm * s / std::sqrt(1.0 - s * s);
    }
    const double air = height - glass;
    if (air < 0.0)
        throw Error(ErrorCode::ValidationError, "glass stack thicker than focal length");
    return disp + air * tan_inc;
}

// Fraction of the solar disk left uncovered by a straight edge at signed
// normalized distance u (negative = inside the lit side).
double edge_coverage(double u) {
    if (u <= -1.0) return 1.0;
    if (u >= 1.0) return 0.0;
    return 0.5 - (u * std::sqrt(1.0 - u * u) + std::asin(u)) / kPi;
}

struct Disc {
    double cx, cy, r;
    double penumbra_mm; // half-width of the soft edge; 0 = hard
};

double point_coverage(double x, double y, const Disc& a, const Disc& b) {
    const double sda = std::hypot(x - a.cx, y - a.cy) - a.r;
    const double sdb = std::hypot(x - b.cx, y - b.cy) - b.r;
    double ca = a.penumbra_mm > 0.0 ? edge_coverage(sda / a.penumbra_mm)
                                    : (sda <= 0.0 ? 1.0 : 0.0);
    double cb = b.penumbra_mm > 0.0 ? edge_coverage(sdb / b.penumbra_mm)
                                    : (sdb <= 0.0 ? 1.0 : 0.0);
    return std::min(ca, cb);
}

// Pixel-averaged coverage of the two-disc intersection; pixel center
// (px, py), side `pitch`, all in mm. Hard edges integrate exact chord
// intervals per sub-row (midpoint rule in y, analytic in x); penumbra
// falls back to smooth point sampling.
double pixel_coverage(double px, double py, double pitch, const Disc& a,
                      const Disc& b, int ss) {
    const double pad = 0.7072 * pitch + std::max(a.penumbra_mm, b.penumbra_mm);
    const double sda = std::hypot(px - a.cx, py - a.cy) - a.r;
    const double sdb = std::hypot(px - b.cx, py - b.cy) - b.r;
    const double m = std::max(sda, sdb);
    if (m <= -pad) return 1.0;
    if (m >= pad) return 0.0;

    if (a.penumbra_mm > 0.0 || b.penumbra_mm > 0.0) {
        double acc = 0.0;
        for (int sy = 0; sy < ss; ++sy)
            for (int sx = 0; sx < ss; ++sx) {
                const double ox = ((sx + 0.5) / ss - 0.5) * pitch;
                const double oy = ((sy + 0.5) / ss - 0.5) * pitch;
                acc += point_coverage(px + ox, py + oy, a, b);
            }
        return acc / (ss * ss);
    }

    const double xa = px - 0.5 * pitch, xb = px + 0.5 * pitch;
    const int rows = ss * ss; // hard edges are cheap per row
    double acc = 0.0;
    for (int k = 0; k < rows; ++k) {
        const double y = py + ((k + 0.5) / rows - 0.5) * pitch;
        const double dy_a = y - a.cy;
        const double rem_a = a.r * a.r - dy_a * dy_a;
        const double dy_b = y - b.cy;
        const double rem_b = b.r * b.r - dy_b * dy_b;
        if (rem_a <= 0.0 || rem_b <= 0.0) continue;
        const double ha = std::sqrt(rem_a), hb = std::sqrt(rem_b);
        const double lo = std::max({xa, a.cx - ha, b.cx - hb});
        const double hi = std::min({xb, a.cx + ha, b.cx + hb});
        if (hi > lo) acc += hi - lo;
    }
    return acc / (rows * pitch);
}

void render_discs(Image& img, const Disc& a, const Disc& b, double amplitude,
                  int ss, bool* hit) {
    const double pitch = img.pitch_mm;
    const double pad = std::max(a.penumbra_mm, b.penumbra_mm) + pitch;
    const double x_lo = std::min(a.cx - a.r, b.cx - b.r) - pad;
    const double x_hi = std::max(a.cx + a.r, b.cx + b.r) + pad;
    const double y_lo = std::min(a.cy - a.r, b.cy - b.r) - pad;
    const double y_hi = std::max(a.cy + a.r, b.cy + b.r) + pad;

    const int i0 = std::max(0, (int)std::floor(img.col_of_x(x_lo / pitch)));
    const int i1 = std::min(img.width - 1, (int)std::ceil(img.col_of_x(x_hi / pitch)));
    const int j0 = std::max(0, (int)std::floor(img.row_of_y(y_hi / pitch)));
    const int j1 = std::min(img.height - 1, (int)std::ceil(img.row_of_y(y_lo / pitch)));

    for (int j = j0; j <= j1; ++j) {
        const double py = img.coord_y(j) * pitch;
        for (int i = i0; i <= i1; ++i) {
            const double px = img.coord_x(i) * pitch;
            const double cov = pixel_coverage(px, py, pitch, a, b, ss);
            if (cov > 0.0) {
                img.at(i, j) += amplitude * cov;
                if (hit) *hit = true;
            }
        }
    }
}

} // namespace

void MaskSpec::validate() const {
    switch (kind) {
        case MaskKind::Pinhole:
        case MaskKind::MultiAperture:
        case MaskKind::Coded:
            if (aperture_diameter_mm <= 0.0)
                throw Error(ErrorCode::ValidationError, "aperture diameter must be positive");
            if (aperture_centers.empty())
                throw Error(ErrorCode::ValidationError, "aperture layout is empty");
            break;
        case MaskKind::Slit:
        case MaskKind::LSlit:
            if (slit_positions_mm.empty())
                throw Error(ErrorCode::ValidationError, "slit layout is empty");
            break;
        case MaskKind::MultiSlit:
            if (slit_positions_mm.empty())
                throw Error(ErrorCode::ValidationError, "multi-slit layout is empty");
            break;
        case MaskKind::NSlit:
            if (slit_positions_mm.size() != 3)
                throw Error(ErrorCode::ValidationError,
                            "N-slit needs the three reference centroids");
            break;
        case MaskKind::VSlit:
            if (vslit_length_y_mm <= 0.0)
                throw Error(ErrorCode::ValidationError, "V-slit length must be positive");
            break;
        case MaskKind::Periodic:
            if (period_theta0_deg <= 0.0)
                throw Error(ErrorCode::ValidationError, "period must be positive");
            break;
    }
}

SpotShape spot_shape(const SensorGeometry& geom, const SunAngles& truth) {
    const TangentDir d = tangent_dir(truth);
    SpotShape s;
    s.lower_center_mm = geom.focal_length_mm * d.tan_inc;
    s.upper_center_mm = (geom.focal_length_mm + geom.mask_thickness_mm) * d.tan_inc;
    s.center_gap_mm = s.upper_center_mm - s.lower_center_mm;
    s.azimuth_rad = std::atan2(d.ty, d.tx);
    return s;
}

Image render_spot(const SensorGeometry& geom, const MaskSpec& mask,
                  const SunAngles& truth, const NoiseModel& noise,
                  RandomStream& rng, const RenderConfig& cfg) {
    geom.validate();
    mask.validate();
    if (mask.kind != MaskKind::Pinhole && mask.kind != MaskKind::MultiAperture &&
        mask.kind != MaskKind::Coded)
        throw Error(ErrorCode::Unsupported, "render_spot handles hole-type masks only");

    Image img(cfg.image_width, cfg.image_height, geom.pitch_mm, cfg.depth_bits);
    const TangentDir d = tangent_dir(truth);

    const double h = geom.focal_length_mm;
    const double t = geom.mask_thickness_mm;
    const double l_lower = refracted_displacement(geom, h, d.tan_inc);
    const double l_upper = l_lower + t * d.tan_inc;
    const double r = 0.5 * mask.aperture_diameter_mm;
    const double amplitude = cfg.peak_fraction * img.max_value() * d.cos_inc;

    double pen_lower = 0.0, pen_upper = 0.0;
    if (cfg.penumbra) {
        const double tsol = std::tan(deg2rad(cfg.solar_half_angle_deg));
        pen_lower = h * tsol;
        pen_upper = (h + t) * tsol;
    }

    const int ss = std::max(2, cfg.supersample) * 4;
    bool hit = false;
    for (const auto& a : mask.aperture_centers) {
        const Disc lower{a[0] + d.ux * l_lower, a[1] + d.uy * l_lower, r, pen_lower};
        const Disc upper{a[0] + d.ux * l_upper, a[1] + d.uy * l_upper, r, pen_upper};
        render_discs(img, upper, lower, amplitude, ss, &hit);
    }
    if (!hit)
        throw Error(ErrorCode::OutOfFov, "spot fully off-detector");
    return add_noise(img, noise, rng);
}

std::vector<double> slit_peak_positions_mm(const SensorGeometry& geom,
                                           const MaskSpec& mask,
                                           const SunAngles& truth) {
    const double h = geom.focal_length_mm;
    const double t = geom.mask_thickness_mm;
    const double ta = std::tan(deg2rad(truth.alpha_deg));
    const double tb = std::tan(deg2rad(truth.beta_deg));
    const double td = std::tan(deg2rad(mask.slit_angle_delta_deg));

    std::vector<double> pos;
    switch (mask.kind) {
        case MaskKind::Slit:
        case MaskKind::LSlit:
            for (double x0 : mask.slit_positions_mm) pos.push_back(x0 + h * tb);
            break;
        case MaskKind::MultiSlit:
            // 1-based parity: odd slits sit on the upper mask surface (h+t).
            for (size_t i = 0; i < mask.slit_positions_mm.size(); ++i) {
                const double plane = (i % 2 == 0) ? h + t : h;
                pos.push_back(mask.slit_positions_mm[i] + plane * tb);
            }
            break;
        case MaskKind::NSlit: {
            // Pure alpha shifts all three spots equally; beta moves only the
            // outer pair through the diagonal coupling.
            const double common = h * ta;
            const double outer = h * td * tb;
            pos.push_back(mask.slit_positions_mm[0] + common + outer); // L
            pos.push_back(mask.slit_positions_mm[1] + common);         // C
            pos.push_back(mask.slit_positions_mm[2] + common + outer); // R
            break;
        }
        case MaskKind::VSlit: {
            const double y = mask.vslit_length_y_mm;
            pos.push_back(2.0 * y * td - h * ta - h * td * tb); // X1, tilted slit pair
            pos.push_back(y * td - h * ta);                     // X2, vertical slit
            break;
        }
        default:
            throw Error(ErrorCode::Unsupported, "not a slit-type mask");
    }
    return pos;
}

Image render_slit_profiles(const SensorGeometry& geom, const MaskSpec& mask,
                           const SunAngles& truth, const NoiseModel& noise,
                           RandomStream& rng, const ProfileConfig& cfg) {
    geom.validate();
    mask.validate();

    if (mask.kind == MaskKind::Periodic) {
        const auto f = periodic_row_outputs(truth.alpha_deg, mask.fourier_a0,
                                            mask.fourier_an, mask.period_theta0_deg);
        Image rows(1, 4, geom.pitch_mm, cfg.depth_bits);
        for (int k = 0; k < 4; ++k)
            rows.at(0, k) = std::clamp(f[k], 0.0, rows.max_value());
        return add_noise(rows, noise, rng);
    }

    const auto centers = slit_peak_positions_mm(geom, mask, truth);
    Image prof(cfg.length, 1, geom.pitch_mm, cfg.depth_bits);
    const TangentDir d = tangent_dir(truth);
    const double amp = cfg.peak_fraction * prof.max_value() * d.cos_inc;
    const double sig = cfg.peak_sigma_px;

    bool hit = false;
    for (double c_mm : centers) {
        const double c_px = c_mm / geom.pitch_mm;
        const double col = prof.col_of_x(c_px);
        const int i0 = std::max(0, (int)std::floor(col - 6.0 * sig));
        const int i1 = std::min(prof.width - 1, (int)std::ceil(col + 6.0 * sig));
        for (int i = i0; i <= i1; ++i) {
            const double u = (prof.coord_x(i) - c_px) / sig;
            prof.at(i, 0) += amp * std::exp(-0.5 * u * u);
        }
        if (i0 <= i1) hit = true;
    }
    if (!hit)
        throw Error(ErrorCode::OutOfFov, "all slit peaks off the array");
    return add_noise(prof, noise, rng);
}

Image render_black_sun(const SensorGeometry& geom, const MaskSpec& mask,
                       const SunAngles& truth, const BloomParams& bloom,
                       RandomStream& rng, const RenderConfig& cfg) {
    if (!bloom.saturation) {
        NoiseModel none;
        return render_spot(geom, mask, truth, none, rng, cfg);
    }
    RenderConfig over = cfg;
    over.peak_fraction = bloom.overexposure;
    NoiseModel none;
    Image img = render_spot(geom, mask, truth, none, rng, over);

    const double full = img.max_value();
    for (double& v : img.data) v = std::min(v, full);

    // Dark core centered on the true spot projection.
    const TangentDir d = tangent_dir(truth);
    const double l = refracted_displacement(geom, geom.focal_length_mm, d.tan_inc) +
                     0.5 * geom.mask_thickness_mm * d.tan_inc;
    const double cx_px = d.ux * l / geom.pitch_mm;
    const double cy_px = d.uy * l / geom.pitch_mm;
    const double r_core =
        bloom.core_radius_frac * 0.5 * mask.aperture_diameter_mm / geom.pitch_mm;
    const double core_level = bloom.core_level_frac * full;

    for (int j = 0; j < img.height; ++j)
        for (int i = 0; i < img.width; ++i) {
            const double dx = img.coord_x(i) - cx_px;
            const double dy = img.coord_y(j) - cy_px;
            if (std::hypot(dx, dy) <= r_core) img.at(i, j) = core_level;
        }

    // Blooming: saturated bands through the center at the given angles.
    for (double ang : bloom.line_angles_deg) {
        const double nx = -std::sin(deg2rad(ang));
        const double ny = std::cos(deg2rad(ang));
        for (int j = 0; j < img.height; ++j)
            for (int i = 0; i < img.width; ++i) {
                const double dist =
                    std::abs(nx * (img.coord_x(i) - cx_px) + ny * (img.coord_y(j) - cy_px));
                if (dist <= 0.5 * bloom.line_width_px) img.at(i, j) = full;
            }
    }
    return img;
}

EventStream synth_events(const Image& profile, const TfsParams& tfs,
                         RandomStream& rng) {
    if (profile.height != 1)
        throw Error(ErrorCode::ValidationError, "event synthesis expects a 1xN profile");
    EventStream ev;
    ev.reset_time_us = tfs.reset_time_us;
    for (int i = 0; i < profile.width; ++i) {
        const double inten = profile.at(i, 0);
        if (inten <= tfs.intensity_threshold) continue;
        double t = tfs.reset_time_us + tfs.latency_constant / inten;
        if (tfs.jitter_sigma_us > 0.0) {
            t += rng.normal(0.0, tfs.jitter_sigma_us);
            // Jitter must not fire a pixel before the global reset.
            t = std::max(t, std::nextafter(tfs.reset_time_us, 1e300));
        }
        ev.events.push_back({i, t});
    }
    if (ev.events.empty())
        throw Error(ErrorCode::EmptyStream, "all-dark profile produced no events");
    return ev;
}

Image add_noise(const Image& img, const NoiseModel& noise, RandomStream& rng) {
    Image out = img;
    const double full = out.max_value();
    for (double& v : out.data) {
        double s = v;
        if (noise.shot) s = static_cast<double>(rng.poisson(s));
        s += noise.dark_offset;
        if (noise.fixed_pattern_sigma > 0.0)
            s += rng.normal(0.0, noise.fixed_pattern_sigma);
        if (noise.gaussian_sigma > 0.0) s += rng.normal(0.0, noise.gaussian_sigma);
        v = std::clamp(s, 0.0, full);
    }
    return out;
}

std::array<double, 4> periodic_row_outputs(double alpha_deg, double a0,
                                           std::span<const double> an,
                                           double theta0_deg) {
    double sc = 0.0, ss = 0.0;
    for (size_t n = 0; n < an.size(); ++n) {
        const double arg = (n + 1) * 2.0 * kPi * alpha_deg / theta0_deg;
        sc += an[n] * std::cos(arg);
        ss += an[n] * std::sin(arg);
    }
    return {0.5 * a0 - sc, 0.5 * a0 - ss, 0.5 * a0 + sc, 0.5 * a0 + ss};
}

} // namespace sunsense::simgen
