#pragma once

#include <array>
#include <optional>
#include <vector>

#include "sunsense/core.hpp"
#include "sunsense/random.hpp"

namespace sunsense::simgen {

enum class MaskKind {
    Pinhole,
    MultiAperture,
    Slit,
    LSlit,
    NSlit,
    VSlit,
    MultiSlit,
    Periodic,
    Coded,
};

/// Aperture layout in the mask plane (mm). Which fields matter depends on
/// the kind: hole kinds use aperture_centers + diameter; slit kinds use the
/// per-variant position lists; Periodic uses the Fourier row description.
struct MaskSpec {
    MaskKind kind = MaskKind::Pinhole;
    double aperture_diameter_mm = 0.1; // d
    std::vector<std::array<double, 2>> aperture_centers{{0.0, 0.0}};

    // Slit: single position. MultiSlit: edge distances d_i (1-based parity
    // picks the focal plane: odd -> h+t, even -> h). NSlit: reference
    // centroids {L_r, C_r, R_r} at boresight.
    std::vector<double> slit_positions_mm;
    double slit_angle_delta_deg = 45.0; // V/N diagonal angle
    double vslit_length_y_mm = 1.0;

    // Periodic fine-code rows (F1..F4): period and truncated series.
    double period_theta0_deg = 8.0;
    double fourier_a0 = 100.0;
    std::vector<double> fourier_an{40.0};

    void validate() const;
};

struct NoiseModel {
    double gaussian_sigma = 0.0;      // read noise, counts
    double dark_offset = 0.0;         // counts
    bool shot = false;                // Poisson on signal
    double fixed_pattern_sigma = 0.0; // per-pixel gain-ish offset, counts
    bool saturation = false;          // clamp to full well
};

/// Shadowed-spot description: radial distances of the upper
/// and lower aperture-edge projections and their gap. t = 0 collapses
/// the two radii and the boundary becomes a circle of diameter d.
struct SpotShape {
    double upper_center_mm = 0.0; // R_C0, from (t+h)
    double lower_center_mm = 0.0; // R_C1, from h
    double center_gap_mm = 0.0;   // delta C = R_C0 - R_C1
    double azimuth_rad = 0.0;     // direction of displacement in the plane
};

SpotShape spot_shape(const SensorGeometry& geom, const SunAngles& truth);

struct RenderConfig {
    int image_width = 257;
    int image_height = 257;
    int depth_bits = 8;
    int supersample = 8;       // per-axis subsamples on boundary pixels
    bool penumbra = false;     // soften edges by the solar half-angle
    double solar_half_angle_deg = 0.266;
    double peak_fraction = 0.8; // spot level as a fraction of full well
};

/// Renders the projected sun spot(s) for hole-type masks. Deterministic for
/// a fixed rng. With t = 0, no glass, no penumbra and no noise the
/// intensity-weighted centroid matches the ideal projection to < 1e-3 px.
Image render_spot(const SensorGeometry& geom, const MaskSpec& mask,
                  const SunAngles& truth, const NoiseModel& noise,
                  RandomStream& rng, const RenderConfig& cfg = {});

struct ProfileConfig {
    int length = 4096;
    int depth_bits = 16;
    double peak_sigma_px = 2.0;
    double peak_fraction = 0.6;
};

/// Renders a 1xN linear-array profile for slit-type masks. For Periodic the
/// result is a 4x1 column of fine-code row currents F1..F4.
Image render_slit_profiles(const SensorGeometry& geom, const MaskSpec& mask,
                           const SunAngles& truth, const NoiseModel& noise,
                           RandomStream& rng, const ProfileConfig& cfg = {});

/// Ideal (noiseless) peak positions in mm for slit-type masks; the forward
/// kinematics behind render_slit_profiles. Exposed for oracles.
std::vector<double> slit_peak_positions_mm(const SensorGeometry& geom,
                                           const MaskSpec& mask,
                                           const SunAngles& truth);

struct BloomParams {
    double core_radius_frac = 0.55;     // dark core radius / spot radius
    double core_level_frac = 0.02;      // dark core level, fraction of full well
    std::vector<double> line_angles_deg; // saturated lines through the center
    double line_width_px = 1.5;
    bool saturation = true;
    double overexposure = 6.0;          // spot brightness / full well
};

/// Oversaturated sun image with an inverted (dark) core and optional
/// blooming lines through the true center.
Image render_black_sun(const SensorGeometry& geom, const MaskSpec& mask,
                       const SunAngles& truth, const BloomParams& bloom,
                       RandomStream& rng, const RenderConfig& cfg = {});

struct TfsParams {
    double reset_time_us = 0.0;
    double latency_constant = 1000.0; // c in t = reset + c / I
    double jitter_sigma_us = 0.0;
    double intensity_threshold = 0.5; // pixels below this never fire
};

/// Time-to-first-spike event synthesis from a 1xN profile: brighter pixels
/// fire earlier, t_x = reset + c / I(x) + jitter.
EventStream synth_events(const Image& profile, const TfsParams& tfs,
                         RandomStream& rng);

Image add_noise(const Image& img, const NoiseModel& noise, RandomStream& rng);

/// Periodic fine-code row outputs of the truncated series at incidence
/// alpha; rows F1..F4 differ by quarter-period phase.
std::array<double, 4> periodic_row_outputs(double alpha_deg, double a0,
                                           std::span<const double> an,
                                           double theta0_deg);

} // namespace sunsense::simgen
