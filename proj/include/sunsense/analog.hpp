#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sunsense/core.hpp"

namespace sunsense::analog {

/// One photodiode/solar-cell face. face_id uses the Lu scheme: a,c,e carry
/// the positive axis sign, b,d,f the negative.
struct FaceReading {
    SunVector normal{0, 0, 1};
    double current_mA = 0.0;
    double temperature_K = 298.15;
    char face_id = 'a';
};

struct PhotoCurrents {
    std::vector<FaceReading> faces;
    double reference_I0_mA = 1.0;    // I_0 / I_max,T0
    double temp_coeff = 0.0;         // C (or K), 1/kelvin
    double reference_T0_K = 298.15;  // T_0
    double fov_half_angle_deg = 90.0;
};

/// Cosine response gated by the FOV half angle and eclipse flag.
double current_cosine(const SunVector& normal, const SunVector& sun, double I0,
                      double fov_half_angle_deg, bool in_shadow);

/// Kelly cosine: cubic-in-cos correction for large incidence; clamped at 0.
double current_kelly(double theta_deg, double alpha_s, double I0, double eta);

/// Temperature-compensated triad inverse: picks the strongest face per
/// axis, divides out 1 + C (T - T0), applies the face sign, normalizes.
SunVector sunvec_temp_compensated(const PhotoCurrents& pc);

struct AlbedoCell {
    std::array<double, 3> position; // on the Earth sphere
    double area = 0.0;
    double albedo = 0.0;            // [0, 1]
    std::array<double, 3> normal;   // outward unit normal
};

struct AlbedoGrid {
    std::vector<AlbedoCell> cells; // pre-filtered: sun- and craft-visible
    SunVector sun_dir{1, 0, 0};    // s_earth, from Earth toward the Sun
    bool craft_in_shadow = false;  // B in S
    bool empty_warning = false;    // set by albedo_voltage on an empty grid
};

/// Riemann-sum quadrature of the albedo irradiance integrand; 0 in eclipse.
double albedo_voltage(const AlbedoGrid& grid, const SunVector& sensor_normal,
                      const std::array<double, 3>& spacecraft_pos,
                      bool* empty_flag = nullptr);

/// Equal-area-ish cap grid builder for quadrature tests: cells of the
/// Earth sphere centered under the spacecraft, uniform albedo.
AlbedoGrid build_cap_grid(double earth_radius, double cap_half_angle_deg,
                          int rings, double albedo, const SunVector& sun_dir);

/// Face currents ordered +x, -x, +y, -y, +z, -z.
using FaceCurrents = std::array<double, 6>;

/// Six-face max-of-pair fusion with signs from the winning face.
SunVector fuse_basic(const FaceCurrents& I);

struct PanelReading {
    SunVector normal{0, 0, 1};
    double current_mA = 0.0;
};

/// Current-weighted normal sum over lit panels.
SunVector fuse_solar_panel(std::span<const PanelReading> panels, double I0);

struct PyramidSpec {
    int face_count = 4;
    std::vector<double> azimuths_deg; // size M, distinct mod 360
    double elevation_deg = 30.0;      // gamma
    double xi = 1.0;                  // measurement coefficient

    void validate() const;
};

/// Row-normalized pyramid inverse: s = xi * (b_x/|b_x|^2; b_y/..; b_z/..) e.
SunVector fuse_pyramid(const PyramidSpec& spec, std::span<const double> e);

struct PanoramicCell {
    SunVector install{0, 0, 1};
    double I_ph = 0.0;
    double temperature_K = 298.15;
    double weight = 1.0; // multiplies the configured weighting
};

struct PanoramicConfig {
    double I_max_T0 = 1.0;
    double K_temp = 0.0;
    double T0_K = 298.15;
    double exclusion_angle_deg = 70.0; // incidence beyond this is dropped
    bool cos2_weights = false;         // identity weights otherwise
};

/// Weighted least squares over the installation vectors.
SunVector fuse_panoramic(std::span<const PanoramicCell> cells,
                         const PanoramicConfig& cfg);

enum class AlbedoMode { MaxCurrents, Sse, Saie };

/// Per-face illumination classes for the SAIE closed forms.
enum class FaceLight : char { Dark = 'd', Sun = 's', Albedo = 'a', Both = 'b' };

struct SaieAux {
    std::array<FaceLight, 6> faces{FaceLight::Dark, FaceLight::Dark,
                                   FaceLight::Dark, FaceLight::Dark,
                                   FaceLight::Dark, FaceLight::Dark};
    int problem_type() const;
};

struct AlbedoMitigateResult {
    std::array<double, 3> s{0, 0, 0}; // component form; unit only for Type 1
    std::array<double, 3> a{0, 0, 0};
    SunVector sun_vector() const;
};

/// Albedo mitigation: max-of-pair selection, SSE body-frame sum, or the
/// SAIE closed forms (Type 2 needs a magnetometer and is unsupported;
/// Type 3 has no solution).
AlbedoMitigateResult albedo_mitigate(const FaceCurrents& I, AlbedoMode mode,
                                     const SaieAux& aux = {});

/// CSV with header `face,nx,ny,nz,current_mA,temp_K`.
std::vector<FaceReading> load_photocurrents_csv(const std::string& path);
void save_photocurrents_csv(std::span<const FaceReading> faces,
                            const std::string& path);

std::string albedo_grid_to_json(const AlbedoGrid& grid);
AlbedoGrid albedo_grid_from_json(const std::string& text);

} // namespace sunsense::analog
