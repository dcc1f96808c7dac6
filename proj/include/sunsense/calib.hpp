#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sunsense/core.hpp"
#include "sunsense/features.hpp"

namespace sunsense::calib {

using features::Centroid;

/// Standard projection inverse: alpha from Y, beta from X.
SunAngles spm_invert(const Centroid& c, const SensorGeometry& geom);

/// Three-parameter refinement of the projection model: focal deviation and
/// the two boresight offsets, referenced to the zero-offset spot.
struct LsqGeomParams {
    double dF_mm = 0.0;
    double alpha0_deg = 0.0;
    double beta0_deg = 0.0;
    double x_zp_mm = 0.0;
    double y_zp_mm = 0.0;
};

struct LsqGeomSample {
    double x_mm = 0.0, y_mm = 0.0; // spot position on the detector
    SunAngles truth;
};

LsqGeomParams lsq_geom_calibrate(std::span<const LsqGeomSample> samples,
                                 double nominal_F_mm);

SunAngles lsq_geom_apply(const LsqGeomParams& p, double nominal_F_mm,
                         double x_mm, double y_mm);

/// Gap-corrected quadrant balance: the plain balance plus the lit-gap
/// term per axis; zero gap areas reduce it to the plain balance.
features::BalancePair qpd_gap_balance(double a, double b, double c, double d,
                                      const std::array<double, 4>& lit_areas,
                                      double gap_area_x, double gap_area_y,
                                      double k_g);

struct SlitParams {
    double f = 5.0;        // theoretical focal length
    double f_prime = 5.0;  // actual focal length
    double theta_deg = 0.0; // installation deflection
    double delta_deg = 0.0; // installation inclination
};

/// Slit-mask installation-error correction; returns the corrected alpha.
double slit_correct(const SlitParams& p, const SunAngles& measured);

struct MultiSlitParams {
    double h_mm = 5.0;
    double t_mm = 0.0;
    std::vector<double> d_mm; // per-slit edge distances, 1-based parity
};

struct MultiSlitResult {
    std::vector<double> per_slit_deg;
    double fused_deg = 0.0;
};

/// Per-slit arctangent with the parity-dependent focal plane; fused mean.
MultiSlitResult multi_slit_angles(const MultiSlitParams& p,
                                  std::span<const double> spot_x_mm);

struct VSlitParams {
    std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1}; // a11..a33
    std::array<double, 3> displacement{0, 0, 0}; // error offset from (0,0,h)
    double delta_deg = 45.0;
    double slit_length_y_mm = 1.0;
    double focal_h_mm = 5.0;

    void validate() const; // rotation orthonormal within 1e-6
};

/// Two-axis inverse from the vertical/tilted slit intersections X1, X2.
SunAngles vslit_angles(const VSlitParams& p, double x1_mm, double x2_mm);

/// Forward kinematics of the same model; exposed for round-trip oracles.
std::pair<double, double> vslit_forward(const VSlitParams& p,
                                        const SunAngles& truth);

struct NSlitParams {
    double l_ref_mm = -2.0;
    double c_ref_mm = 0.0;
    double r_ref_mm = 2.0;
    double h_mm = 5.0;
    double delta_deg = 45.0;
    double refraction_K = 1.0;
};

SunAngles nslit_angles(const NSlitParams& p, double l_mm, double c_mm,
                       double r_mm);

/// Lensed-camera inverse from intrinsics; (u, v) in raw pixel coordinates
/// with v running down the rows.
SunAngles camera_angles(double f_px, double px, double py, double u, double v);

enum class FitKind { Linear, Polynomial, Trigonometric, Fourier, SigmoidComposite };

/// Fitted per-axis map from a scalar feature to an angle.
struct NonPhysicalModel {
    FitKind kind = FitKind::Polynomial;
    int order = 3;                 // polynomial degree / Fourier order
    std::vector<double> coeffs;
    double feature_scale = 1.0;    // Fourier fundamental scaling
    double fov_min_deg = -60.0;
    double fov_max_deg = 60.0;
    double feature_min = 0.0;      // training range; outside = extrapolation
    double feature_max = 0.0;
};

struct FitSample {
    double feature = 0.0;
    double angle_deg = 0.0;
};

NonPhysicalModel fit_nonphysical(std::span<const FitSample> samples, FitKind kind,
                                 int order, double fov_min_deg, double fov_max_deg);

/// Evaluates the fitted map. The trigonometric kind resolves its quadrant
/// from the sign auxiliary (lit-face convention); out-of-FOV queries set
/// the flag instead of failing.
double eval_nonphysical(const NonPhysicalModel& m, double feature,
                        int quadrant_sign = 1, bool* extrapolated = nullptr);

/// Node table of local polynomial segments blended linearly between nodes.
struct LutModel {
    double lo_deg = -64.0;
    double hi_deg = 64.0;
    double interval_deg = 1.0;
    int degree = 8;
    std::vector<std::vector<double>> node_polys; // per node, degree+1 coeffs
};

LutModel lut_build(std::span<const FitSample> samples, double interval_deg,
                   int degree, double lo_deg, double hi_deg);

double lut_eval(const LutModel& m, double query_deg);

/// Cover-glass stack of the iterative refraction model: air h2, glass h3
/// (index n2), air/glass h4 (index n3).
struct RefractionStack {
    double h2_mm = 1.0;
    double h3_mm = 1.0;
    double h4_mm = 3.0;
    double n1 = 1.0;
    double n2 = 1.5;
    double n3 = 1.0;
    double tol = 1e-12;
    int max_iterations = 200;

    double height_mm() const { return h2_mm + h3_mm + h4_mm; }
};

/// Root of the stack equation for the incidence angle given the landing
/// offset l; bisection bracket on [0, 80] degrees with Newton polish.
double refraction_solve_incidence(const RefractionStack& s, double l_mm);

/// Residual of the root equation at theta; exposed for the solver checks.
double refraction_residual(const RefractionStack& s, double theta_deg, double l_mm);

/// Correction coefficient k(theta): no-glass projection over the true one.
double refraction_k(const RefractionStack& s, double theta_deg);

struct RefractionCorrected {
    double mu_deg = 0.0;   // horizontal sunray orientation
    double nu_deg = 0.0;   // azimuth orientation
    double beta_deg = 0.0; // second-axis angle
    double k = 1.0;
    double theta_deg = 0.0;
};

/// Iterative refraction compensation for the two-spot slit measurement:
/// solves the incidence, evaluates k, applies the angle relations.
RefractionCorrected refraction_correct(const RefractionStack& s, double y1m_mm,
                                       double y2m_mm, double y1r_mm,
                                       double y2r_mm, double h_mm);

/// Periodic fine-code compensation; evaluates the conversion with the
/// sinusoid-corrected fine code.
double periodic_phase_compensate(double alpha1_deg, double alpha2_deg,
                                 double error_amp_k, double error_phase_t,
                                 const std::array<double, 4>& abcd,
                                 double alpha_meas_deg);

/// Shadowing (mask-thickness) centroid correction: subtracts half the
/// projected center gap along the off-boresight azimuth, iterated.
Centroid shadow_center_correct(const SensorGeometry& geom, const Centroid& raw,
                               int iterations = 2, bool* unreliable = nullptr);

/// Model serialization: {kind, axis, coefficients, fov, metadata}.
std::string nonphysical_to_json(const NonPhysicalModel& m,
                                const std::string& axis = "alpha",
                                const std::string& metadata = "");
NonPhysicalModel nonphysical_from_json(const std::string& text,
                                       std::string* axis = nullptr);

} // namespace sunsense::calib
