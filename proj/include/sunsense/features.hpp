#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "sunsense/core.hpp"

namespace sunsense::features {

/// Sub-pixel feature location in centered detector coordinates.
struct Centroid {
    double x = 0.0;
    double y = 0.0;
    double confidence = 1.0; // fraction of contributing features, [0, 1]
    int contributing = 1;
    bool flagged = false;    // tie broken / fallback taken
};

/// Quadrant balance pair; both components lie in [-1, 1] by construction.
struct BalancePair {
    double s_a = 0.0; // x-axis normalization function
    double s_b = 0.0; // y-axis normalization function
};

/// Voltage balance over the four quadrant signals.
BalancePair voltage_balance(double q1, double q2, double q3, double q4);

/// Maximum aspect angle of the quadrant geometry: tan(a_max) = d / (2h).
double balance_max_tangent(double aperture_d_mm, double focal_h_mm);

/// Recovers the angle (degrees) from a balance component: tan a = S tan a_max.
double balance_to_angle_deg(double balance, double aperture_d_mm, double focal_h_mm);

/// Integer-pixel peak detection; with offsets it anchors the known pattern
/// by the maxi-min rule. Ties resolve to the lowest linear index, flagged.
Centroid peak_detect(const Image& img,
                     std::span<const std::array<int, 2>> pattern_offsets = {});

enum class Preprocess { None, Threshold, Mean3x3 };

/// Intensity-weighted first moments. Threshold mode subtracts mu * I_max
/// and zero-clamps; Mean3x3 smooths with the neighbor-average kernel first.
Centroid moment_centroid(const Image& img, Preprocess pre = Preprocess::None,
                         double mu = 0.0);

struct Rect {
    int x0 = 0, y0 = 0, width = 0, height = 0;
};

struct McamResult {
    Centroid average;
    std::vector<Centroid> per_aperture; // only the lit regions
    int regions_total = 0;
    int regions_used = 0;
};

/// Per-aperture threshold centroids, averaged; dark regions are skipped
/// and reported through the confidence.
McamResult mcam(const Image& img, std::span<const Rect> aperture_regions,
                double mu);

/// Double-balance centroid: WTA acquisition of a 21x21 ROI, then the
/// one-column-shift balance correction on each axis.
Centroid dbcm(const Image& img, double mu);

/// Minimum threshold count for MT-ACM: smallest integer exceeding
/// sigma * sqrt(e) / dx_m.
int mtacm_threshold_count(double sigma_px, double dx_m_px);

/// Multiple-threshold averaging on the row/column sum profiles.
Centroid mt_acm(const Image& img, double sigma_px, double dx_m_px);

/// Argmax of the row-sum and column-sum profiles; integer resolution.
Centroid pixelmax(const Image& img);

/// Latency-inverse weighted mean of firing addresses (sub-pixel, 1-D).
double escm(const EventStream& stream);

struct BscmOptions {
    double min_radius_px = 2.0;
    double blur_sigma_px = 1.0;
};

/// Black-sun centroid: iterative descending-threshold candidate
/// accumulation inside the saturated blob; survivors preferred; the
/// largest-radius candidate above the minimum radius wins.
Centroid bscm(const Image& img, int loops_f, double alpha,
              const BscmOptions& opts = {});

struct CameraModel {
    double f_px = 1000.0; // focal length in pixel units
    double px = 0.0, py = 0.0;
    double rotation_deg = 0.0; // camera frame -> common frame, about boresight
};

struct HoughLine {
    double r = 0.0;     // pixels
    double theta = 0.0; // radians
    int votes = 0;
};

struct HoughOptions {
    double theta_step_deg = 0.5;
    double r_step_px = 1.0;
    double edge_sigma_mult = 4.0; // gradient threshold at 4 sigma of the floor
};

/// Dominant lines above the vote threshold from one accumulator pass.
std::vector<HoughLine> hough_lines(const Image& img, int tau, int max_lines,
                                   const HoughOptions& opts = {});

/// Blooming-line fusion: per-image dominant lines, projected to the common
/// frame, pairwise intersections averaged by vote weight, then the camera
/// model maps the point to angles.
SunAngles hough_line_sunvec(std::span<const Image> images,
                            std::span<const CameraModel> cameras, int tau,
                            const HoughOptions& opts = {});

struct HoughCircle {
    double a = 0.0, b = 0.0, r = 0.0; // center (pixels, centered coords), radius
    int votes = 0;
};

/// Circle accumulator over (a, b, r); radius range in pixels.
HoughCircle hough_circle(const Image& img, int tau, int r_min, int r_max,
                         const HoughOptions& opts = {});

/// Per-spot mean-shift tracker state (caller-owned, passed by value).
struct SpotState {
    double x = 0.0, y = 0.0;      // previous location, centered px
    double bandwidth_h = 8.0;     // kernel bandwidth
    double weight = 1.0;          // lowered when the spot is lost
    bool lost = false;
    std::vector<double> goal_hist; // q_u, sums to 1
};

struct SpotTrackState {
    int bins_m = 16;
    double quant_max = 255.0; // intensity covered by the m bins
    std::vector<SpotState> spots;
};

/// Initializes goal histograms at the detected spot locations.
SpotTrackState fmms_init(const Image& frame, std::span<const Centroid> spots,
                         double bandwidth_h, int bins_m = 16);

struct FmmsResult {
    SpotTrackState state;
    std::vector<Centroid> per_spot;
    Centroid fused;
};

/// One tracking pass: mean-shift with the Epanechnikov kernel per spot,
/// Bhattacharyya-guarded halving, lost spots downweighted (not fatal).
FmmsResult fmms_track(const Image& frame, const SpotTrackState& state,
                      double eps, int max_iterations = 20);

/// Template matching against the theoretical bi-level spot image; the
/// candidate minimizing the mismatch wins (zero error on noiseless truth).
Centroid template_match(const Image& img, double spot_radius_px,
                        int candidate_count, double mu);

struct FeicTemplate {
    Image patch;             // N_tpix x N_tpix template
    double cx = 0.0, cy = 0.0; // template centroid, centered px in the frame
};

struct FeicResult {
    double dx = 0.0, dy = 0.0; // updated displacement, seeds the next frame
    int spots_used = 0;
    int spots_dropped = 0;
};

/// Correlation-matrix centroiding over predictive windows; correlation
/// matrices are summed over spots before the centroid is taken.
FeicResult feic(const Image& frame, std::span<const FeicTemplate> templates,
                double prev_dx, double prev_dy, int nc);

/// Connected-component spot detection after threshold subtraction;
/// spots ordered by mass. Shared by the multi-spot consumers.
std::vector<Centroid> detect_spots(const Image& img, double mu,
                                   int min_pixels = 3, int max_spots = 64);

/// DFT-shift-theorem delay estimate: LSQ slope of the unwrapped phase of
/// S_shifted / S_ref over well-conditioned low-frequency bins, times dX.
double linear_phase_delay(std::span<const double> reference,
                          std::span<const double> shifted, double dx);

struct EigenDelayOptions {
    double search_min = -8.0;     // samples
    double search_max = 8.0;
    double coarse_step = 0.05;    // samples
    double noise_floor_frac = 0.1; // eigenvalues below this fraction of the
                                   // largest form the noise subspace
};

/// Subspace delay estimate: EVD of the truncated correlation Toeplitz
/// matrix; the delay minimizing the projection of b(tau) onto the noise
/// subspace wins, with parabolic refinement around the grid minimum.
double eigen_delay(std::span<const double> r1, std::span<const double> r2,
                   double dx, const EigenDelayOptions& opts = {});

/// Ratio-of-polynomials profile model for peak-position estimation.
struct PpeModel {
    std::array<double, 6> c{0, 0, 1, 0, 0, 1}; // c1..c6
    double eval(double u) const;
    double deriv(double u) const;
};

/// Fits c1..c6 by linear LSQ to an isolated reference peak (u, intensity).
PpeModel ppe_fit_model(std::span<const double> u, std::span<const double> intensity);

struct PpeResult {
    double mx = 0.0, my = 0.0; // displacements, samples
    std::array<double, 4> amplitudes{0, 0, 0, 0};
    int image_type = 0;
    int iterations = 0;
    bool converged = false;
};

struct PpeOptions {
    double tol = 1e-10;
    int max_iterations = 50;
    std::optional<int> forced_type; // overrides the separation classifier
};

/// Gauss-Newton fit of the four-peak profile model; the image type picks
/// the overlap case for the Jacobian assembly.
PpeResult ppe_fit(const Image& profile, const PpeModel& model, double lx_mm,
                  double ly_mm, double dx_mm, const PpeOptions& opts = {});

} // namespace sunsense::features
