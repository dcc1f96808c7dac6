#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sunsense {

/// Error categories surfaced by the toolkit. Every failure path throws
/// Error with one of these codes so callers (and the bench harness) can
/// count or dispatch on them without string matching.
enum class ErrorCode {
    ParseError,
    Unsupported,
    OutOfFov,
    OutOfHemisphere,
    DarkInput,
    EmptyStream,
    MalformedStream,
    AmbiguousPeak,
    InsufficientObservations,
    DegenerateGeometry,
    IllConditioned,
    MaxIterations,
    NoFeature,
    InsufficientLines,
    NoCircle,
    NoSun,
    NoSolution,
    SpectralDegeneracy,
    DegenerateSpectrum,
    ExtrapolationError,
    MarginError,
    CodeCollision,
    Unidentified,
    Ambiguous,
    ValidationError,
    Divergence,
    SolverError,
    IoError,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

/// Rectangular grid of pixel intensities. Row-major, row 0 at the top.
/// Intensities are stored as doubles but are bounded by the nominal bit
/// depth (8 or 16); I/O code quantizes on write.
struct Image {
    int width = 0;
    int height = 0;
    double pitch_mm = 1.0;  // detector pitch, mm per pixel
    int depth_bits = 8;     // 8 or 16
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, double pitch = 1.0, int depth = 8)
        : width(w), height(h), pitch_mm(pitch), depth_bits(depth),
          data(static_cast<size_t>(w) * h, 0.0) {}

    double& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
    double at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
    bool in_bounds(int x, int y) const {
        return x >= 0 && x < width && y >= 0 && y < height;
    }
    double max_value() const { return depth_bits == 16 ? 65535.0 : 255.0; }

    // Centered detector coordinates: origin at the geometric center,
    // x to the right, y up. Pixel centers land on integers for odd sizes.
    double coord_x(int i) const { return i - 0.5 * (width - 1); }
    double coord_y(int j) const { return 0.5 * (height - 1) - j; }
    double col_of_x(double x) const { return x + 0.5 * (width - 1); }
    double row_of_y(double y) const { return 0.5 * (height - 1) - y; }

    void validate() const;
};

/// The two boresight rotation angles. alpha tilts the sun about the
/// detector x axis (spot moves in Y); beta about y (spot moves in X).
struct SunAngles {
    double alpha_deg = 0.0;
    double beta_deg = 0.0;
};

struct SunVector {
    double x = 0.0, y = 0.0, z = 1.0;

    double norm() const;
    SunVector normalized() const;
    double dot(const SunVector& o) const { return x * o.x + y * o.y + z * o.z; }
};

/// Angle between two directions, degrees. Inputs need not be unit.
double angular_separation_deg(const SunVector& a, const SunVector& b);

/// Forward convention: v ~ (tan(beta), tan(alpha), 1), normalized.
SunVector angles_to_vector(const SunAngles& a);

/// Inverse of angles_to_vector. Throws OutOfHemisphere when z <= 0.
SunAngles vector_to_angles(const SunVector& v);

struct GlassLayer {
    double thickness_mm = 0.0;
    double refractive_index = 1.0;
};

/// Static description of the optical stack: focal distance h from the
/// mask lower surface to the detector, pixel pitch s, cover-glass layers
/// and the mask thickness t used by the shadowing model.
struct SensorGeometry {
    double focal_length_mm = 5.0;   // h
    double pitch_mm = 0.005;        // s
    double principal_point_x = 0.0; // px, offset from the centered origin
    double principal_point_y = 0.0;
    std::vector<GlassLayer> glass_layers;
    double mask_thickness_mm = 0.0; // t

    void validate() const;
};

struct PixelEvent {
    int pixel = 0;
    double t_us = 0.0;
};

/// Time-to-first-spike readout: timestamped events after a global reset.
struct EventStream {
    double reset_time_us = 0.0;
    std::vector<PixelEvent> events;
};

constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

/// Identity on single-channel images (grayscale conversion is idempotent).
Image to_grayscale(const Image& img);

/// Unweighted channel mean of an interleaved multi-channel buffer.
Image to_grayscale(std::span<const double> interleaved, int width, int height,
                   int channels, double pitch_mm = 1.0, int depth_bits = 8);

} // namespace sunsense
