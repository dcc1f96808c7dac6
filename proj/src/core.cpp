#include "sunsense/core.hpp"

#include <cmath>

namespace sunsense {

void Image::validate() const {
    if (width <= 0 || height <= 0)
        throw Error(ErrorCode::ValidationError, "image dimensions must be positive");
    if (pitch_mm <= 0.0)
        throw Error(ErrorCode::ValidationError, "pixel pitch must be positive");
    if (depth_bits != 8 && depth_bits != 16)
        throw Error(ErrorCode::Unsupported, "bit depth must be 8 or 16");
    if (data.size() != static_cast<size_t>(width) * height)
        throw Error(ErrorCode::ValidationError, "data length != width*height");
    const double maxv = max_value();
    for (double v : data)
        if (v < 0.0 || v > maxv)
            throw Error(ErrorCode::ValidationError, "intensity outside [0, 2^depth-1]");
}

void SensorGeometry::validate() const {
    if (focal_length_mm <= 0.0)
        throw Error(ErrorCode::ValidationError, "focal length must be positive");
    if (pitch_mm <= 0.0)
        throw Error(ErrorCode::ValidationError, "pitch must be positive");
    if (mask_thickness_mm < 0.0)
        throw Error(ErrorCode::ValidationError, "mask thickness must be non-negative");
    for (const auto& g : glass_layers)
        if (g.refractive_index < 1.0 || g.thickness_mm < 0.0)
            throw Error(ErrorCode::ValidationError, "invalid glass layer");
}

double SunVector::norm() const { return std::sqrt(x * x + y * y + z * z); }

SunVector SunVector::normalized() const {
    const double n = norm();
    if (n <= 0.0)
        throw Error(ErrorCode::NoSun, "cannot normalize zero vector");
    return {x / n, y / n, z / n};
}

double angular_separation_deg(const SunVector& a, const SunVector& b) {
    const SunVector ua = a.normalized(), ub = b.normalized();
    double c = ua.dot(ub);
    if (c > 1.0) c = 1.0;
    if (c < -1.0) c = -1.0;
    return rad2deg(std::acos(c));
}

SunVector angles_to_vector(const SunAngles& a) {
    if (std::abs(a.alpha_deg) >= 90.0 || std::abs(a.beta_deg) >= 90.0)
        throw Error(ErrorCode::OutOfFov, "sun angles must satisfy |angle| < 90 deg");
    const double tx = std::tan(deg2rad(a.beta_deg));
    const double ty = std::tan(deg2rad(a.alpha_deg));
    return SunVector{tx, ty, 1.0}.normalized();
}

SunAngles vector_to_angles(const SunVector& v) {
    if (v.z <= 0.0)
        throw Error(ErrorCode::OutOfHemisphere, "sun vector must have z > 0");
    return {rad2deg(std::atan(v.y / v.z)), rad2deg(std::atan(v.x / v.z))};
}

Image to_grayscale(const Image& img) { return img; }

Image to_grayscale(std::span<const double> interleaved, int width, int height,
                   int channels, double pitch_mm, int depth_bits) {
    if (channels <= 0 ||
        interleaved.size() != static_cast<size_t>(width) * height * channels)
        throw Error(ErrorCode::ValidationError, "bad interleaved buffer size");
    Image out(width, height, pitch_mm, depth_bits);
    for (size_t p = 0; p < out.data.size(); ++p) {
        double acc = 0.0;
        for (int c = 0; c < channels; ++c) acc += interleaved[p * channels + c];
        out.data[p] = acc / channels;
    }
    return out;
}

} // namespace sunsense
