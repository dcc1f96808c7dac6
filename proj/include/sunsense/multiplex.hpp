#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "sunsense/core.hpp"
#include "sunsense/features.hpp"
#include "sunsense/simgen.hpp"

namespace sunsense::multiplex {

/// One aperture triplet: collinear along x, spacings (d1, d2) encode the
/// sub-FOV identity.
struct TripletGroup {
    int row = 0, col = 0;
    double d1_mm = 0.0, d2_mm = 0.0;
    std::array<double, 2> origin_mm{0.0, 0.0}; // first aperture of the group
};

struct CodedMask {
    int rows = 0, cols = 0;
    double base_spacing_mm = 0.0;
    double step_mm = 0.0;
    double aperture_d_mm = 0.1;
    double focal_h_mm = 5.0;       // used to place groups per sub-FOV center
    double fov_half_deg = 30.0;    // full-FOV half angle covered by the grid
    std::vector<TripletGroup> groups;

    int subfov_index(int row, int col) const { return row * cols + col; }
};

struct CodedMaskOptions {
    double aperture_d_mm = 0.1;
    double focal_h_mm = 5.0;
    double fov_half_deg = 30.0;
};

/// Builds the triplet-coded mask; every (d1, d2) pair is unique and the
/// build verifies the injectivity of the code table.
CodedMask build_coded_mask(int rows, int cols, double base_spacing_mm,
                           double step_mm, const CodedMaskOptions& opts = {});

/// Mask layout in simgen terms (multi-aperture path).
simgen::MaskSpec to_mask_spec(const CodedMask& mask);

struct SubFovMatch {
    int index = -1;
    int row = 0, col = 0;
    double score = 0.0;   // winner score
    double margin = 0.0;  // winner minus runner-up distance, mm
};

/// Matches the measured pairwise spacings of >= 3 collinear spots against
/// the code table within tol.
SubFovMatch identify_subfov(std::span<const features::Centroid> spots,
                            const CodedMask& mask, double tol_mm,
                            double pitch_mm);

/// Full decode: spot detection, sub-FOV identification, then per-spot
/// projection inversions relative to the matched apertures, averaged.
SunAngles multiplex_angles(const Image& image, const CodedMask& mask,
                           const SensorGeometry& geom);

std::string to_json(const CodedMask& mask);
CodedMask coded_mask_from_json(const std::string& text);

} // namespace sunsense::multiplex
