#include "sunsense/multiplex.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <json.hpp>

#include "sunsense/calib.hpp"

namespace sunsense::multiplex {

CodedMask build_coded_mask(int rows, int cols, double base_spacing_mm,
                           double step_mm, const CodedMaskOptions& opts) {
    if (rows < 1 || cols < 1 || base_spacing_mm <= 0.0 || step_mm <= 0.0)
        throw Error(ErrorCode::ValidationError, "bad coded-mask parameters");
    CodedMask m;
    m.rows = rows;
    m.cols = cols;
    m.base_spacing_mm = base_spacing_mm;
    m.step_mm = step_mm;
    m.aperture_d_mm = opts.aperture_d_mm;
    m.focal_h_mm = opts.focal_h_mm;
    m.fov_half_deg = opts.fov_half_deg;

    // Sub-FOV cells tile the tangent-space FOV box; each group sits so its
    // triplet projects onto the detector center at the cell center.
    const double t_half = std::tan(deg2rad(opts.fov_half_deg));
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            TripletGroup g;
            g.row = r;
            g.col = c;
            g.d1_mm = base_spacing_mm + r * step_mm;
            g.d2_mm = base_spacing_mm + c * step_mm;
            const double tx = -t_half + (c + 0.5) * 2.0 * t_half / cols;
            const double ty = -t_half + (r + 0.5) * 2.0 * t_half / rows;
            const double span = g.d1_mm + g.d2_mm;
            g.origin_mm = {-opts.focal_h_mm * tx - 0.5 * span,
                           -opts.focal_h_mm * ty};
            m.groups.push_back(g);
        }

    // Injectivity of the code table.
    std::map<std::pair<long, long>, int> seen;
    for (const auto& g : m.groups) {
        const auto key = std::make_pair((long)std::llround(g.d1_mm * 1e6),
                                        (long)std::llround(g.d2_mm * 1e6));
        const auto [it, inserted] = seen.emplace(key, m.subfov_index(g.row, g.col));
        if (!inserted)
            throw Error(ErrorCode::CodeCollision,
                        "duplicate spacing pair in the code table");
    }
    return m;
}

simgen::MaskSpec to_mask_spec(const CodedMask& mask) {
    simgen::MaskSpec spec;
    spec.kind = simgen::MaskKind::Coded;
    spec.aperture_diameter_mm = mask.aperture_d_mm;
    spec.aperture_centers.clear();
    for (const auto& g : mask.groups) {
        spec.aperture_centers.push_back({g.origin_mm[0], g.origin_mm[1]});
        spec.aperture_centers.push_back({g.origin_mm[0] + g.d1_mm, g.origin_mm[1]});
        spec.aperture_centers.push_back(
            {g.origin_mm[0] + g.d1_mm + g.d2_mm, g.origin_mm[1]});
    }
    return spec;
}

SubFovMatch identify_subfov(std::span<const features::Centroid> spots,
                            const CodedMask& mask, double tol_mm,
                            double pitch_mm) {
    if (spots.size() < 3)
        throw Error(ErrorCode::Unidentified,
                    "sub-FOV identification needs at least 3 spots");

    // Order the triplet along x and measure the two spacings.
    std::vector<features::Centroid> s(spots.begin(), spots.end());
    std::sort(s.begin(), s.end(),
              [](const auto& a, const auto& b) { return a.x < b.x; });
    const double m1 = (s[1].x - s[0].x) * pitch_mm;
    const double m2 = (s[2].x - s[1].x) * pitch_mm;

    // Rank the code table by spacing distance.
    double best = 1e300, second = 1e300;
    const TripletGroup* winner = nullptr;
    for (const auto& g : mask.groups) {
        const double d = std::hypot(m1 - g.d1_mm, m2 - g.d2_mm);
        if (d < best) {
            second = best;
            best = d;
            winner = &g;
        } else if (d < second) {
            second = d;
        }
    }
    if (!winner || best > tol_mm)
        throw Error(ErrorCode::Unidentified, "no spacing code within tolerance");
    if (second <= tol_mm)
        throw Error(ErrorCode::Ambiguous,
                    "two codes within tolerance: tolerance too loose");

    SubFovMatch match;
    match.index = mask.subfov_index(winner->row, winner->col);
    match.row = winner->row;
    match.col = winner->col;
    match.score = best;
    match.margin = second - best;
    return match;
}

namespace {

SunAngles angles_from_triple(const SensorGeometry& geom, const TripletGroup& g,
                             const std::array<features::Centroid, 3>& triple) {
    const std::array<std::array<double, 2>, 3> apertures = {
        std::array<double, 2>{g.origin_mm[0], g.origin_mm[1]},
        std::array<double, 2>{g.origin_mm[0] + g.d1_mm, g.origin_mm[1]},
        std::array<double, 2>{g.origin_mm[0] + g.d1_mm + g.d2_mm, g.origin_mm[1]}};
    // Average of the per-spot projection inversions w.r.t. their apertures.
    double ta = 0.0, tb = 0.0;
    for (int i = 0; i < 3; ++i) {
        const double x_mm = triple[i].x * geom.pitch_mm - apertures[i][0];
        const double y_mm = triple[i].y * geom.pitch_mm - apertures[i][1];
        tb += x_mm / geom.focal_length_mm;
        ta += y_mm / geom.focal_length_mm;
    }
    return {rad2deg(std::atan(ta / 3.0)), rad2deg(std::atan(tb / 3.0))};
}

} // namespace

SunAngles multiplex_angles(const Image& image, const CodedMask& mask,
                           const SensorGeometry& geom) {
    auto spots = features::detect_spots(image, 0.3, 3, 12);
    if (spots.size() < 3)
        throw Error(ErrorCode::Unidentified, "fewer than 3 spots detected");
    std::sort(spots.begin(), spots.end(),
              [](const auto& a, const auto& b) { return a.x < b.x; });

    // Neighboring groups can be partially visible alongside the active one;
    // test every collinear-in-y triple against the code table and keep the
    // match whose estimate falls inside its own angular cell.
    const double tol = 0.4 * mask.step_mm;
    const double t_half = std::tan(deg2rad(mask.fov_half_deg));
    const double cell_tx = 2.0 * t_half / mask.cols;
    const double cell_ty = 2.0 * t_half / mask.rows;

    struct Scored {
        SubFovMatch match;
        SunAngles angles;
        bool in_cell;
    };
    std::vector<Scored> found;
    const size_t n = spots.size();
    for (size_t a = 0; a < n; ++a)
        for (size_t b = a + 1; b < n; ++b)
            for (size_t c = b + 1; c < n; ++c) {
                const std::array<features::Centroid, 3> triple{spots[a], spots[b],
                                                               spots[c]};
                const double ymid = triple[1].y;
                if (std::abs(triple[0].y - ymid) > 3.0 ||
                    std::abs(triple[2].y - ymid) > 3.0)
                    continue;
                SubFovMatch match;
                try {
                    match = identify_subfov(triple, mask, tol, geom.pitch_mm);
                } catch (const Error&) {
                    continue;
                }
                const TripletGroup& g = mask.groups[match.index];
                const SunAngles est = angles_from_triple(geom, g, triple);
                const double tx = std::tan(deg2rad(est.beta_deg));
                const double ty = std::tan(deg2rad(est.alpha_deg));
                const double ctx = -t_half + (g.col + 0.5) * cell_tx;
                const double cty = -t_half + (g.row + 0.5) * cell_ty;
                const bool in_cell =
                    std::abs(tx - ctx) <= 0.5 * cell_tx + 1e-9 &&
                    std::abs(ty - cty) <= 0.5 * cell_ty + 1e-9;
                found.push_back({match, est, in_cell});
            }
    if (found.empty())
        throw Error(ErrorCode::Unidentified, "no triple matched the code table");
    std::sort(found.begin(), found.end(), [](const Scored& a, const Scored& b) {
        if (a.in_cell != b.in_cell) return a.in_cell;
        return a.match.score < b.match.score;
    });
    return found.front().angles;
}

std::string to_json(const CodedMask& mask) {
    nlohmann::json j;
    j["rows"] = mask.rows;
    j["cols"] = mask.cols;
    j["base_spacing_mm"] = mask.base_spacing_mm;
    j["step_mm"] = mask.step_mm;
    j["aperture_d_mm"] = mask.aperture_d_mm;
    j["focal_h_mm"] = mask.focal_h_mm;
    j["fov_half_deg"] = mask.fov_half_deg;
    auto& groups = j["groups"];
    for (const auto& g : mask.groups) {
        groups.push_back({{"row", g.row},
                          {"col", g.col},
                          {"d1_mm", g.d1_mm},
                          {"d2_mm", g.d2_mm},
                          {"origin_mm", {g.origin_mm[0], g.origin_mm[1]}}});
    }
    return j.dump(2);
}

CodedMask coded_mask_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("coded mask JSON: ") + e.what());
    }
    CodedMask m;
    m.rows = j.at("rows").get<int>();
    m.cols = j.at("cols").get<int>();
    m.base_spacing_mm = j.at("base_spacing_mm").get<double>();
    m.step_mm = j.at("step_mm").get<double>();
    m.aperture_d_mm = j.at("aperture_d_mm").get<double>();
    m.focal_h_mm = j.at("focal_h_mm").get<double>();
    m.fov_half_deg = j.at("fov_half_deg").get<double>();
    for (const auto& gj : j.at("groups")) {
        TripletGroup g;
        g.row = gj.at("row").get<int>();
        g.col = gj.at("col").get<int>();
        g.d1_mm = gj.at("d1_mm").get<double>();
        g.d2_mm = gj.at("d2_mm").get<double>();
        g.origin_mm = {gj.at("origin_mm")[0].get<double>(),
                       gj.at("origin_mm")[1].get<double>()};
        m.groups.push_back(g);
    }
    return m;
}

} // namespace sunsense::multiplex
