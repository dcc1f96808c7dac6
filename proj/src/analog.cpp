#include "sunsense/analog.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace sunsense::analog {

double current_cosine(const SunVector& normal, const SunVector& sun, double I0,
                      double fov_half_angle_deg, bool in_shadow) {
    if (in_shadow) return 0.0;
    const double c = normal.normalized().dot(sun.normalized());
    if (c < std::cos(deg2rad(fov_half_angle_deg))) return 0.0;
    return I0 * std::max(c, 0.0);
}

double current_kelly(double theta_deg, double alpha_s, double I0, double eta) {
    const double c = std::cos(deg2rad(theta_deg));
    const double poly = -0.369 * c * c * c + 0.637 * c * c + 0.750 * c - 0.015;
    return std::max(alpha_s * I0 * poly + eta, 0.0);
}

SunVector sunvec_temp_compensated(const PhotoCurrents& pc) {
    // Strongest lit face per axis carries that component.
    struct Pick {
        double value = 0.0;
        bool lit = false;
    };
    Pick axis[3];
    for (const auto& f : pc.faces) {
        if (f.current_mA <= 0.0) continue;
        const SunVector n = f.normal.normalized();
        int ax = 0;
        double best = std::abs(n.x);
        if (std::abs(n.y) > best) { ax = 1; best = std::abs(n.y); }
        if (std::abs(n.z) > best) { ax = 2; }
        const double sign = (f.face_id == 'a' || f.face_id == 'c' || f.face_id == 'e')
                                ? 1.0
                                : -1.0;
        const double comp = sign * f.current_mA /
                            (1.0 + pc.temp_coeff * (f.temperature_K - pc.reference_T0_K));
        if (!axis[ax].lit || std::abs(comp) > std::abs(axis[ax].value)) {
            axis[ax].value = comp;
            axis[ax].lit = true;
        }
    }
    int lit = 0;
    for (const auto& p : axis) lit += p.lit ? 1 : 0;
    if (lit < 3)
        throw Error(ErrorCode::InsufficientObservations,
                    "temperature-compensated inverse needs 3 lit faces");
    return SunVector{axis[0].value, axis[1].value, axis[2].value}.normalized();
}

double albedo_voltage(const AlbedoGrid& grid, const SunVector& sensor_normal,
                      const std::array<double, 3>& spacecraft_pos,
                      bool* empty_flag) {
    if (empty_flag) *empty_flag = false;
    if (grid.craft_in_shadow) return 0.0;
    if (grid.cells.empty()) {
        if (empty_flag) *empty_flag = true;
        return 0.0;
    }
    const SunVector n = sensor_normal.normalized();
    const SunVector se = grid.sun_dir.normalized();
    double acc = 0.0;
    for (const auto& c : grid.cells) {
        const double rx = spacecraft_pos[0] - c.position[0];
        const double ry = spacecraft_pos[1] - c.position[1];
        const double rz = spacecraft_pos[2] - c.position[2];
        const double r2 = rx * rx + ry * ry + rz * rz;
        if (r2 <= 0.0) continue;
        const double r = std::sqrt(r2);
        const double sun_term =
            c.normal[0] * se.x + c.normal[1] * se.y + c.normal[2] * se.z;
        const double view_term =
            (c.normal[0] * rx + c.normal[1] * ry + c.normal[2] * rz) / r;
        const double sensor_term = -(n.x * rx + n.y * ry + n.z * rz) / r;
        if (sun_term <= 0.0 || view_term <= 0.0 || sensor_term <= 0.0) continue;
        acc += c.albedo / r2 * sun_term * view_term * sensor_term * c.area;
    }
    return acc / kPi;
}

AlbedoGrid build_cap_grid(double earth_radius, double cap_half_angle_deg,
                          int rings, double albedo, const SunVector& sun_dir) {
    AlbedoGrid grid;
    grid.sun_dir = sun_dir;
    const double cap = deg2rad(cap_half_angle_deg);
    // Rings of equal angular width; sector count scaled by sin to keep
    // cells near-square. Cap axis along +z (spacecraft overhead).
    for (int i = 0; i < rings; ++i) {
        const double th0 = cap * i / rings;
        const double th1 = cap * (i + 1) / rings;
        const double thc = 0.5 * (th0 + th1);
        const int sectors = std::max(1, (int)std::ceil(2.0 * kPi * std::sin(thc) /
                                                       (th1 - th0)));
        const double ring_area =
            2.0 * kPi * earth_radius * earth_radius * (std::cos(th0) - std::cos(th1));
        for (int k = 0; k < sectors; ++k) {
            const double ph = 2.0 * kPi * (k + 0.5) / sectors;
            AlbedoCell cell;
            cell.normal = {std::sin(thc) * std::cos(ph), std::sin(thc) * std::sin(ph),
                           std::cos(thc)};
            cell.position = {earth_radius * cell.normal[0],
                             earth_radius * cell.normal[1],
                             earth_radius * cell.normal[2]};
            cell.area = ring_area / sectors;
            cell.albedo = albedo;
            grid.cells.push_back(cell);
        }
    }
    return grid;
}

SunVector fuse_basic(const FaceCurrents& I) {
    const double ax = std::max(I[0], I[1]);
    const double ay = std::max(I[2], I[3]);
    const double az = std::max(I[4], I[5]);
    if (ax <= 0.0 && ay <= 0.0 && az <= 0.0)
        throw Error(ErrorCode::NoSun, "all face currents are zero");
    const double sx = I[0] >= I[1] ? ax : -ax;
    const double sy = I[2] >= I[3] ? ay : -ay;
    const double sz = I[4] >= I[5] ? az : -az;
    return SunVector{sx, sy, sz}.normalized();
}

SunVector fuse_solar_panel(std::span<const PanelReading> panels, double I0) {
    if (I0 <= 0.0)
        throw Error(ErrorCode::ValidationError, "reference current must be positive");
    double sx = 0.0, sy = 0.0, sz = 0.0, denom = 0.0;
    for (const auto& p : panels) {
        if (p.current_mA <= 0.0) continue;
        const SunVector n = p.normal.normalized();
        sx += n.x * p.current_mA * I0;
        sy += n.y * p.current_mA * I0;
        sz += n.z * p.current_mA * I0;
        denom += p.current_mA * p.current_mA;
    }
    if (denom <= 0.0)
        throw Error(ErrorCode::NoSun, "no lit panel");
    return SunVector{sx / denom, sy / denom, sz / denom}.normalized();
}

void PyramidSpec::validate() const {
    if (face_count < 3 || (int)azimuths_deg.size() != face_count)
        throw Error(ErrorCode::ValidationError, "pyramid needs M >= 3 azimuths");
    for (size_t i = 0; i < azimuths_deg.size(); ++i)
        for (size_t j = i + 1; j < azimuths_deg.size(); ++j) {
            double d = std::fmod(std::abs(azimuths_deg[i] - azimuths_deg[j]), 360.0);
            if (std::min(d, 360.0 - d) < 1e-9)
                throw Error(ErrorCode::ValidationError, "pyramid azimuths must be distinct");
        }
}

SunVector fuse_pyramid(const PyramidSpec& spec, std::span<const double> e) {
    spec.validate();
    if (e.size() != static_cast<size_t>(spec.face_count))
        throw Error(ErrorCode::ValidationError, "measurement vector size != M");
    const double g = deg2rad(spec.elevation_deg);
    const int M = spec.face_count;
    Eigen::VectorXd bx(M), by(M), bz(M), ev(M);
    for (int i = 0; i < M; ++i) {
        const double a = deg2rad(spec.azimuths_deg[i]);
        bx(i) = std::sin(a) * std::cos(g);
        by(i) = std::cos(a) * std::cos(g);
        bz(i) = std::sin(g);
        ev(i) = e[i];
    }
    const double nx = bx.squaredNorm(), ny = by.squaredNorm(), nz = bz.squaredNorm();
    if (nx < 1e-12 || ny < 1e-12 || nz < 1e-12)
        throw Error(ErrorCode::DegenerateGeometry, "pyramid basis is rank-deficient");
    const double sx = spec.xi * bx.dot(ev) / nx;
    const double sy = spec.xi * by.dot(ev) / ny;
    const double sz = spec.xi * bz.dot(ev) / nz;
    return SunVector{sx, sy, sz}.normalized();
}

SunVector fuse_panoramic(std::span<const PanoramicCell> cells,
                         const PanoramicConfig& cfg) {
    std::vector<int> keep;
    // First pass rough direction to apply the large-incidence exclusion.
    SunVector rough{0, 0, 0};
    for (const auto& c : cells)
        if (c.I_ph > 0.0) {
            const SunVector n = c.install.normalized();
            rough.x += n.x * c.I_ph;
            rough.y += n.y * c.I_ph;
            rough.z += n.z * c.I_ph;
        }
    const bool have_rough = rough.norm() > 0.0;
    const double cos_excl = std::cos(deg2rad(cfg.exclusion_angle_deg));
    for (size_t i = 0; i < cells.size(); ++i) {
        if (cells[i].I_ph <= 0.0) continue;
        if (have_rough) {
            const double c =
                cells[i].install.normalized().dot(rough.normalized());
            if (c < cos_excl) continue;
        }
        keep.push_back((int)i);
    }
    if (keep.size() < 3)
        throw Error(ErrorCode::InsufficientObservations,
                    "panoramic fusion needs >= 3 usable cells");

    Eigen::MatrixXd A(keep.size(), 3);
    Eigen::VectorXd m(keep.size());
    Eigen::VectorXd w(keep.size());
    for (size_t r = 0; r < keep.size(); ++r) {
        const auto& c = cells[keep[r]];
        const SunVector n = c.install.normalized();
        A(r, 0) = n.x;
        A(r, 1) = n.y;
        A(r, 2) = n.z;
        const double denom =
            cfg.I_max_T0 - cfg.K_temp * (c.temperature_K - cfg.T0_K);
        if (denom <= 0.0)
            throw Error(ErrorCode::ValidationError, "temperature model denominator <= 0");
        m(r) = c.I_ph / denom;
        double wi = c.weight;
        if (cfg.cos2_weights && have_rough) {
            const double cc = std::max(n.dot(rough.normalized()), 0.0);
            wi *= cc * cc;
        }
        w(r) = wi;
    }
    const Eigen::Matrix3d AtWA = A.transpose() * w.asDiagonal() * A;
    // Rank test on the weighted normal matrix.
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(AtWA);
    if (es.eigenvalues()(0) < 1e-12 * std::max(es.eigenvalues()(2), 1e-300))
        throw Error(ErrorCode::DegenerateGeometry, "A'WA is singular");
    const Eigen::Vector3d s = AtWA.ldlt().solve(A.transpose() * (w.asDiagonal() * m));
    return SunVector{s(0), s(1), s(2)}.normalized();
}

int SaieAux::problem_type() const {
    int overlaps = 0;
    for (auto f : faces)
        if (f == FaceLight::Both) ++overlaps;
    return overlaps;
}

SunVector AlbedoMitigateResult::sun_vector() const {
    return SunVector{s[0], s[1], s[2]}.normalized();
}

AlbedoMitigateResult albedo_mitigate(const FaceCurrents& I, AlbedoMode mode,
                                     const SaieAux& aux) {
    AlbedoMitigateResult out;
    switch (mode) {
        case AlbedoMode::MaxCurrents: {
            if (std::max({I[0], I[1], I[2], I[3], I[4], I[5]}) <= 0.0)
                throw Error(ErrorCode::NoSun, "all face currents are zero");
            out.s = {std::max(I[0], I[1]) * (I[0] >= I[1] ? 1.0 : -1.0),
                     std::max(I[2], I[3]) * (I[2] >= I[3] ? 1.0 : -1.0),
                     std::max(I[4], I[5]) * (I[4] >= I[5] ? 1.0 : -1.0)};
            return out;
        }
        case AlbedoMode::Sse:
            out.s = {I[0] - I[1], I[2] - I[3], I[4] - I[5]};
            return out;
        case AlbedoMode::Saie:
            break;
    }

    const int type = aux.problem_type();
    if (type >= 3)
        throw Error(ErrorCode::NoSolution, "SAIE Type 3: no solution exists");
    if (type == 2)
        throw Error(ErrorCode::Unsupported,
                    "SAIE Type 2 needs a magnetometer cone (out of scope)");

    // Axis pairs: (+x,-x), (+y,-y), (+z,-z); sign from the face side.
    double s_known_sq = 0.0;
    int both_axis = -1;
    double both_sign = 1.0;
    for (int ax = 0; ax < 3; ++ax) {
        const int ip = 2 * ax, in = 2 * ax + 1;
        const FaceLight lp = aux.faces[ip], ln = aux.faces[in];
        if (lp == FaceLight::Sun) {
            out.s[ax] = I[ip];
            s_known_sq += I[ip] * I[ip];
        } else if (ln == FaceLight::Sun) {
            out.s[ax] = -I[in];
            s_known_sq += I[in] * I[in];
        }
        if (lp == FaceLight::Albedo) out.a[ax] = I[ip];
        else if (ln == FaceLight::Albedo) out.a[ax] = -I[in];
        if (lp == FaceLight::Both) { both_axis = ax; both_sign = 1.0; }
        else if (ln == FaceLight::Both) { both_axis = ax; both_sign = -1.0; }
    }
    if (type == 1 && both_axis >= 0) {
        // Unit-norm completion for the overlapped axis.
        const double rem = 1.0 - s_known_sq;
        if (rem < 0.0)
            throw Error(ErrorCode::NoSolution, "SAIE: known components exceed unit norm");
        out.s[both_axis] = both_sign * std::sqrt(rem);
        const int face = 2 * both_axis + (both_sign > 0 ? 0 : 1);
        out.a[both_axis] = both_sign * (I[face] - std::sqrt(rem));
    }
    return out;
}

std::vector<FaceReading> load_photocurrents_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::IoError, "cannot open " + path);
    std::vector<FaceReading> out;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (header) {
            if (line.rfind("face,nx,ny,nz,current_mA,temp_K", 0) != 0)
                throw Error(ErrorCode::ParseError,
                            path + ": expected header 'face,nx,ny,nz,current_mA,temp_K'");
            header = false;
            continue;
        }
        FaceReading f;
        char face = 0;
        double nx, ny, nz;
        if (std::sscanf(line.c_str(), "%c,%lf,%lf,%lf,%lf,%lf", &face, &nx, &ny,
                        &nz, &f.current_mA, &f.temperature_K) != 6)
            throw Error(ErrorCode::ParseError, path + ": bad row: " + line);
        f.face_id = face;
        f.normal = SunVector{nx, ny, nz};
        out.push_back(f);
    }
    return out;
}

void save_photocurrents_csv(std::span<const FaceReading> faces,
                            const std::string& path) {
    std::ofstream out(path);
    if (!out)
        throw Error(ErrorCode::IoError, "cannot write " + path);
    out << "face,nx,ny,nz,current_mA,temp_K\n";
    char buf[160];
    for (const auto& f : faces) {
        std::snprintf(buf, sizeof buf, "%c,%.9g,%.9g,%.9g,%.9g,%.9g\n", f.face_id,
                      f.normal.x, f.normal.y, f.normal.z, f.current_mA,
                      f.temperature_K);
        out << buf;
    }
}

std::string albedo_grid_to_json(const AlbedoGrid& grid) {
    nlohmann::json j;
    j["sun_dir"] = {grid.sun_dir.x, grid.sun_dir.y, grid.sun_dir.z};
    j["craft_in_shadow"] = grid.craft_in_shadow;
    auto& cells = j["cells"];
    cells = nlohmann::json::array();
    for (const auto& c : grid.cells)
        cells.push_back({{"position", c.position},
                         {"area", c.area},
                         {"albedo", c.albedo},
                         {"normal", c.normal}});
    return j.dump();
}

AlbedoGrid albedo_grid_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("albedo grid JSON: ") + e.what());
    }
    AlbedoGrid g;
    g.sun_dir = {j.at("sun_dir")[0].get<double>(), j.at("sun_dir")[1].get<double>(),
                 j.at("sun_dir")[2].get<double>()};
    g.craft_in_shadow = j.value("craft_in_shadow", false);
    for (const auto& cj : j.at("cells")) {
        AlbedoCell c;
        c.position = cj.at("position").get<std::array<double, 3>>();
        c.area = cj.at("area").get<double>();
        c.albedo = cj.at("albedo").get<double>();
        c.normal = cj.at("normal").get<std::array<double, 3>>();
        if (c.albedo < 0.0 || c.albedo > 1.0)
            throw Error(ErrorCode::ValidationError, "albedo must lie in [0, 1]");
        g.cells.push_back(c);
    }
    return g;
}

} // namespace sunsense::analog
