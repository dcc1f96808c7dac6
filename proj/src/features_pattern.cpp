#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "sunsense/features.hpp"

namespace sunsense::features {

namespace {

Image gaussian_blur(const Image& img, double sigma) {
    if (sigma <= 0.0) return img;
    const int rad = std::max(1, (int)std::ceil(3.0 * sigma));
    std::vector<double> k(2 * rad + 1);
    double sum = 0.0;
    for (int i = -rad; i <= rad; ++i) {
        k[i + rad] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[i + rad];
    }
    for (double& v : k) v /= sum;

    Image tmp = img, out = img;
    for (int j = 0; j < img.height; ++j)
        for (int i = 0; i < img.width; ++i) {
            double acc = 0.0;
            for (int d = -rad; d <= rad; ++d) {
                const int x = std::clamp(i + d, 0, img.width - 1);
                acc += k[d + rad] * img.at(x, j);
            }
            tmp.at(i, j) = acc;
        }
    for (int j = 0; j < img.height; ++j)
        for (int i = 0; i < img.width; ++i) {
            double acc = 0.0;
            for (int d = -rad; d <= rad; ++d) {
                const int y = std::clamp(j + d, 0, img.height - 1);
                acc += k[d + rad] * tmp.at(i, y);
            }
            out.at(i, j) = acc;
        }
    return out;
}

struct Components {
    std::vector<int> label; // -1 background of the predicate
    int count = 0;
    std::vector<int> sizes;
    std::vector<bool> touches_border;
};

template <typename Pred>
Components connected_components(const Image& img, Pred inside) {
    Components c;
    c.label.assign(img.data.size(), -1);
    std::vector<size_t> stack;
    for (size_t p = 0; p < img.data.size(); ++p) {
        if (!inside(img.data[p]) || c.label[p] >= 0) continue;
        const int id = c.count++;
        c.sizes.push_back(0);
        c.touches_border.push_back(false);
        stack.push_back(p);
        c.label[p] = id;
        while (!stack.empty()) {
            const size_t q = stack.back();
            stack.pop_back();
            const int x = (int)(q % img.width), y = (int)(q / img.width);
            c.sizes[id] += 1;
            if (x == 0 || y == 0 || x == img.width - 1 || y == img.height - 1)
                c.touches_border[id] = true;
            const int nx[4] = {x - 1, x + 1, x, x};
            const int ny[4] = {y, y, y - 1, y + 1};
            for (int k = 0; k < 4; ++k) {
                if (!img.in_bounds(nx[k], ny[k])) continue;
                const size_t np = (size_t)ny[k] * img.width + nx[k];
                if (inside(img.data[np]) && c.label[np] < 0) {
                    c.label[np] = id;
                    stack.push_back(np);
                }
            }
        }
    }
    return c;
}

} // namespace

// ---------------------------------------------------------------- BSCM ----

Centroid bscm(const Image& img, int loops_f, double alpha,
              const BscmOptions& opts) {
    if (loops_f < 1)
        throw Error(ErrorCode::ValidationError, "loop count must be >= 1");
    const Image blurred = gaussian_blur(img, opts.blur_sigma_px);
    double peak = 0.0;
    for (double v : blurred.data) peak = std::max(peak, v);
    const double base_threshold = peak - alpha;

    struct Candidate {
        double x, y, radius;
        bool survivor = false;
    };
    std::vector<Candidate> accumulated, previous;

    for (int f = loops_f; f >= 1; --f) {
        const double th = base_threshold + f;
        const auto mask = connected_components(
            blurred, [&](double v) { return v > th; });
        if (mask.count == 0) continue;
        int biggest = 0;
        for (int id = 1; id < mask.count; ++id)
            if (mask.sizes[id] > mask.sizes[biggest]) biggest = id;

        // Dark segments enclosed by the blob: components of the complement
        // that touch neither the image border nor any foreign blob.
        const auto holes = connected_components(
            blurred, [&](double v) { return v <= th; });
        std::vector<bool> hole_ok(holes.count, true);
        std::vector<std::vector<size_t>> hole_pixels(holes.count);
        for (size_t p = 0; p < blurred.data.size(); ++p)
            if (holes.label[p] >= 0) hole_pixels[holes.label[p]].push_back(p);
        for (int id = 0; id < holes.count; ++id)
            if (holes.touches_border[id]) hole_ok[id] = false;
        // Adjacency check: a hole inside the biggest blob touches only it.
        for (size_t p = 0; p < blurred.data.size(); ++p) {
            const int hid = holes.label[p];
            if (hid < 0 || !hole_ok[hid]) continue;
            const int x = (int)(p % blurred.width), y = (int)(p / blurred.width);
            const int nx[4] = {x - 1, x + 1, x, x};
            const int ny[4] = {y, y, y - 1, y + 1};
            for (int k = 0; k < 4; ++k) {
                if (!blurred.in_bounds(nx[k], ny[k])) continue;
                const size_t np = (size_t)ny[k] * blurred.width + nx[k];
                const int mid = mask.label[np];
                if (mid >= 0 && mid != biggest) hole_ok[hid] = false;
            }
        }

        // Deepest point of each enclosed hole: multi-source BFS distance
        // from the bright rim. The distance is the candidate radius.
        std::vector<Candidate> current;
        for (int hid = 0; hid < holes.count; ++hid) {
            if (!hole_ok[hid] || hole_pixels[hid].empty()) continue;
            std::map<size_t, int> dist;
            std::vector<size_t> frontier;
            for (size_t p : hole_pixels[hid]) {
                const int x = (int)(p % blurred.width), y = (int)(p / blurred.width);
                const int nx[4] = {x - 1, x + 1, x, x};
                const int ny[4] = {y, y, y - 1, y + 1};
                for (int k = 0; k < 4; ++k)
                    if (blurred.in_bounds(nx[k], ny[k]) &&
                        mask.label[(size_t)ny[k] * blurred.width + nx[k]] >= 0) {
                        dist[p] = 1;
                        frontier.push_back(p);
                        break;
                    }
            }
            int level = 1;
            while (!frontier.empty()) {
                std::vector<size_t> next;
                for (size_t p : frontier) {
                    const int x = (int)(p % blurred.width), y = (int)(p / blurred.width);
                    const int nx[4] = {x - 1, x + 1, x, x};
                    const int ny[4] = {y, y, y - 1, y + 1};
                    for (int k = 0; k < 4; ++k) {
                        if (!blurred.in_bounds(nx[k], ny[k])) continue;
                        const size_t np = (size_t)ny[k] * blurred.width + nx[k];
                        if (holes.label[np] == hid && !dist.count(np)) {
                            dist[np] = level + 1;
                            next.push_back(np);
                        }
                    }
                }
                frontier = std::move(next);
                ++level;
            }
            int maxd = 0;
            for (const auto& [p, d] : dist) maxd = std::max(maxd, d);
            if (maxd == 0) continue;
            // Sub-pixel: centroid of the deepest level set.
            double sx = 0, sy = 0, n = 0;
            for (const auto& [p, d] : dist)
                if (d >= maxd) {
                    sx += blurred.coord_x((int)(p % blurred.width));
                    sy += blurred.coord_y((int)(p / blurred.width));
                    n += 1;
                }
            current.push_back({sx / n, sy / n, (double)maxd, false});
        }

        // Survivors persist across iterations within 1.5 px.
        for (auto& c : current) {
            for (const auto& prev : previous)
                if (std::hypot(c.x - prev.x, c.y - prev.y) < 1.5) {
                    c.survivor = true;
                    break;
                }
            accumulated.push_back(c);
        }
        previous = current;
    }

    if (accumulated.empty())
        throw Error(ErrorCode::NoFeature, "no black-sun candidates found");

    const Candidate* best = nullptr;
    for (const auto& c : accumulated)
        if (c.survivor && (!best || c.radius > best->radius)) best = &c;
    if (!best)
        for (const auto& c : accumulated)
            if (!best || c.radius > best->radius) best = &c;
    if (!best || best->radius <= opts.min_radius_px)
        throw Error(ErrorCode::NoFeature, "no candidate above the minimum radius");
    return {best->x, best->y, 1.0, 1, false};
}

// ------------------------------------------------------------- Hough ------

namespace {

struct EdgeMap {
    std::vector<std::pair<double, double>> points; // centered coords
};

EdgeMap edge_points(const Image& img, double sigma_mult) {
    EdgeMap e;
    std::vector<double> mag(img.data.size(), 0.0);
    double max_mag = 0.0;
    for (int j = 1; j + 1 < img.height; ++j)
        for (int i = 1; i + 1 < img.width; ++i) {
            const double gx = 0.5 * (img.at(i + 1, j) - img.at(i - 1, j));
            const double gy = 0.5 * (img.at(i, j + 1) - img.at(i, j - 1));
            const double m = std::hypot(gx, gy);
            mag[(size_t)j * img.width + i] = m;
            max_mag = std::max(max_mag, m);
        }
    if (max_mag <= 0.0) return e;
    // Noise floor from the weak half of the gradient magnitudes.
    std::vector<double> weak;
    for (double m : mag)
        if (m < 0.1 * max_mag) weak.push_back(m);
    double floor_sigma = 0.0;
    if (!weak.empty()) {
        double s2 = 0.0;
        for (double m : weak) s2 += m * m;
        floor_sigma = std::sqrt(s2 / weak.size());
    }
    const double th = std::max(sigma_mult * floor_sigma, 0.05 * max_mag);
    for (int j = 1; j + 1 < img.height; ++j)
        for (int i = 1; i + 1 < img.width; ++i)
            if (mag[(size_t)j * img.width + i] > th)
                e.points.emplace_back(img.coord_x(i), img.coord_y(j));
    return e;
}

} // namespace

std::vector<HoughLine> hough_lines(const Image& img, int tau, int max_lines,
                                   const HoughOptions& opts) {
    const EdgeMap edges = edge_points(img, opts.edge_sigma_mult);
    const double r_max = 0.5 * std::hypot(img.width, img.height) + 1.0;
    const int nr = (int)std::ceil(2.0 * r_max / opts.r_step_px);
    const int nt = (int)std::ceil(180.0 / opts.theta_step_deg);
    std::vector<int> acc((size_t)nr * nt, 0);

    for (const auto& [x, y] : edges.points)
        for (int it = 0; it < nt; ++it) {
            const double th = deg2rad(it * opts.theta_step_deg);
            const double r = x * std::cos(th) + y * std::sin(th);
            const int ir = (int)std::lround((r + r_max) / opts.r_step_px);
            if (ir >= 0 && ir < nr) acc[(size_t)ir * nt + it] += 1;
        }

    struct Cell {
        int votes, ir, it;
    };
    std::vector<Cell> cells;
    for (int ir = 0; ir < nr; ++ir)
        for (int it = 0; it < nt; ++it) {
            const int v = acc[(size_t)ir * nt + it];
            if (v >= tau) cells.push_back({v, ir, it});
        }
    std::sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) {
        if (a.votes != b.votes) return a.votes > b.votes;
        return a.ir != b.ir ? a.ir < b.ir : a.it < b.it;
    });

    // Two (r, theta) cells describe the same line when they match directly
    // or through the (r, theta) ~ (-r, theta +- pi) duality.
    auto same_line = [&](double r1, double th1_deg, double r2, double th2_deg) {
        auto close = [&](double ra, double ta, double rb, double tb) {
            double dth = std::abs(ta - tb);
            dth = std::min(dth, std::abs(dth - 360.0));
            return dth < 10.0 && std::abs(ra - rb) < 5.0 * opts.r_step_px;
        };
        return close(r1, th1_deg, r2, th2_deg) ||
               close(-r1, th1_deg + 180.0, r2, th2_deg) ||
               close(-r1, th1_deg - 180.0, r2, th2_deg);
    };

    std::vector<HoughLine> lines;
    for (const auto& c : cells) {
        const double r_c = c.ir * opts.r_step_px - r_max;
        const double th_c = c.it * opts.theta_step_deg;
        bool dup = false;
        for (const auto& l : lines)
            if (same_line(r_c, th_c, l.r, rad2deg(l.theta))) {
                dup = true;
                break;
            }
        if (dup) continue;
        // Sub-bin refinement: vote-weighted r centroid at the peak theta
        // recovers the band center between the two edge responses.
        double wr = 0.0, wsum = 0.0;
        for (int dr = -3; dr <= 3; ++dr) {
            const int ir = c.ir + dr;
            if (ir < 0 || ir >= nr) continue;
            const double v = acc[(size_t)ir * nt + c.it];
            wr += v * (ir * opts.r_step_px - r_max);
            wsum += v;
        }
        const double r_refined = wsum > 0.0 ? wr / wsum : r_c;
        lines.push_back({r_refined, deg2rad(th_c), c.votes});
        if ((int)lines.size() >= max_lines) break;
    }
    return lines;
}

SunAngles hough_line_sunvec(std::span<const Image> images,
                            std::span<const CameraModel> cameras, int tau,
                            const HoughOptions& opts) {
    if (images.size() != cameras.size())
        throw Error(ErrorCode::ValidationError, "one camera model per image");
    struct Projected {
        double r, theta;
        double weight;
        size_t image;
    };
    std::vector<Projected> lines;
    for (size_t k = 0; k < images.size(); ++k) {
        const auto found = hough_lines(images[k], tau, 4, opts);
        for (const auto& l : found) {
            // Rotation about the boresight maps (r, theta) -> (r, theta + rot)
            // in the common frame; principal offsets shift r.
            const double rot = deg2rad(cameras[k].rotation_deg);
            const double th = l.theta + rot;
            const double r = l.r - cameras[k].px * std::cos(th) -
                             cameras[k].py * std::sin(th);
            lines.push_back({r, th, (double)l.votes, k});
        }
    }
    if (lines.size() < 2)
        throw Error(ErrorCode::InsufficientLines,
                    "need at least two blooming lines");

    double sx = 0, sy = 0, sw = 0;
    for (size_t a = 0; a < lines.size(); ++a)
        for (size_t b = a + 1; b < lines.size(); ++b) {
            const double t1 = lines[a].theta, t2 = lines[b].theta;
            double dth = std::abs(rad2deg(t1 - t2));
            dth = std::fmod(dth, 180.0);
            dth = std::min(dth, 180.0 - dth);
            if (dth < 1.0) continue; // near-parallel pair excluded
            const double det = std::cos(t1) * std::sin(t2) - std::sin(t1) * std::cos(t2);
            const double x = (lines[a].r * std::sin(t2) - lines[b].r * std::sin(t1)) / det;
            const double y = (lines[b].r * std::cos(t1) - lines[a].r * std::cos(t2)) / det;
            const double w = lines[a].weight * lines[b].weight;
            sx += w * x;
            sy += w * y;
            sw += w;
        }
    if (sw <= 0.0)
        throw Error(ErrorCode::InsufficientLines, "no well-conditioned line pair");
    const double x = sx / sw, y = sy / sw;
    const double f = cameras[0].f_px;
    return {rad2deg(std::atan(y / f)), rad2deg(std::atan(x / f))};
}

HoughCircle hough_circle(const Image& img, int tau, int r_min, int r_max,
                         const HoughOptions& opts) {
    if (r_min < 1 || r_max < r_min)
        throw Error(ErrorCode::ValidationError, "bad radius range");
    const EdgeMap edges = edge_points(img, opts.edge_sigma_mult);
    const int nrad = r_max - r_min + 1;
    std::vector<int> acc(img.data.size() * (size_t)nrad, 0);

    const int nth = 72; // 5-degree vote spacing
    for (const auto& [x, y] : edges.points)
        for (int ri = 0; ri < nrad; ++ri) {
            const double r = r_min + ri;
            for (int it = 0; it < nth; ++it) {
                const double th = 2.0 * kPi * it / nth;
                const double a = x - r * std::cos(th);
                const double b = y - r * std::sin(th);
                const int ia = (int)std::lround(img.col_of_x(a));
                const int ib = (int)std::lround(img.row_of_y(b));
                if (ia >= 0 && ia < img.width && ib >= 0 && ib < img.height)
                    acc[((size_t)ri * img.height + ib) * img.width + ia] += 1;
            }
        }

    int best = -1;
    size_t arg = 0;
    for (size_t i = 0; i < acc.size(); ++i)
        if (acc[i] > best) {
            best = acc[i];
            arg = i;
        }
    if (best < tau)
        throw Error(ErrorCode::NoCircle, "no accumulator cell above threshold");
    const int ia = (int)(arg % img.width);
    const int ib = (int)((arg / img.width) % img.height);
    const int ri = (int)(arg / ((size_t)img.width * img.height));
    return {img.coord_x(ia), img.coord_y(ib), (double)(r_min + ri), best};
}

// -------------------------------------------------------------- FMMS ------

namespace {

// Pixels at or below the dark floor carry no spot information and are
// excluded from the feature space.
double fmms_floor(double quant_max) { return 0.02 * quant_max; }

int quantize_bin(double v, double quant_max, int m) {
    const double lo = fmms_floor(quant_max);
    const int b = (int)std::floor((v - lo) / (quant_max - lo) * m);
    return std::clamp(b, 0, m - 1);
}

std::vector<double> candidate_hist(const Image& img, double cx, double cy,
                                   double h, double quant_max, int m) {
    std::vector<double> p(m, 0.0);
    double norm = 0.0;
    const int i0 = std::max(0, (int)std::floor(img.col_of_x(cx - h)));
    const int i1 = std::min(img.width - 1, (int)std::ceil(img.col_of_x(cx + h)));
    const int j0 = std::max(0, (int)std::floor(img.row_of_y(cy + h)));
    const int j1 = std::min(img.height - 1, (int)std::ceil(img.row_of_y(cy - h)));
    for (int j = j0; j <= j1; ++j)
        for (int i = i0; i <= i1; ++i) {
            if (img.at(i, j) <= fmms_floor(quant_max)) continue;
            const double u = (std::pow(img.coord_x(i) - cx, 2) +
                              std::pow(img.coord_y(j) - cy, 2)) /
                             (h * h);
            if (u >= 1.0) continue;
            const double k = 1.0 - u; // Epanechnikov profile
            p[quantize_bin(img.at(i, j), quant_max, m)] += k;
            norm += k;
        }
    if (norm > 0.0)
        for (double& v : p) v /= norm;
    return p;
}

double bhattacharyya(const std::vector<double>& p, const std::vector<double>& q) {
    double rho = 0.0;
    for (size_t u = 0; u < p.size(); ++u) rho += std::sqrt(p[u] * q[u]);
    return rho;
}

} // namespace

SpotTrackState fmms_init(const Image& frame, std::span<const Centroid> spots,
                         double bandwidth_h, int bins_m) {
    SpotTrackState st;
    st.bins_m = bins_m;
    // Quantize over the observed dynamic range so dim frames still bin.
    st.quant_max = 0.0;
    for (double v : frame.data) st.quant_max = std::max(st.quant_max, v);
    if (st.quant_max <= 0.0) st.quant_max = frame.max_value();
    for (const auto& c : spots) {
        SpotState s;
        s.x = c.x;
        s.y = c.y;
        s.bandwidth_h = bandwidth_h;
        s.goal_hist = candidate_hist(frame, c.x, c.y, bandwidth_h, st.quant_max,
                                     bins_m);
        st.spots.push_back(std::move(s));
    }
    return st;
}

FmmsResult fmms_track(const Image& frame, const SpotTrackState& state,
                      double eps, int max_iterations) {
    FmmsResult res;
    res.state = state;
    double fx = 0, fy = 0, fw = 0;
    int active = 0;

    for (auto& spot : res.state.spots) {
        const double h = spot.bandwidth_h;
        double y0x = spot.x, y0y = spot.y;
        bool lost = false;

        auto shift_from = [&](double cx, double cy, const std::vector<double>& p,
                              double* nx, double* ny) {
            // Mean shift with g = -K' (constant inside the support).
            double sx = 0, sy = 0, sw = 0;
            const int i0 = std::max(0, (int)std::floor(frame.col_of_x(cx - h)));
            const int i1 =
                std::min(frame.width - 1, (int)std::ceil(frame.col_of_x(cx + h)));
            const int j0 = std::max(0, (int)std::floor(frame.row_of_y(cy + h)));
            const int j1 =
                std::min(frame.height - 1, (int)std::ceil(frame.row_of_y(cy - h)));
            for (int j = j0; j <= j1; ++j)
                for (int i = i0; i <= i1; ++i) {
                    if (frame.at(i, j) <= fmms_floor(res.state.quant_max)) continue;
                    const double px = frame.coord_x(i), py = frame.coord_y(j);
                    const double u =
                        ((px - cx) * (px - cx) + (py - cy) * (py - cy)) / (h * h);
                    if (u >= 1.0) continue;
                    const int bin = quantize_bin(frame.at(i, j), res.state.quant_max,
                                                 res.state.bins_m);
                    if (p[bin] <= 0.0) continue;
                    const double w = std::sqrt(spot.goal_hist[bin] / p[bin]);
                    sx += px * w;
                    sy += py * w;
                    sw += w;
                }
            if (sw <= 0.0) return false;
            *nx = sx / sw;
            *ny = sy / sw;
            return true;
        };

        int iter = 0;
        double last_rho = 0.0;
        while (iter < max_iterations) {
            ++iter;
            const auto p0 = candidate_hist(frame, y0x, y0y, h, res.state.quant_max,
                                           res.state.bins_m);
            const double rho0 = bhattacharyya(p0, spot.goal_hist);
            last_rho = rho0;
            double y1x, y1y;
            if (!shift_from(y0x, y0y, p0, &y1x, &y1y)) {
                lost = true;
                break;
            }
            auto p1 = candidate_hist(frame, y1x, y1y, h, res.state.quant_max,
                                     res.state.bins_m);
            double rho1 = bhattacharyya(p1, spot.goal_hist);
            int halvings = 0;
            // Halving rule keeps the Bhattacharyya coefficient non-decreasing.
            while (rho1 < rho0 && halvings < 20) {
                y1x = 0.5 * (y0x + y1x);
                y1y = 0.5 * (y0y + y1y);
                p1 = candidate_hist(frame, y1x, y1y, h, res.state.quant_max,
                                    res.state.bins_m);
                rho1 = bhattacharyya(p1, spot.goal_hist);
                ++halvings;
            }
            const double step = std::hypot(y1x - y0x, y1y - y0y);
            last_rho = rho1;
            y0x = y1x;
            y0y = y1y;
            if (step <= eps) break;
        }
        if (!lost && last_rho < 0.7) lost = true; // collapsed similarity

        Centroid c;
        if (lost) {
            spot.lost = true;
            spot.weight *= 0.5; // uncertain feature downweighted, not fatal
            c = {spot.x, spot.y, 0.0, 0, true};
        } else {
            spot.x = y0x;
            spot.y = y0y;
            spot.lost = false;
            c = {y0x, y0y, 1.0, 1, false};
            fx += spot.weight * y0x;
            fy += spot.weight * y0y;
            fw += spot.weight;
            ++active;
        }
        res.per_spot.push_back(c);
    }

    if (fw > 0.0) {
        res.fused.x = fx / fw;
        res.fused.y = fy / fw;
    }
    res.fused.contributing = active;
    res.fused.confidence =
        res.state.spots.empty()
            ? 0.0
            : (double)active / (double)res.state.spots.size();
    res.fused.flagged = active != (int)res.state.spots.size();
    return res;
}

// ---------------------------------------------------------------- TM ------

Centroid template_match(const Image& img, double spot_radius_px,
                        int candidate_count, double mu) {
    if (candidate_count < 1)
        throw Error(ErrorCode::ValidationError, "need at least one candidate");
    double peak = 0.0;
    for (double v : img.data) peak = std::max(peak, v);
    if (peak <= 0.0)
        throw Error(ErrorCode::DarkInput, "dark image");

    // Brightest pixels become the candidate centroids.
    std::vector<std::pair<double, size_t>> ranked;
    ranked.reserve(img.data.size());
    for (size_t p = 0; p < img.data.size(); ++p)
        ranked.emplace_back(img.data[p], p);
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.first > b.first;
    });
    ranked.resize(std::min<size_t>(candidate_count, ranked.size()));

    // Bi-level measured image.
    const double cut = mu * peak;
    std::vector<char> bi(img.data.size());
    for (size_t p = 0; p < img.data.size(); ++p) bi[p] = img.data[p] > cut ? 1 : 0;

    double best_err = 0.0;
    size_t best_p = ranked[0].second;
    const int rspan = (int)std::ceil(spot_radius_px) + 1;
    bool first = true;
    for (const auto& [v, p] : ranked) {
        const int ci = (int)(p % img.width), cj = (int)(p / img.width);
        // Mismatch between the measured and theoretical bi-level images;
        // outside the template span J = 0, so only set bits contribute.
        double err = 0.0;
        for (size_t q = 0; q < bi.size(); ++q) err += bi[q];
        for (int dj = -rspan; dj <= rspan; ++dj)
            for (int di = -rspan; di <= rspan; ++di) {
                const int x = ci + di, y = cj + dj;
                if (!img.in_bounds(x, y)) continue;
                const bool inside = di * di + dj * dj <= spot_radius_px * spot_radius_px;
                if (!inside) continue;
                const char m = bi[(size_t)y * img.width + x];
                // J = 1 here: replace the m^2 term with (m - 1)^2.
                err += (m ? 0.0 : 1.0) - (m ? 1.0 : 0.0);
            }
        if (first || err < best_err) {
            best_err = err;
            best_p = p;
            first = false;
        }
    }
    return {img.coord_x((int)(best_p % img.width)),
            img.coord_y((int)(best_p / img.width)), 1.0, 1, false};
}

// -------------------------------------------------------------- FEIC ------

FeicResult feic(const Image& frame, std::span<const FeicTemplate> templates,
                double prev_dx, double prev_dy, int nc) {
    if (templates.empty())
        throw Error(ErrorCode::ValidationError, "no templates registered");
    if (nc < 2 || nc % 2 != 0)
        throw Error(ErrorCode::ValidationError, "correlation span must be even and >= 2");

    FeicResult res;
    double num_x = 0.0, num_y = 0.0, den = 0.0;

    for (const auto& t : templates) {
        const int nt = t.patch.width;
        if (t.patch.height != nt)
            throw Error(ErrorCode::ValidationError, "templates must be square");
        const int w = nt + nc; // window side
        // Predictive window center from the previous displacement.
        const int xs = (int)std::floor(prev_dx + t.cx + 0.5);
        const int ys = (int)std::floor(prev_dy + t.cy + 0.5);
        const int ci = (int)std::lround(frame.col_of_x(xs));
        const int cj = (int)std::lround(frame.row_of_y(ys));
        const int x0 = ci - w / 2, y0 = cj - w / 2;
        if (x0 < 0 || y0 < 0 || x0 + w > frame.width || y0 + w > frame.height) {
            res.spots_dropped += 1; // window clipped by the border
            continue;
        }

        // Correlation matrix over (nc+1)^2 offsets.
        double local_num_x = 0.0, local_num_y = 0.0, local_den = 0.0;
        for (int n = 0; n <= nc; ++n)
            for (int m = 0; m <= nc; ++m) {
                double c = 0.0;
                for (int j = 0; j < nt; ++j)
                    for (int i = 0; i < nt; ++i)
                        c += frame.at(x0 + m + i, y0 + n + j) * t.patch.at(i, j);
                // Offset m - nc/2 shifts in +x; rows run down, so n flips.
                local_num_x += c * (m - nc / 2);
                local_num_y += c * (n - nc / 2);
                local_den += c;
            }
        // Fold the per-spot integer window shift into the moment so the
        // summed-correlation centroid stays exact under rounding.
        const double shift_x = xs - t.cx;
        const double shift_y = ys - t.cy;
        num_x += local_num_x + local_den * shift_x;
        num_y += -local_num_y + local_den * shift_y;
        den += local_den;
        res.spots_used += 1;
    }

    if (res.spots_used == 0 || den <= 0.0)
        throw Error(ErrorCode::DarkInput, "no usable correlation window");
    res.dx = num_x / den;
    res.dy = num_y / den;
    return res;
}

// --------------------------------------------------------------- PPE ------

double PpeModel::eval(double u) const {
    const double u2 = u * u, u4 = u2 * u2;
    return (c[0] * u4 + c[1] * u2 + c[2]) / (c[3] * u4 + c[4] * u2 + c[5]);
}

double PpeModel::deriv(double u) const {
    const double u2 = u * u, u4 = u2 * u2;
    const double n = c[0] * u4 + c[1] * u2 + c[2];
    const double d = c[3] * u4 + c[4] * u2 + c[5];
    const double dn = 4.0 * c[0] * u2 * u + 2.0 * c[1] * u;
    const double dd = 4.0 * c[3] * u2 * u + 2.0 * c[4] * u;
    return (dn * d - n * dd) / (d * d);
}

PpeModel ppe_fit_model(std::span<const double> u, std::span<const double> intensity) {
    if (u.size() != intensity.size() || u.size() < 6)
        throw Error(ErrorCode::ValidationError, "need >= 6 samples of one peak");
    // Linearized fit with c6 = 1:  c1 u^4 + c2 u^2 + c3 - I (c4 u^4 + c5 u^2) = I.
    Eigen::MatrixXd A(u.size(), 5);
    Eigen::VectorXd b(u.size());
    for (size_t r = 0; r < u.size(); ++r) {
        const double u2 = u[r] * u[r], u4 = u2 * u2;
        A(r, 0) = u4;
        A(r, 1) = u2;
        A(r, 2) = 1.0;
        A(r, 3) = -intensity[r] * u4;
        A(r, 4) = -intensity[r] * u2;
        b(r) = intensity[r];
    }
    const Eigen::VectorXd x = A.colPivHouseholderQr().solve(b);
    PpeModel m;
    m.c = {x(0), x(1), x(2), x(3), x(4), 1.0};
    return m;
}

namespace {

/// Full width at half maximum of the profile model, in samples.
double model_fwhm(const PpeModel& m) {
    const double half = 0.5 * m.eval(0.0);
    double lo = 0.0, hi = 1.0;
    while (m.eval(hi) > half && hi < 1e4) hi *= 2.0;
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        (m.eval(mid) > half ? lo : hi) = mid;
    }
    return 2.0 * lo;
}

} // namespace

PpeResult ppe_fit(const Image& profile, const PpeModel& model, double lx_mm,
                  double ly_mm, double dx_mm, const PpeOptions& opts) {
    if (profile.height != 1)
        throw Error(ErrorCode::ValidationError, "PPE expects a 1xN profile");
    double peak = 0.0;
    for (double v : profile.data) peak = std::max(peak, v);
    if (peak <= 0.0)
        throw Error(ErrorCode::DarkInput, "dark profile");
    const int n = profile.width;
    const double sx = 2.0 * lx_mm / dx_mm; // x-pair separation, samples
    const double sy = 2.0 * ly_mm / dx_mm;

    // Initial displacements by pattern-matched correlation of each pair.
    auto pair_argmax = [&](double sep) {
        double best = -1.0;
        int arg = 0;
        for (int i = 0; i < n; ++i) {
            const int k = i + (int)std::lround(sep);
            const double partner = (k >= 0 && k < n) ? profile.at(k, 0) : 0.0;
            const double score = std::min(profile.at(i, 0), partner);
            if (score > best) {
                best = score;
                arg = i;
            }
        }
        return (double)arg;
    };

    Eigen::VectorXd lambda(6);
    lambda << 1.0, 1.0, 1.0, 1.0, pair_argmax(sx), pair_argmax(sy);

    // Amplitudes from a linear pre-fit at the initial positions.
    {
        Eigen::MatrixXd A(n, 4);
        Eigen::VectorXd b(n);
        for (int i = 0; i < n; ++i) {
            A(i, 0) = model.eval(i - lambda(4));
            A(i, 1) = model.eval(i - lambda(4) - sx);
            A(i, 2) = model.eval(i - lambda(5));
            A(i, 3) = model.eval(i - lambda(5) - sy);
            b(i) = profile.at(i, 0);
        }
        const Eigen::VectorXd amp = A.colPivHouseholderQr().solve(b);
        for (int k = 0; k < 4; ++k) lambda(k) = amp(k);
    }

    // Overlap classification by predicted separation below one FWHM.
    int type = 0;
    if (opts.forced_type) {
        type = *opts.forced_type;
    } else {
        const double fwhm = model_fwhm(model);
        const double pa = lambda(4), pb = lambda(4) + sx;
        const double pc = lambda(5), pd = lambda(5) + sy;
        if (std::abs(pa - pc) < fwhm) type = 1;
        else if (std::abs(pb - pc) < fwhm) type = 2;
        else if (std::abs(pa - pd) < fwhm) type = 3;
        else if (std::abs(pb - pd) < fwhm) type = 4;
    }

    PpeResult res;
    res.image_type = type;

    for (int iter = 1; iter <= opts.max_iterations; ++iter) {
        res.iterations = iter;
        Eigen::VectorXd a(n), bb(n), cc(n), dd(n), e(n), f(n), g(n), h(n), r(n);
        for (int i = 0; i < n; ++i) {
            const double ua = i - lambda(4);
            const double ub = i - lambda(4) - sx;
            const double uc = i - lambda(5);
            const double ud = i - lambda(5) - sy;
            a(i) = model.eval(ua);
            bb(i) = model.eval(ub);
            cc(i) = model.eval(uc);
            dd(i) = model.eval(ud);
            e(i) = -model.deriv(ua); // d/d m_x of model(i - m_x)
            f(i) = -model.deriv(ub);
            g(i) = -model.deriv(uc);
            h(i) = -model.deriv(ud);
            r(i) = profile.at(i, 0) - (lambda(0) * a(i) + lambda(1) * bb(i) +
                                       lambda(2) * cc(i) + lambda(3) * dd(i));
        }
        const Eigen::VectorXd col_mx = lambda(0) * e + lambda(1) * f;
        const Eigen::VectorXd col_my = lambda(2) * g + lambda(3) * h;

        // Q columns per overlap case; merged amplitude columns share one
        // update entry.
        std::vector<Eigen::VectorXd> cols;
        std::vector<std::vector<int>> target; // lambda indices per column
        switch (type) {
            case 1:
                cols = {a + cc, bb, dd, col_mx, col_my};
                target = {{0, 2}, {1}, {3}, {4}, {5}};
                break;
            case 2:
                cols = {a, bb + cc, dd, col_mx, col_my};
                target = {{0}, {1, 2}, {3}, {4}, {5}};
                break;
            case 3:
                cols = {a + dd, bb, cc, col_mx, col_my};
                target = {{0, 3}, {1}, {2}, {4}, {5}};
                break;
            case 4:
                cols = {a, bb + dd, cc, col_mx, col_my};
                target = {{0}, {1, 3}, {2}, {4}, {5}};
                break;
            default:
                cols = {a, bb, cc, dd, col_mx, col_my};
                target = {{0}, {1}, {2}, {3}, {4}, {5}};
                break;
        }
        Eigen::MatrixXd Q(n, cols.size());
        for (size_t c = 0; c < cols.size(); ++c) Q.col(c) = cols[c];

        Eigen::MatrixXd S = Q.transpose() * Q;
        const Eigen::VectorXd rhs = Q.transpose() * r;
        // Damped solve: overlapping peaks can momentarily collapse the
        // displacement columns; escalate damping until the step is finite.
        Eigen::VectorXd dl;
        bool solved = false;
        double damping = 0.0;
        const double scale = std::max(S.diagonal().maxCoeff(), 1e-300);
        for (int attempt = 0; attempt < 8; ++attempt) {
            Eigen::MatrixXd Sd = S;
            if (damping > 0.0)
                Sd += damping * scale * Eigen::MatrixXd::Identity(S.rows(), S.cols());
            const Eigen::LDLT<Eigen::MatrixXd> ldlt(Sd);
            if (ldlt.info() == Eigen::Success) {
                dl = ldlt.solve(rhs);
                if (dl.allFinite()) {
                    solved = true;
                    break;
                }
            }
            damping = damping == 0.0 ? 1e-10 : damping * 100.0;
        }
        if (!solved)
            throw Error(ErrorCode::IllConditioned, "normal matrix S is singular");

        double rel = 0.0;
        for (size_t c = 0; c < target.size(); ++c)
            for (int idx : target[c]) {
                lambda(idx) += dl(c);
                rel = std::max(rel,
                               std::abs(dl(c)) / std::max(std::abs(lambda(idx)), 1e-12));
            }
        if (rel < opts.tol) {
            res.converged = true;
            break;
        }
    }

    if (!res.converged) {
        std::ostringstream os;
        os << "PPE did not converge; last lambda = [";
        for (int k = 0; k < 6; ++k) os << lambda(k) << (k < 5 ? ", " : "]");
        throw Error(ErrorCode::MaxIterations, os.str());
    }

    res.mx = lambda(4);
    res.my = lambda(5);
    res.amplitudes = {lambda(0), lambda(1), lambda(2), lambda(3)};
    return res;
}

} // namespace sunsense::features
