#include "sunsense/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sunsense::features {

namespace {

double image_max(const Image& img) {
    double m = 0.0;
    for (double v : img.data) m = std::max(m, v);
    return m;
}

/// Threshold subtraction I' = I - mu * I_max with zero clamp.
Image threshold_subtract(const Image& img, double mu) {
    if (mu < 0.0 || mu >= 1.0)
        throw Error(ErrorCode::ValidationError, "threshold fraction must be in [0, 1)");
    Image out = img;
    const double cut = mu * image_max(img);
    for (double& v : out.data) v = std::max(0.0, v - cut);
    return out;
}

Image mean3x3(const Image& img) {
    Image out = img;
    for (int j = 0; j < img.height; ++j)
        for (int i = 0; i < img.width; ++i) {
            double acc = 0.0;
            for (int dj = -1; dj <= 1; ++dj)
                for (int di = -1; di <= 1; ++di) {
                    const int x = i + di, y = j + dj;
                    if (img.in_bounds(x, y)) acc += img.at(x, y);
                    // out-of-range neighbors contribute zero
                }
            out.at(i, j) = acc / 9.0;
        }
    return out;
}

Centroid moments_over(const Image& img, int x0, int y0, int x1, int y1) {
    double m = 0.0, sx = 0.0, sy = 0.0;
    for (int j = y0; j <= y1; ++j)
        for (int i = x0; i <= x1; ++i) {
            const double v = img.at(i, j);
            m += v;
            sx += v * img.coord_x(i);
            sy += v * img.coord_y(j);
        }
    if (m <= 0.0)
        throw Error(ErrorCode::DarkInput, "no intensity left after preprocessing");
    return {sx / m, sy / m, 1.0, 1, false};
}

} // namespace

BalancePair voltage_balance(double q1, double q2, double q3, double q4) {
    const double sum = q1 + q2 + q3 + q4;
    if (sum <= 0.0)
        throw Error(ErrorCode::DarkInput, "quadrant sum is zero");
    return {(q2 + q3 - q1 - q4) / sum, (q1 + q2 - q3 - q4) / sum};
}

double balance_max_tangent(double aperture_d_mm, double focal_h_mm) {
    return aperture_d_mm / (2.0 * focal_h_mm);
}

double balance_to_angle_deg(double balance, double aperture_d_mm, double focal_h_mm) {
    return rad2deg(std::atan(balance * balance_max_tangent(aperture_d_mm, focal_h_mm)));
}

Centroid peak_detect(const Image& img,
                     std::span<const std::array<int, 2>> pattern_offsets) {
    if (img.data.empty())
        throw Error(ErrorCode::ValidationError, "empty image");

    double best = -1.0;
    int best_i = 0, best_j = 0;
    bool tie = false;
    for (int j = 0; j < img.height; ++j)
        for (int i = 0; i < img.width; ++i) {
            double score;
            if (pattern_offsets.empty()) {
                score = img.at(i, j);
            } else {
                // Maxi-min over the pattern: the anchor must light every
                // offset, so a lone bright outlier cannot win.
                score = std::numeric_limits<double>::max();
                for (const auto& d : pattern_offsets) {
                    const int x = i + d[0], y = j + d[1];
                    score = std::min(score, img.in_bounds(x, y) ? img.at(x, y) : 0.0);
                }
            }
            if (score > best) {
                best = score;
                best_i = i;
                best_j = j;
                tie = false;
            } else if (score == best) {
                tie = true; // lowest linear index retained
            }
        }
    if (tie && pattern_offsets.empty()) {
        bool flat = true;
        for (double v : img.data)
            if (v != best) {
                flat = false;
                break;
            }
        if (flat)
            throw Error(ErrorCode::AmbiguousPeak, "flat image has no unique peak");
    }
    return {img.coord_x(best_i), img.coord_y(best_j), 1.0, 1, tie};
}

Centroid moment_centroid(const Image& img, Preprocess pre, double mu) {
    switch (pre) {
        case Preprocess::None:
            return moments_over(img, 0, 0, img.width - 1, img.height - 1);
        case Preprocess::Threshold: {
            const Image t = threshold_subtract(img, mu);
            return moments_over(t, 0, 0, t.width - 1, t.height - 1);
        }
        case Preprocess::Mean3x3: {
            const Image f = mean3x3(img);
            return moments_over(f, 0, 0, f.width - 1, f.height - 1);
        }
    }
    throw Error(ErrorCode::ValidationError, "unknown preprocess mode");
}

McamResult mcam(const Image& img, std::span<const Rect> aperture_regions,
                double mu) {
    if (aperture_regions.empty())
        throw Error(ErrorCode::ValidationError, "no aperture regions");
    const Image t = threshold_subtract(img, mu);
    McamResult res;
    res.regions_total = static_cast<int>(aperture_regions.size());
    double ax = 0.0, ay = 0.0;
    for (const auto& r : aperture_regions) {
        const int x1 = r.x0 + r.width - 1, y1 = r.y0 + r.height - 1;
        if (r.x0 < 0 || r.y0 < 0 || x1 >= t.width || y1 >= t.height)
            throw Error(ErrorCode::ValidationError, "aperture region out of bounds");
        try {
            const Centroid c = moments_over(t, r.x0, r.y0, x1, y1);
            res.per_aperture.push_back(c);
            ax += c.x;
            ay += c.y;
        } catch (const Error&) {
            // dark region: skipped, reported through the counts
        }
    }
    res.regions_used = static_cast<int>(res.per_aperture.size());
    if (res.regions_used == 0)
        throw Error(ErrorCode::DarkInput, "every aperture region is dark");
    res.average.x = ax / res.regions_used;
    res.average.y = ay / res.regions_used;
    res.average.contributing = res.regions_used;
    res.average.confidence =
        static_cast<double>(res.regions_used) / res.regions_total;
    res.average.flagged = res.regions_used != res.regions_total;
    return res;
}

Centroid dbcm(const Image& img, double mu) {
    constexpr int kRoi = 21;
    constexpr int kMargin = kRoi / 2; // 10 px

    if (img.width < kRoi || img.height < kRoi)
        throw Error(ErrorCode::MarginError, "image smaller than the ROI");
    const Image t = threshold_subtract(img, mu);

    // Acquisition: WTA row/column maxima locate the brightest cell.
    std::vector<double> row_max(t.height, 0.0), col_max(t.width, 0.0);
    for (int j = 0; j < t.height; ++j)
        for (int i = 0; i < t.width; ++i) {
            row_max[j] = std::max(row_max[j], t.at(i, j));
            col_max[i] = std::max(col_max[i], t.at(i, j));
        }
    const int jc = static_cast<int>(
        std::max_element(row_max.begin(), row_max.end()) - row_max.begin());
    const int ic = static_cast<int>(
        std::max_element(col_max.begin(), col_max.end()) - col_max.begin());

    if (ic < kMargin || ic >= t.width - kMargin || jc < kMargin ||
        jc >= t.height - kMargin)
        throw Error(ErrorCode::MarginError, "spot too close to the border for the ROI");

    // Tracking: balance the A..E regions of the 21x21 ROI. A and E are the
    // outer single columns, C the center column, B and D the 9-wide bands.
    auto balance = [&](bool transpose) {
        double s[5] = {0, 0, 0, 0, 0}; // A, B, C, D, E
        for (int v = -kMargin; v <= kMargin; ++v)
            for (int u = -kMargin; u <= kMargin; ++u) {
                const int x = transpose ? ic + v : ic + u;
                const int y = transpose ? jc + u : jc + v;
                const double val = t.at(x, y);
                if (u == -kMargin) s[0] += val;
                else if (u < 0) s[1] += val;
                else if (u == 0) s[2] += val;
                else if (u < kMargin) s[3] += val;
                else s[4] += val;
            }
        const double denom = s[2] - s[0]; // assumes S_A = S_E
        if (denom == 0.0) return std::pair<double, bool>{0.0, true};
        return std::pair<double, bool>{0.5 * (s[3] - s[1]) / denom, false};
    };

    const auto [dx, fx] = balance(false);
    const auto [dy, fy] = balance(true);
    Centroid c;
    c.x = img.coord_x(ic) + dx;
    c.y = img.coord_y(jc) - dy; // +u runs down the rows
    c.flagged = fx || fy;       // degenerate balance falls back to the ROI center
    return c;
}

int mtacm_threshold_count(double sigma_px, double dx_m_px) {
    const double bound = sigma_px * std::sqrt(std::exp(1.0)) / dx_m_px;
    return static_cast<int>(std::floor(bound)) + 1;
}

namespace {

/// One profile pass: thresholds placed between the noise-floor estimate and
/// the profile max; per-threshold transition midpoints averaged.
double mtacm_axis(const std::vector<double>& profile, int n_th) {
    std::vector<double> sorted = profile;
    std::sort(sorted.begin(), sorted.end());
    const double floor_est = sorted[sorted.size() / 20]; // 5th percentile
    const double peak = sorted.back();
    if (peak <= floor_est)
        throw Error(ErrorCode::DarkInput, "flat profile");

    double acc = 0.0;
    int used = 0;
    for (int l = 0; l < n_th; ++l) {
        const double th =
            floor_est + (peak - floor_est) * (l + 1.0) / (n_th + 1.0);
        int h = -1, k = -1;
        for (size_t i = 0; i < profile.size(); ++i)
            if (profile[i] > th) {
                h = static_cast<int>(i);
                break;
            }
        for (size_t i = profile.size(); i-- > 0;)
            if (profile[i] > th) {
                k = static_cast<int>(i);
                break;
            }
        if (h < 0 || k < 0) continue; // threshold without transitions: skipped
        acc += 0.5 * (h + k);
        ++used;
    }
    if (used == 0)
        throw Error(ErrorCode::DarkInput, "no threshold produced transitions");
    return acc / used;
}

} // namespace

Centroid mt_acm(const Image& img, double sigma_px, double dx_m_px) {
    if (img.data.empty())
        throw Error(ErrorCode::ValidationError, "empty image");
    const int n_th = mtacm_threshold_count(sigma_px, dx_m_px);
    std::vector<double> col_sum(img.width, 0.0), row_sum(img.height, 0.0);
    for (int j = 0; j < img.height; ++j)
        for (int i = 0; i < img.width; ++i) {
            col_sum[i] += img.at(i, j);
            row_sum[j] += img.at(i, j);
        }
    Centroid c;
    c.x = mtacm_axis(col_sum, n_th) - 0.5 * (img.width - 1);
    c.y = 0.5 * (img.height - 1) - mtacm_axis(row_sum, n_th);
    return c;
}

Centroid pixelmax(const Image& img) {
    if (img.data.empty())
        throw Error(ErrorCode::ValidationError, "empty image");
    std::vector<double> col_sum(img.width, 0.0), row_sum(img.height, 0.0);
    for (int j = 0; j < img.height; ++j)
        for (int i = 0; i < img.width; ++i) {
            col_sum[i] += img.at(i, j);
            row_sum[j] += img.at(i, j);
        }
    auto argmax = [](const std::vector<double>& v, bool* tie) {
        double best = -1.0;
        int arg = 0;
        for (size_t i = 0; i < v.size(); ++i) {
            if (v[i] > best) {
                best = v[i];
                arg = static_cast<int>(i);
            } else if (v[i] == best) {
                *tie = true; // lowest index kept
            }
        }
        return arg;
    };
    bool tie = false;
    Centroid c;
    c.x = img.coord_x(argmax(col_sum, &tie));
    c.y = img.coord_y(argmax(row_sum, &tie));
    c.flagged = tie;
    return c;
}

double escm(const EventStream& stream) {
    if (stream.events.empty())
        throw Error(ErrorCode::DarkInput, "empty event stream");
    double num = 0.0, den = 0.0;
    for (const auto& e : stream.events) {
        const double dt = e.t_us - stream.reset_time_us;
        if (dt <= 0.0)
            throw Error(ErrorCode::MalformedStream,
                        "event timestamp at or before the reset");
        num += e.pixel / dt;
        den += 1.0 / dt;
    }
    return num / den;
}

std::vector<Centroid> detect_spots(const Image& img, double mu, int min_pixels,
                                   int max_spots) {
    const Image t = threshold_subtract(img, mu);
    std::vector<int> label(t.data.size(), -1);
    struct Blob {
        double mass = 0.0, sx = 0.0, sy = 0.0;
        int pixels = 0;
    };
    std::vector<Blob> blobs;
    std::vector<size_t> stack;
    for (size_t p = 0; p < t.data.size(); ++p) {
        if (t.data[p] <= 0.0 || label[p] >= 0) continue;
        const int id = static_cast<int>(blobs.size());
        blobs.emplace_back();
        stack.push_back(p);
        label[p] = id;
        while (!stack.empty()) {
            const size_t q = stack.back();
            stack.pop_back();
            const int x = static_cast<int>(q % t.width);
            const int y = static_cast<int>(q / t.width);
            Blob& b = blobs[id];
            b.mass += t.data[q];
            b.sx += t.data[q] * t.coord_x(x);
            b.sy += t.data[q] * t.coord_y(y);
            b.pixels += 1;
            const int nx[4] = {x - 1, x + 1, x, x};
            const int ny[4] = {y, y, y - 1, y + 1};
            for (int k = 0; k < 4; ++k) {
                if (!t.in_bounds(nx[k], ny[k])) continue;
                const size_t np = static_cast<size_t>(ny[k]) * t.width + nx[k];
                if (t.data[np] > 0.0 && label[np] < 0) {
                    label[np] = id;
                    stack.push_back(np);
                }
            }
        }
    }
    std::vector<Centroid> out;
    for (const auto& b : blobs) {
        if (b.pixels < min_pixels) continue;
        out.push_back({b.sx / b.mass, b.sy / b.mass, 1.0, b.pixels, false});
    }
    std::sort(out.begin(), out.end(), [](const Centroid& a, const Centroid& b) {
        return a.contributing > b.contributing;
    });
    if (static_cast<int>(out.size()) > max_spots) out.resize(max_spots);
    return out;
}

} // namespace sunsense::features
