#include "sunsense/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "sunsense/features.hpp"

namespace sunsense::bench {

using nlohmann::json;

SunAngles TruthGrid::cell(int index) const {
    const int r = index / cols, c = index % cols;
    const double a = rows > 1 ? alpha_min_deg + (alpha_max_deg - alpha_min_deg) *
                                                    r / (rows - 1)
                              : 0.5 * (alpha_min_deg + alpha_max_deg);
    const double b = cols > 1 ? beta_min_deg + (beta_max_deg - beta_min_deg) * c /
                                                   (cols - 1)
                              : 0.5 * (beta_min_deg + beta_max_deg);
    return {a, b};
}

namespace {

simgen::MaskKind mask_kind_from_string(const std::string& s) {
    if (s == "pinhole") return simgen::MaskKind::Pinhole;
    if (s == "multi_aperture") return simgen::MaskKind::MultiAperture;
    if (s == "coded") return simgen::MaskKind::Coded;
    if (s == "slit") return simgen::MaskKind::Slit;
    if (s == "l_slit") return simgen::MaskKind::LSlit;
    if (s == "n_slit") return simgen::MaskKind::NSlit;
    if (s == "v_slit") return simgen::MaskKind::VSlit;
    if (s == "multi_slit") return simgen::MaskKind::MultiSlit;
    if (s == "periodic") return simgen::MaskKind::Periodic;
    throw Error(ErrorCode::ValidationError, "mask.kind: unknown value '" + s + "'");
}

std::string mask_kind_to_string(simgen::MaskKind k) {
    switch (k) {
        case simgen::MaskKind::Pinhole: return "pinhole";
        case simgen::MaskKind::MultiAperture: return "multi_aperture";
        case simgen::MaskKind::Coded: return "coded";
        case simgen::MaskKind::Slit: return "slit";
        case simgen::MaskKind::LSlit: return "l_slit";
        case simgen::MaskKind::NSlit: return "n_slit";
        case simgen::MaskKind::VSlit: return "v_slit";
        case simgen::MaskKind::MultiSlit: return "multi_slit";
        case simgen::MaskKind::Periodic: return "periodic";
    }
    return "pinhole";
}

} // namespace

Scenario scenario_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ValidationError, std::string("scenario JSON: ") + e.what());
    }
    std::vector<std::string> problems;
    Scenario s;
    s.name = j.value("name", std::string("scenario"));
    s.seed = j.value("seed", 1ull);

    if (j.contains("geometry")) {
        const auto& g = j["geometry"];
        s.geometry.focal_length_mm = g.value("focal_length_mm", 5.0);
        s.geometry.pitch_mm = g.value("pitch_mm", 0.005);
        s.geometry.mask_thickness_mm = g.value("mask_thickness_mm", 0.0);
        if (g.contains("glass_layers"))
            for (const auto& l : g["glass_layers"])
                s.geometry.glass_layers.push_back(
                    {l.value("thickness_mm", 0.0), l.value("refractive_index", 1.0)});
        if (s.geometry.focal_length_mm <= 0.0) problems.push_back("geometry.focal_length_mm");
        if (s.geometry.pitch_mm <= 0.0) problems.push_back("geometry.pitch_mm");
    }
    if (j.contains("mask")) {
        const auto& mj = j["mask"];
        s.mask.kind = mask_kind_from_string(mj.value("kind", std::string("pinhole")));
        s.mask.aperture_diameter_mm = mj.value("aperture_diameter_mm", 0.1);
        if (mj.contains("aperture_centers")) {
            s.mask.aperture_centers.clear();
            for (const auto& c : mj["aperture_centers"])
                s.mask.aperture_centers.push_back({c[0].get<double>(), c[1].get<double>()});
        }
        if (mj.contains("slit_positions_mm"))
            s.mask.slit_positions_mm = mj["slit_positions_mm"].get<std::vector<double>>();
        s.mask.slit_angle_delta_deg = mj.value("slit_angle_delta_deg", 45.0);
        if (s.mask.aperture_diameter_mm <= 0.0) problems.push_back("mask.aperture_diameter_mm");
    }
    if (j.contains("render")) {
        const auto& r = j["render"];
        s.render.image_width = r.value("width", 257);
        s.render.image_height = r.value("height", 257);
        s.render.depth_bits = r.value("depth", 8);
        s.render.supersample = r.value("supersample", 8);
        s.render.penumbra = r.value("penumbra", false);
        s.render.peak_fraction = r.value("peak_fraction", 0.8);
        if (s.render.image_width <= 0) problems.push_back("render.width");
        if (s.render.image_height <= 0) problems.push_back("render.height");
        if (s.render.depth_bits != 8 && s.render.depth_bits != 16)
            problems.push_back("render.depth");
    }
    if (j.contains("extractor")) {
        const auto& e = j["extractor"];
        s.extractor.name = e.value("name", std::string("bcm"));
        s.extractor.mu = e.value("mu", 0.3);
        s.extractor.sigma_px = e.value("sigma_px", 1.0);
        s.extractor.dx_m_px = e.value("dx_m_px", 0.1);
        s.extractor.candidates = e.value("candidates", 9);
    }
    if (j.contains("calibrator")) {
        const auto& c = j["calibrator"];
        s.calibrator.name = c.value("name", std::string("spm"));
        s.calibrator.lsq.dF_mm = c.value("dF_mm", 0.0);
        s.calibrator.lsq.alpha0_deg = c.value("alpha0_deg", 0.0);
        s.calibrator.lsq.beta0_deg = c.value("beta0_deg", 0.0);
    }
    if (j.contains("truth_grid")) {
        const auto& t = j["truth_grid"];
        s.truth_grid.alpha_min_deg = t.value("alpha_min", -5.0);
        s.truth_grid.alpha_max_deg = t.value("alpha_max", 5.0);
        s.truth_grid.beta_min_deg = t.value("beta_min", -5.0);
        s.truth_grid.beta_max_deg = t.value("beta_max", 5.0);
        s.truth_grid.rows = t.value("rows", 3);
        s.truth_grid.cols = t.value("cols", 3);
        if (s.truth_grid.rows < 1 || s.truth_grid.cols < 1)
            problems.push_back("truth_grid.rows/cols");
        if (std::max(std::abs(s.truth_grid.alpha_min_deg),
                     std::abs(s.truth_grid.alpha_max_deg)) >= 90.0 ||
            std::max(std::abs(s.truth_grid.beta_min_deg),
                     std::abs(s.truth_grid.beta_max_deg)) >= 90.0)
            problems.push_back("truth_grid: angles must stay inside the FOV");
    }
    if (j.contains("noise_sweep"))
        s.noise_sweep = j["noise_sweep"].get<std::vector<double>>();
    s.trials = j.value("trials", 1);
    if (s.trials < 1) problems.push_back("trials: must be >= 1");
    if (s.noise_sweep.empty()) problems.push_back("noise_sweep: must be non-empty");

    if (!problems.empty()) {
        std::string msg = "scenario validation failed:";
        for (const auto& p : problems) msg += " " + p + ";";
        throw Error(ErrorCode::ValidationError, msg);
    }
    return s;
}

std::string scenario_to_json(const Scenario& s) {
    json j;
    j["name"] = s.name;
    j["seed"] = s.seed;
    j["geometry"] = {{"focal_length_mm", s.geometry.focal_length_mm},
                     {"pitch_mm", s.geometry.pitch_mm},
                     {"mask_thickness_mm", s.geometry.mask_thickness_mm}};
    j["mask"] = {{"kind", mask_kind_to_string(s.mask.kind)},
                 {"aperture_diameter_mm", s.mask.aperture_diameter_mm}};
    auto centers = json::array();
    for (const auto& c : s.mask.aperture_centers) centers.push_back({c[0], c[1]});
    j["mask"]["aperture_centers"] = centers;
    j["render"] = {{"width", s.render.image_width},
                   {"height", s.render.image_height},
                   {"depth", s.render.depth_bits},
                   {"penumbra", s.render.penumbra},
                   {"peak_fraction", s.render.peak_fraction}};
    j["extractor"] = {{"name", s.extractor.name},
                      {"mu", s.extractor.mu},
                      {"sigma_px", s.extractor.sigma_px},
                      {"dx_m_px", s.extractor.dx_m_px},
                      {"candidates", s.extractor.candidates}};
    j["calibrator"] = {{"name", s.calibrator.name}};
    j["truth_grid"] = {{"alpha_min", s.truth_grid.alpha_min_deg},
                       {"alpha_max", s.truth_grid.alpha_max_deg},
                       {"beta_min", s.truth_grid.beta_min_deg},
                       {"beta_max", s.truth_grid.beta_max_deg},
                       {"rows", s.truth_grid.rows},
                       {"cols", s.truth_grid.cols}};
    j["noise_sweep"] = s.noise_sweep;
    j["trials"] = s.trials;
    return j.dump(2);
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::IoError, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return scenario_from_json(ss.str());
}

features::Centroid run_extractor(const ExtractorSpec& spec, const Image& img,
                                 const Scenario& scenario) {
    using namespace features;
    if (spec.name == "bcm") return moment_centroid(img, Preprocess::None);
    if (spec.name == "bctm")
        return moment_centroid(img, Preprocess::Threshold, spec.mu);
    if (spec.name == "ifm") return moment_centroid(img, Preprocess::Mean3x3);
    if (spec.name == "pm") return pixelmax(img);
    if (spec.name == "peak") return peak_detect(img);
    if (spec.name == "dbcm") return dbcm(img, spec.mu);
    if (spec.name == "mtacm") return mt_acm(img, spec.sigma_px, spec.dx_m_px);
    if (spec.name == "tm") {
        const double radius =
            0.5 * scenario.mask.aperture_diameter_mm / scenario.geometry.pitch_mm;
        return template_match(img, radius, spec.candidates, spec.mu);
    }
    if (spec.name == "mcam") {
        // Regions derived from the mask layout: a box around each aperture.
        const double r_px = 0.5 * scenario.mask.aperture_diameter_mm /
                            scenario.geometry.pitch_mm;
        const int half = (int)std::ceil(3.0 * r_px) + 6;
        std::vector<Rect> regions;
        for (const auto& a : scenario.mask.aperture_centers) {
            const int ci = (int)std::lround(img.col_of_x(a[0] / img.pitch_mm));
            const int cj = (int)std::lround(img.row_of_y(a[1] / img.pitch_mm));
            Rect r{std::max(0, ci - half), std::max(0, cj - half), 0, 0};
            r.width = std::min(img.width - r.x0, 2 * half + 1);
            r.height = std::min(img.height - r.y0, 2 * half + 1);
            regions.push_back(r);
        }
        return mcam(img, regions, spec.mu).average;
    }
    throw Error(ErrorCode::ValidationError,
                "extractor: unknown name '" + spec.name + "'");
}

SunAngles run_calibrator(const CalibratorSpec& spec, const features::Centroid& c,
                         const Scenario& scenario) {
    if (spec.name == "spm") return calib::spm_invert(c, scenario.geometry);
    if (spec.name == "shadow_spm") {
        const auto corrected = calib::shadow_center_correct(scenario.geometry, c);
        return calib::spm_invert(corrected, scenario.geometry);
    }
    if (spec.name == "lsq_geom") {
        return calib::lsq_geom_apply(spec.lsq, scenario.geometry.focal_length_mm,
                                     c.x * scenario.geometry.pitch_mm,
                                     c.y * scenario.geometry.pitch_mm);
    }
    throw Error(ErrorCode::ValidationError,
                "calibrator: unknown name '" + spec.name + "'");
}

namespace {

struct TrialOutcome {
    double err_deg = 0.0;   // angular separation
    double err_alpha = 0.0; // signed per-axis errors for the bias metric
    double err_beta = 0.0;
    bool failed = false;
    double wall_ms = 0.0;
};

uint64_t trial_stream_id(int noise_index, int cell_index, int trial) {
    // Stable trial key: independent of worker scheduling.
    return (uint64_t)noise_index * 1000003ull + (uint64_t)cell_index * 997ull +
           (uint64_t)trial;
}

TrialOutcome run_one_trial(const Scenario& s, int noise_index, int cell_index,
                           int trial, bool measure_time) {
    TrialOutcome out;
    const SunAngles truth = s.truth_grid.cell(cell_index);
    simgen::NoiseModel noise;
    noise.gaussian_sigma = s.noise_sweep[noise_index];
    RandomStream rng(s.seed, trial_stream_id(noise_index, cell_index, trial));
    try {
        const Image img =
            simgen::render_spot(s.geometry, s.mask, truth, noise, rng, s.render);
        const auto t0 = std::chrono::steady_clock::now();
        const features::Centroid c = run_extractor(s.extractor, img, s);
        const SunAngles est = run_calibrator(s.calibrator, c, s);
        if (measure_time) {
            const auto t1 = std::chrono::steady_clock::now();
            out.wall_ms =
                std::chrono::duration<double, std::milli>(t1 - t0).count();
        }
        out.err_deg = angular_separation_deg(angles_to_vector(est),
                                             angles_to_vector(truth));
        out.err_alpha = est.alpha_deg - truth.alpha_deg;
        out.err_beta = est.beta_deg - truth.beta_deg;
    } catch (const Error&) {
        out.failed = true; // extractor failure counted, not fatal
    }
    return out;
}

} // namespace

ScenarioResult run_scenario(const Scenario& s, int workers, bool measure_time) {
    const int n_noise = (int)s.noise_sweep.size();
    const int n_cells = s.truth_grid.cells();
    const int total = n_noise * n_cells * s.trials;
    std::vector<TrialOutcome> outcomes(total);

    // Warm-up trials before timing, per the wall-time protocol.
    if (measure_time)
        for (int w = 0; w < 3; ++w) (void)run_one_trial(s, 0, 0, 0, false);

    std::atomic<int> next{0};
    auto worker = [&]() {
        for (;;) {
            const int idx = next.fetch_add(1);
            if (idx >= total) break;
            const int ni = idx / (n_cells * s.trials);
            const int rem = idx % (n_cells * s.trials);
            const int ci = rem / s.trials;
            const int k = rem % s.trials;
            outcomes[idx] = run_one_trial(s, ni, ci, k, measure_time);
        }
    };
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    ScenarioResult res;
    for (int ni = 0; ni < n_noise; ++ni) {
        MetricsRow row;
        row.extractor = s.extractor.name;
        row.calibrator = s.calibrator.name;
        row.noise_level = s.noise_sweep[ni];
        std::vector<double> errs, walls;
        double bias_a = 0.0, bias_b = 0.0;
        for (int ci = 0; ci < n_cells; ++ci)
            for (int k = 0; k < s.trials; ++k) {
                const int idx = (ni * n_cells + ci) * s.trials + k;
                const auto& o = outcomes[idx];
                res.trials.push_back({ni, ci, k, o.err_deg, o.failed});
                row.trials += 1;
                if (o.failed) {
                    row.failures += 1;
                    continue;
                }
                errs.push_back(o.err_deg);
                walls.push_back(o.wall_ms);
                bias_a += o.err_alpha;
                bias_b += o.err_beta;
            }
        if (!errs.empty()) {
            double s2 = 0.0, mx = 0.0;
            for (double e : errs) {
                s2 += e * e;
                mx = std::max(mx, e);
            }
            row.rms_deg = std::sqrt(s2 / errs.size());
            row.max_deg = mx;
            row.mean_abs_bias_deg = 0.5 * (std::abs(bias_a / errs.size()) +
                                           std::abs(bias_b / errs.size()));
            std::sort(walls.begin(), walls.end());
            row.wall_ms = walls[walls.size() / 2];
        }
        res.rows.push_back(row);
    }
    return res;
}

std::string metrics_csv(const ScenarioResult& result, bool with_timing) {
    std::string out = "# sunsense-metrics v1\n";
    out += "extractor,calibrator,noise,trials,failures,rms_deg,max_deg,"
           "mean_abs_bias_deg";
    if (with_timing) out += ",wall_ms";
    out += "\n";
    char buf[256];
    for (const auto& r : result.rows) {
        std::snprintf(buf, sizeof buf, "%s,%s,%.9g,%d,%d,%.9g,%.9g,%.9g",
                      r.extractor.c_str(), r.calibrator.c_str(), r.noise_level,
                      r.trials, r.failures, r.rms_deg, r.max_deg,
                      r.mean_abs_bias_deg);
        out += buf;
        if (with_timing) {
            std::snprintf(buf, sizeof buf, ",%.3f", r.wall_ms);
            out += buf;
        }
        out += "\n";
    }
    return out;
}

std::string trials_csv(const ScenarioResult& result) {
    std::string out = "# sunsense-trials v1\nnoise_index,cell_index,trial,err_deg,failed\n";
    char buf[160];
    for (const auto& t : result.trials) {
        std::snprintf(buf, sizeof buf, "%d,%d,%d,%.9g,%d\n", t.noise_index,
                      t.cell_index, t.trial, t.err_deg, t.failed ? 1 : 0);
        out += buf;
    }
    return out;
}

ExtractorComparison compare_extractors(const Scenario& base,
                                       const std::vector<ExtractorSpec>& list,
                                       int workers) {
    ExtractorComparison cmp;
    cmp.noise_levels = base.noise_sweep;
    const int n_noise = (int)base.noise_sweep.size();
    const int n_cells = base.truth_grid.cells();
    const int obs_total = n_noise * n_cells * base.trials;

    // Render the shared observations once (paired seeds across extractors).
    std::vector<Image> observations(obs_total);
    std::vector<SunAngles> truths(obs_total);
    std::vector<char> render_failed(obs_total, 0);
    std::atomic<int> next{0};
    auto render_worker = [&]() {
        for (;;) {
            const int idx = next.fetch_add(1);
            if (idx >= obs_total) break;
            const int ni = idx / (n_cells * base.trials);
            const int rem = idx % (n_cells * base.trials);
            const int ci = rem / base.trials;
            const int k = rem % base.trials;
            simgen::NoiseModel noise;
            noise.gaussian_sigma = base.noise_sweep[ni];
            RandomStream rng(base.seed, trial_stream_id(ni, ci, k));
            truths[idx] = base.truth_grid.cell(ci);
            try {
                observations[idx] = simgen::render_spot(base.geometry, base.mask,
                                                        truths[idx], noise, rng,
                                                        base.render);
            } catch (const Error&) {
                render_failed[idx] = 1;
            }
        }
    };
    if (workers <= 1) {
        render_worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(render_worker);
        for (auto& t : pool) t.join();
    }

    for (const auto& spec : list) {
        cmp.extractors.push_back(spec.name);
        std::vector<double> means(n_noise, 0.0);
        std::vector<std::vector<double>> per_noise(n_noise);
        for (int idx = 0; idx < obs_total; ++idx) {
            if (render_failed[idx]) continue;
            const int ni = idx / (n_cells * base.trials);
            try {
                const auto c = run_extractor(spec, observations[idx], base);
                const SunAngles est = run_calibrator(base.calibrator, c, base);
                per_noise[ni].push_back(angular_separation_deg(
                    angles_to_vector(est), angles_to_vector(truths[idx])));
            } catch (const Error&) {
                // failures excluded from the mean, consistent with run_scenario
            }
        }
        for (int ni = 0; ni < n_noise; ++ni) {
            double acc = 0.0;
            for (double e : per_noise[ni]) acc += e;
            means[ni] = per_noise[ni].empty() ? 0.0 : acc / per_noise[ni].size();
        }
        // OLS slope of mean error against the noise level.
        double mx = 0.0, my = 0.0;
        for (int ni = 0; ni < n_noise; ++ni) {
            mx += cmp.noise_levels[ni];
            my += means[ni];
        }
        mx /= n_noise;
        my /= n_noise;
        double num = 0.0, den = 0.0;
        for (int ni = 0; ni < n_noise; ++ni) {
            num += (cmp.noise_levels[ni] - mx) * (means[ni] - my);
            den += (cmp.noise_levels[ni] - mx) * (cmp.noise_levels[ni] - mx);
        }
        cmp.mean_err_deg.push_back(means);
        cmp.slope.push_back(den > 0.0 ? num / den : 0.0);
        cmp.per_trial_err.push_back(per_noise);
    }
    return cmp;
}

std::string comparison_csv(const ExtractorComparison& cmp) {
    std::string out = "# sunsense-comparison v1\nextractor,slope_deg_per_count";
    char buf[160];
    for (double n : cmp.noise_levels) {
        std::snprintf(buf, sizeof buf, ",err_at_%.9g", n);
        out += buf;
    }
    out += "\n";
    for (size_t e = 0; e < cmp.extractors.size(); ++e) {
        std::snprintf(buf, sizeof buf, "%s,%.9g", cmp.extractors[e].c_str(),
                      cmp.slope[e]);
        out += buf;
        for (double v : cmp.mean_err_deg[e]) {
            std::snprintf(buf, sizeof buf, ",%.9g", v);
            out += buf;
        }
        out += "\n";
    }
    return out;
}

} // namespace sunsense::bench
