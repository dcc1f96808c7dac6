#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sunsense/calib.hpp"
#include "sunsense/core.hpp"
#include "sunsense/simgen.hpp"

namespace sunsense::bench {

struct TruthGrid {
    double alpha_min_deg = -5.0, alpha_max_deg = 5.0;
    double beta_min_deg = -5.0, beta_max_deg = 5.0;
    int rows = 3, cols = 3;

    SunAngles cell(int index) const;
    int cells() const { return rows * cols; }
};

struct ExtractorSpec {
    std::string name = "bcm"; // bcm|bctm|ifm|pm|peak|dbcm|mtacm|tm|mcam
    double mu = 0.3;
    double sigma_px = 1.0;  // mtacm
    double dx_m_px = 0.1;   // mtacm
    int candidates = 9;     // tm
};

struct CalibratorSpec {
    std::string name = "spm"; // spm|shadow_spm|lsq_geom
    calib::LsqGeomParams lsq;
};

struct Scenario {
    std::string name = "scenario";
    uint64_t seed = 1;
    SensorGeometry geometry;
    simgen::MaskSpec mask;
    simgen::RenderConfig render;
    ExtractorSpec extractor;
    CalibratorSpec calibrator;
    TruthGrid truth_grid;
    std::vector<double> noise_sweep{0.0};
    int trials = 1;
};

/// Parses and validates scenario JSON; validation failures list the paths.
Scenario scenario_from_json(const std::string& text);
std::string scenario_to_json(const Scenario& s);
Scenario load_scenario(const std::string& path);

struct MetricsRow {
    std::string extractor;
    std::string calibrator;
    double noise_level = 0.0;
    int trials = 0;
    int failures = 0;
    double rms_deg = 0.0;
    double max_deg = 0.0;
    double mean_abs_bias_deg = 0.0;
    double wall_ms = 0.0; // median per trial; excluded from the default CSV
};

struct TrialRecord {
    int noise_index = 0;
    int cell_index = 0;
    int trial = 0;
    double err_deg = 0.0;
    bool failed = false;
};

struct ScenarioResult {
    std::vector<MetricsRow> rows;     // one per noise level
    std::vector<TrialRecord> trials;  // per-trial log, index-ordered
};

/// Runs the scenario; trial observations use rng streams keyed by the
/// (noise, cell, trial) index, so results are byte-identical across runs
/// and worker counts.
ScenarioResult run_scenario(const Scenario& scenario, int workers = 1,
                            bool measure_time = false);

/// Deterministic metrics CSV; the volatile timing column only appears on
/// request.
std::string metrics_csv(const ScenarioResult& result, bool with_timing = false);

/// Per-trial log CSV.
std::string trials_csv(const ScenarioResult& result);

struct ExtractorComparison {
    std::vector<std::string> extractors;
    std::vector<double> noise_levels;
    // err[e][n] = mean |error| of extractor e at noise level n.
    std::vector<std::vector<double>> mean_err_deg;
    std::vector<double> slope; // OLS slope of mean error vs noise level
    // per_trial[e][n][k]: paired trials share observations across e.
    std::vector<std::vector<std::vector<double>>> per_trial_err;
};

/// Paired-seed comparison: every extractor consumes identical noisy
/// observations trial for trial.
ExtractorComparison compare_extractors(const Scenario& base,
                                       const std::vector<ExtractorSpec>& list,
                                       int workers = 1);

std::string comparison_csv(const ExtractorComparison& cmp);

/// Applies the named extractor to one image.
features::Centroid run_extractor(const ExtractorSpec& spec, const Image& img,
                                 const Scenario& scenario);

/// Applies the named calibrator to one centroid.
SunAngles run_calibrator(const CalibratorSpec& spec, const features::Centroid& c,
                         const Scenario& scenario);

} // namespace sunsense::bench
