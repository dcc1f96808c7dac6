#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "sunsense/ann.hpp"
#include "sunsense/bench.hpp"
#include "sunsense/calib.hpp"
#include "sunsense/features.hpp"
#include "sunsense/image_io.hpp"
#include "sunsense/multiplex.hpp"
#include "sunsense/simgen.hpp"

namespace fs = std::filesystem;
using namespace sunsense;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

uint64_t effective_seed(uint64_t scenario_seed) {
    if (const char* env = std::getenv("SUNSENSE_SEED"))
        return std::strtoull(env, nullptr, 10);
    return scenario_seed;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
    out << text;
}

int cmd_simulate(const std::string& scenario_path, const std::string& out_dir) {
    bench::Scenario s = bench::load_scenario(scenario_path);
    s.seed = effective_seed(s.seed);
    fs::create_directories(out_dir);

    int written = 0;
    for (int ci = 0; ci < s.truth_grid.cells(); ++ci) {
        const SunAngles truth = s.truth_grid.cell(ci);
        for (size_t ni = 0; ni < s.noise_sweep.size(); ++ni) {
            simgen::NoiseModel noise;
            noise.gaussian_sigma = s.noise_sweep[ni];
            RandomStream rng(s.seed, (uint64_t)ci * 1000 + ni);
            char name[128];
            std::snprintf(name, sizeof name, "cell%03d_noise%02zu", ci, ni);
            if (s.mask.kind == simgen::MaskKind::Pinhole ||
                s.mask.kind == simgen::MaskKind::MultiAperture ||
                s.mask.kind == simgen::MaskKind::Coded) {
                const Image img =
                    simgen::render_spot(s.geometry, s.mask, truth, noise, rng, s.render);
                save_pgm(img, fs::path(out_dir) / (std::string(name) + ".pgm"));
            } else {
                const Image prof = simgen::render_slit_profiles(s.geometry, s.mask,
                                                                truth, noise, rng);
                save_profile_csv(prof, fs::path(out_dir) / (std::string(name) + ".csv"));
            }
            ++written;
        }
    }
    std::cout << "wrote " << written << " observations to " << out_dir << "\n";
    return kExitOk;
}

int cmd_extract(const std::string& algo, const std::string& image_path,
                const std::string& params_path) {
    bench::Scenario s; // defaults; params may override extractor knobs
    if (!params_path.empty())
        s = bench::scenario_from_json(read_file(params_path));
    s.extractor.name = algo;
    const Image img = load_image(image_path);
    const features::Centroid c = bench::run_extractor(s.extractor, img, s);
    std::printf("x=%.6f y=%.6f confidence=%.3f flagged=%d\n", c.x, c.y,
                c.confidence, c.flagged ? 1 : 0);
    return kExitOk;
}

int cmd_calibrate(const std::string& kind, const std::string& data_path,
                  const std::string& out_path, int order) {
    // Dataset rows: feature,angle_deg (CSV with header).
    std::ifstream in(data_path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + data_path);
    std::string line;
    std::vector<calib::FitSample> samples;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (header) {
            header = false;
            continue;
        }
        calib::FitSample fsm;
        if (std::sscanf(line.c_str(), "%lf,%lf", &fsm.feature, &fsm.angle_deg) != 2)
            throw Error(ErrorCode::ParseError, data_path + ": bad row: " + line);
        samples.push_back(fsm);
    }

    calib::FitKind fk;
    if (kind == "linear") fk = calib::FitKind::Linear;
    else if (kind == "polynomial") fk = calib::FitKind::Polynomial;
    else if (kind == "trigonometric") fk = calib::FitKind::Trigonometric;
    else if (kind == "fourier") fk = calib::FitKind::Fourier;
    else if (kind == "sigmoid-composite") fk = calib::FitKind::SigmoidComposite;
    else throw Error(ErrorCode::ValidationError, "unknown model kind " + kind);

    double lo = 1e300, hi = -1e300;
    for (const auto& sm : samples) {
        lo = std::min(lo, sm.angle_deg);
        hi = std::max(hi, sm.angle_deg);
    }
    const auto model = calib::fit_nonphysical(samples, fk, order, lo, hi);
    write_file(out_path, calib::nonphysical_to_json(model));
    std::cout << "wrote " << out_path << "\n";
    return kExitOk;
}

int cmd_apply(const std::string& model_path, const std::string& feature) {
    const calib::NonPhysicalModel m = calib::nonphysical_from_json(read_file(model_path));

    double fx = 0.0, fy = 0.0;
    const bool pair = std::sscanf(feature.c_str(), "%lf,%lf", &fx, &fy) == 2;
    if (!pair && std::sscanf(feature.c_str(), "%lf", &fx) != 1)
        throw Error(ErrorCode::ValidationError, "feature must be 'x' or 'x,y'");
    bool flag = false;
    const double angle = calib::eval_nonphysical(m, fx, 1, &flag);
    std::printf("angle_deg=%.9g extrapolated=%d\n", angle, flag ? 1 : 0);
    return kExitOk;
}

int cmd_bench(const std::string& scenario_path, int workers,
              const std::string& out_csv, bool timing) {
    bench::Scenario s = bench::load_scenario(scenario_path);
    s.seed = effective_seed(s.seed);
    const auto result = bench::run_scenario(s, workers, timing);
    const std::string csv = bench::metrics_csv(result, timing);
    if (out_csv.empty()) {
        std::cout << csv;
    } else {
        write_file(out_csv, csv);
        write_file(out_csv + ".trials", bench::trials_csv(result));
        std::cout << "wrote " << out_csv << "\n";
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sun-sensor calibration toolkit"};
    app.require_subcommand(1);

    std::string scenario_path, out_dir = "out", algo = "bcm", image_path;
    std::string params_path, model_kind = "polynomial", data_path, model_out;
    std::string model_path, feature, bench_out;
    int workers = 1, order = 6;
    bool timing = false;

    auto* sim = app.add_subcommand("simulate", "Render a scenario to images");
    sim->add_option("scenario", scenario_path)->required();
    sim->add_option("--out-dir", out_dir);

    auto* ext = app.add_subcommand("extract", "Run a feature extractor on an image");
    ext->add_option("--algo", algo)->required();
    ext->add_option("--image", image_path)->required();
    ext->add_option("--params", params_path);

    auto* cal = app.add_subcommand("calibrate", "Fit a calibration model");
    cal->add_option("--model", model_kind)->required();
    cal->add_option("--data", data_path)->required();
    cal->add_option("--out", model_out)->required();
    cal->add_option("--order", order);

    auto* apl = app.add_subcommand("apply", "Evaluate a fitted model");
    apl->add_option("--model", model_path)->required();
    apl->add_option("--feature", feature)->required();

    auto* ben = app.add_subcommand("bench", "Run a Monte-Carlo scenario");
    ben->add_option("scenario", scenario_path)->required();
    ben->add_option("--workers", workers);
    ben->add_option("--out", bench_out);
    ben->add_flag("--timing", timing);

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) return cmd_simulate(scenario_path, out_dir);
        if (ext->parsed()) return cmd_extract(algo, image_path, params_path);
        if (cal->parsed()) return cmd_calibrate(model_kind, data_path, model_out, order);
        if (apl->parsed()) return cmd_apply(model_path, feature);
        if (ben->parsed()) return cmd_bench(scenario_path, workers, bench_out, timing);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code() == ErrorCode::ValidationError || e.code() == ErrorCode::ParseError
                   ? kExitValidation
                   : kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}
