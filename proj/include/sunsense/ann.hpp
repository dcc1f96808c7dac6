#pragma once

#include <span>
#include <string>
#include <vector>

#include "sunsense/core.hpp"
#include "sunsense/random.hpp"

namespace sunsense::ann {

/// Single-hidden-layer feed-forward map: 2 inputs (centroid x, y), logistic
/// sigmoid hidden units, one linear output. One network per sun angle.
struct MlpModel {
    int hidden = 16;
    std::vector<double> w1; // hidden x 2
    std::vector<double> b1; // hidden
    std::vector<double> w2; // hidden
    double b2 = 0.0;
    // Input/output normalization to [-1, 1].
    double in_lo[2] = {-1.0, -1.0};
    double in_hi[2] = {1.0, 1.0};
    double out_lo = -1.0;
    double out_hi = 1.0;
    double final_train_loss = 0.0;
    double final_val_loss = 0.0;

    int parameter_count() const { return hidden * 2 + hidden + hidden + 1; }
};

struct TrainSample {
    double cx = 0.0;
    double cy = 0.0;
    double angle_deg = 0.0;
};

struct TrainOptions {
    int hidden = 16;
    int epochs = 2000;
    int batch = 32;
    double learning_rate = 1.0;
    double momentum = 0.95;
    double validation_fraction = 0.2;
    uint64_t seed = 1;
};

/// Mini-batch gradient descent on the mean squared angle error. The
/// learning rate halves (and the epoch is retried) whenever the full-data
/// loss would increase, so the recorded loss trace is non-increasing.
MlpModel ann_train(std::span<const TrainSample> data, const TrainOptions& opts);

/// Deterministic forward pass; sets the flag when the centroid falls
/// outside the training normalization range.
double ann_infer(const MlpModel& m, double cx, double cy,
                 bool* extrapolation = nullptr);

/// Analytic loss gradient (normalized units) over a batch, ordered
/// [w1, b1, w2, b2]; exposed for the finite-difference check.
std::vector<double> ann_loss_gradient(const MlpModel& m,
                                      std::span<const TrainSample> batch);

/// Loss with the same normalization as ann_loss_gradient.
double ann_loss(const MlpModel& m, std::span<const TrainSample> batch);

/// Flat parameter access, ordered [w1, b1, w2, b2].
std::vector<double> ann_get_parameters(const MlpModel& m);
void ann_set_parameters(MlpModel& m, std::span<const double> p);

std::string to_json(const MlpModel& m);
MlpModel mlp_from_json(const std::string& text);

/// Dataset CSV with header `cx,cy,angle_deg`.
std::vector<TrainSample> load_dataset_csv(const std::string& path);
void save_dataset_csv(std::span<const TrainSample> data, const std::string& path);

} // namespace sunsense::ann
