#include "sunsense/ann.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace sunsense::ann {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Normalized {
    double x[2];
    double t; // target in [-1, 1]
};

Normalized normalize(const MlpModel& m, const TrainSample& s) {
    Normalized n;
    for (int k = 0; k < 2; ++k) {
        const double v = k == 0 ? s.cx : s.cy;
        n.x[k] = 2.0 * (v - m.in_lo[k]) / (m.in_hi[k] - m.in_lo[k]) - 1.0;
    }
    n.t = 2.0 * (s.angle_deg - m.out_lo) / (m.out_hi - m.out_lo) - 1.0;
    return n;
}

double forward_normalized(const MlpModel& m, const double x[2],
                          std::vector<double>* hidden_out = nullptr) {
    double acc = m.b2;
    if (hidden_out) hidden_out->resize(m.hidden);
    for (int h = 0; h < m.hidden; ++h) {
        const double z = m.w1[2 * h] * x[0] + m.w1[2 * h + 1] * x[1] + m.b1[h];
        const double a = sigmoid(z);
        if (hidden_out) (*hidden_out)[h] = a;
        acc += m.w2[h] * a;
    }
    return acc;
}

} // namespace

double ann_loss(const MlpModel& m, std::span<const TrainSample> batch) {
    double acc = 0.0;
    for (const auto& s : batch) {
        const Normalized n = normalize(m, s);
        const double y = forward_normalized(m, n.x);
        acc += (y - n.t) * (y - n.t);
    }
    return acc / std::max<size_t>(batch.size(), 1);
}

std::vector<double> ann_loss_gradient(const MlpModel& m,
                                      std::span<const TrainSample> batch) {
    std::vector<double> g(m.parameter_count(), 0.0);
    std::vector<double> hidden;
    const double scale = 2.0 / std::max<size_t>(batch.size(), 1);
    for (const auto& s : batch) {
        const Normalized n = normalize(m, s);
        const double y = forward_normalized(m, n.x, &hidden);
        const double e = (y - n.t) * scale;
        for (int h = 0; h < m.hidden; ++h) {
            const double a = hidden[h];
            const double da = e * m.w2[h] * a * (1.0 - a);
            g[2 * h] += da * n.x[0];
            g[2 * h + 1] += da * n.x[1];
            g[2 * m.hidden + h] += da;              // b1
            g[3 * m.hidden + h] += e * a;           // w2
        }
        g[4 * m.hidden] += e; // b2
    }
    return g;
}

std::vector<double> ann_get_parameters(const MlpModel& m) {
    std::vector<double> p;
    p.reserve(m.parameter_count());
    p.insert(p.end(), m.w1.begin(), m.w1.end());
    p.insert(p.end(), m.b1.begin(), m.b1.end());
    p.insert(p.end(), m.w2.begin(), m.w2.end());
    p.push_back(m.b2);
    return p;
}

void ann_set_parameters(MlpModel& m, std::span<const double> p) {
    if ((int)p.size() != m.parameter_count())
        throw Error(ErrorCode::ValidationError, "parameter vector size mismatch");
    std::copy(p.begin(), p.begin() + 2 * m.hidden, m.w1.begin());
    std::copy(p.begin() + 2 * m.hidden, p.begin() + 3 * m.hidden, m.b1.begin());
    std::copy(p.begin() + 3 * m.hidden, p.begin() + 4 * m.hidden, m.w2.begin());
    m.b2 = p[4 * m.hidden];
}

MlpModel ann_train(std::span<const TrainSample> data, const TrainOptions& opts) {
    MlpModel m;
    m.hidden = opts.hidden;
    m.w1.assign(2 * opts.hidden, 0.0);
    m.b1.assign(opts.hidden, 0.0);
    m.w2.assign(opts.hidden, 0.0);

    if ((int)data.size() < 10 * m.parameter_count())
        throw Error(ErrorCode::InsufficientObservations,
                    "dataset must hold at least 10 samples per parameter");

    // Normalization ranges from the data.
    m.in_lo[0] = m.in_hi[0] = data[0].cx;
    m.in_lo[1] = m.in_hi[1] = data[0].cy;
    m.out_lo = m.out_hi = data[0].angle_deg;
    for (const auto& s : data) {
        m.in_lo[0] = std::min(m.in_lo[0], s.cx);
        m.in_hi[0] = std::max(m.in_hi[0], s.cx);
        m.in_lo[1] = std::min(m.in_lo[1], s.cy);
        m.in_hi[1] = std::max(m.in_hi[1], s.cy);
        m.out_lo = std::min(m.out_lo, s.angle_deg);
        m.out_hi = std::max(m.out_hi, s.angle_deg);
    }
    for (int k = 0; k < 2; ++k)
        if (m.in_hi[k] - m.in_lo[k] < 1e-12) m.in_hi[k] = m.in_lo[k] + 1.0;
    if (m.out_hi - m.out_lo < 1e-12) m.out_hi = m.out_lo + 1.0;

    // Symmetric fan-in directions with the transition regions spread
    // across the normalized input range (Nguyen-Widrow style).
    RandomStream rng(opts.seed, 17);
    const double beta = 0.7 * std::pow((double)opts.hidden, 0.5);
    for (int h = 0; h < opts.hidden; ++h) {
        double wx = rng.uniform(-1.0, 1.0);
        double wy = rng.uniform(-1.0, 1.0);
        const double norm = std::max(std::hypot(wx, wy), 1e-9);
        m.w1[2 * h] = beta * wx / norm;
        m.w1[2 * h + 1] = beta * wy / norm;
        const double spread =
            opts.hidden > 1 ? 2.0 * h / (opts.hidden - 1.0) - 1.0 : 0.0;
        m.b1[h] = beta * spread;
    }
    const double lim2 = 1.0 / std::sqrt((double)opts.hidden);
    for (double& w : m.w2) w = rng.uniform(-lim2, lim2);
    m.b2 = 0.0;

    // Shuffled split into train/validation.
    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.next_u64() % i]);
    const size_t val_n =
        std::min(data.size() - 1,
                 (size_t)std::llround(opts.validation_fraction * data.size()));
    std::vector<TrainSample> train, val;
    for (size_t i = 0; i < order.size(); ++i)
        (i < val_n ? val : train).push_back(data[order[i]]);

    if (opts.epochs <= 0) {
        m.final_train_loss = ann_loss(m, train);
        m.final_val_loss = val.empty() ? m.final_train_loss : ann_loss(m, val);
        return m;
    }

    double lr = opts.learning_rate;
    size_t batch = std::max(1, opts.batch);
    std::vector<double> velocity(m.parameter_count(), 0.0);
    double prev_loss = ann_loss(m, train);
    std::vector<double> snapshot = ann_get_parameters(m);

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        // One pass of shuffled mini-batches.
        for (size_t i = train.size(); i > 1; --i)
            std::swap(train[i - 1], train[rng.next_u64() % i]);
        for (size_t start = 0; start < train.size(); start += batch) {
            const size_t stop = std::min(start + batch, train.size());
            const auto g = ann_loss_gradient(
                m, std::span(train.data() + start, stop - start));
            auto p = ann_get_parameters(m);
            for (size_t k = 0; k < p.size(); ++k) {
                velocity[k] = opts.momentum * velocity[k] - lr * g[k];
                p[k] += velocity[k];
            }
            ann_set_parameters(m, p);
        }
        const double loss = ann_loss(m, train);
        if (!std::isfinite(loss))
            throw Error(ErrorCode::Divergence,
                        "training diverged to NaN; lower the learning rate");
        if (loss > prev_loss) {
            // Halve the rate and retry from the snapshot so the recorded
            // loss never increases; the momentum restarts from rest and
            // the batch grows once the noisy phase stops paying off.
            ann_set_parameters(m, snapshot);
            std::fill(velocity.begin(), velocity.end(), 0.0);
            lr *= 0.5;
            if (lr < 0.015625 * opts.learning_rate)
                batch = std::min(train.size(), batch * 2);
            if (lr < 1e-14) break;
        } else {
            prev_loss = loss;
            snapshot = ann_get_parameters(m);
            lr = std::min(lr * 1.2, opts.learning_rate);
        }
    }
    ann_set_parameters(m, snapshot);
    m.final_train_loss = prev_loss;
    m.final_val_loss = val.empty() ? prev_loss : ann_loss(m, val);
    return m;
}

double ann_infer(const MlpModel& m, double cx, double cy, bool* extrapolation) {
    if (extrapolation)
        *extrapolation = cx < m.in_lo[0] || cx > m.in_hi[0] || cy < m.in_lo[1] ||
                         cy > m.in_hi[1];
    const TrainSample probe{cx, cy, 0.0};
    const Normalized n = normalize(m, probe);
    const double y = forward_normalized(m, n.x);
    return m.out_lo + 0.5 * (y + 1.0) * (m.out_hi - m.out_lo);
}

std::string to_json(const MlpModel& m) {
    nlohmann::json j;
    j["hidden"] = m.hidden;
    j["w1"] = m.w1;
    j["b1"] = m.b1;
    j["w2"] = m.w2;
    j["b2"] = m.b2;
    j["in_lo"] = {m.in_lo[0], m.in_lo[1]};
    j["in_hi"] = {m.in_hi[0], m.in_hi[1]};
    j["out_lo"] = m.out_lo;
    j["out_hi"] = m.out_hi;
    j["final_train_loss"] = m.final_train_loss;
    j["final_val_loss"] = m.final_val_loss;
    return j.dump(2);
}

MlpModel mlp_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("MLP JSON: ") + e.what());
    }
    MlpModel m;
    m.hidden = j.at("hidden").get<int>();
    m.w1 = j.at("w1").get<std::vector<double>>();
    m.b1 = j.at("b1").get<std::vector<double>>();
    m.w2 = j.at("w2").get<std::vector<double>>();
    m.b2 = j.at("b2").get<double>();
    m.in_lo[0] = j.at("in_lo")[0].get<double>();
    m.in_lo[1] = j.at("in_lo")[1].get<double>();
    m.in_hi[0] = j.at("in_hi")[0].get<double>();
    m.in_hi[1] = j.at("in_hi")[1].get<double>();
    m.out_lo = j.at("out_lo").get<double>();
    m.out_hi = j.at("out_hi").get<double>();
    m.final_train_loss = j.value("final_train_loss", 0.0);
    m.final_val_loss = j.value("final_val_loss", 0.0);
    for (double v : m.w1)
        if (!std::isfinite(v))
            throw Error(ErrorCode::ValidationError, "non-finite weight");
    return m;
}

std::vector<TrainSample> load_dataset_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::IoError, "cannot open " + path);
    std::vector<TrainSample> out;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (header) {
            if (line.rfind("cx,cy,angle_deg", 0) != 0)
                throw Error(ErrorCode::ParseError,
                            path + ": expected header 'cx,cy,angle_deg'");
            header = false;
            continue;
        }
        TrainSample s;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &s.cx, &s.cy, &s.angle_deg) != 3)
            throw Error(ErrorCode::ParseError, path + ": bad row: " + line);
        out.push_back(s);
    }
    return out;
}

void save_dataset_csv(std::span<const TrainSample> data, const std::string& path) {
    std::ofstream out(path);
    if (!out)
        throw Error(ErrorCode::IoError, "cannot write " + path);
    out << "cx,cy,angle_deg\n";
    char buf[96];
    for (const auto& s : data) {
        std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g\n", s.cx, s.cy, s.angle_deg);
        out << buf;
    }
}

} // namespace sunsense::ann
