#include "sunsense/calib.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>

#include <json.hpp>

namespace sunsense::calib {

namespace {

/// Gauss-Newton with numeric Jacobian and step-halving line search.
Eigen::VectorXd gauss_newton(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& residuals,
    Eigen::VectorXd p, double tol = 1e-10, int max_iter = 100) {
    const double fd_step = 1e-6;
    Eigen::VectorXd r = residuals(p);
    double cost = r.squaredNorm();
    for (int it = 0; it < max_iter; ++it) {
        Eigen::MatrixXd J(r.size(), p.size());
        for (int c = 0; c < p.size(); ++c) {
            Eigen::VectorXd q = p;
            const double h = fd_step * std::max(1.0, std::abs(p(c)));
            q(c) += h;
            J.col(c) = (residuals(q) - r) / h;
        }
        const Eigen::MatrixXd JtJ = J.transpose() * J;
        const Eigen::VectorXd step = JtJ.ldlt().solve(-J.transpose() * r);
        if (!step.allFinite())
            throw Error(ErrorCode::IllConditioned, "Gauss-Newton normal matrix singular");

        double scale = 1.0;
        bool improved = false;
        for (int half = 0; half < 24; ++half) {
            const Eigen::VectorXd trial = p + scale * step;
            const Eigen::VectorXd rt = residuals(trial);
            if (rt.squaredNorm() < cost) {
                p = trial;
                r = rt;
                const double old = cost;
                cost = rt.squaredNorm();
                improved = true;
                if (step.norm() * scale < tol * std::max(1.0, p.norm()) ||
                    old - cost < tol * std::max(1.0, old))
                    return p;
                break;
            }
            scale *= 0.5;
        }
        if (!improved) return p; // converged to a local minimum
    }
    return p;
}

Eigen::VectorXd lsq_solve(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                          const char* what) {
    const auto qr = A.colPivHouseholderQr();
    if (qr.rank() < A.cols())
        throw Error(ErrorCode::IllConditioned, what);
    return qr.solve(b);
}

} // namespace

SunAngles spm_invert(const Centroid& c, const SensorGeometry& geom) {
    const double x_mm = (c.x - geom.principal_point_x) * geom.pitch_mm;
    const double y_mm = (c.y - geom.principal_point_y) * geom.pitch_mm;
    return {rad2deg(std::atan(y_mm / geom.focal_length_mm)),
            rad2deg(std::atan(x_mm / geom.focal_length_mm))};
}

SunAngles lsq_geom_apply(const LsqGeomParams& p, double nominal_F_mm,
                         double x_mm, double y_mm) {
    const double F = nominal_F_mm + p.dF_mm;
    if (F <= 0.0)
        throw Error(ErrorCode::ValidationError, "F + dF must be positive");
    return {rad2deg(std::atan((y_mm - p.y_zp_mm) / F)) - p.alpha0_deg,
            rad2deg(std::atan((x_mm - p.x_zp_mm) / F)) - p.beta0_deg};
}

LsqGeomParams lsq_geom_calibrate(std::span<const LsqGeomSample> samples,
                                 double nominal_F_mm) {
    if (samples.size() < 3)
        throw Error(ErrorCode::InsufficientObservations,
                    "need at least 3 samples for the 3 free parameters");
    auto residuals = [&](const Eigen::VectorXd& p) {
        LsqGeomParams g;
        g.dF_mm = p(0);
        g.alpha0_deg = p(1);
        g.beta0_deg = p(2);
        Eigen::VectorXd r(2 * samples.size());
        for (size_t i = 0; i < samples.size(); ++i) {
            const SunAngles est =
                lsq_geom_apply(g, nominal_F_mm, samples[i].x_mm, samples[i].y_mm);
            r(2 * i) = est.alpha_deg - samples[i].truth.alpha_deg;
            r(2 * i + 1) = est.beta_deg - samples[i].truth.beta_deg;
        }
        return r;
    };
    Eigen::VectorXd p0 = Eigen::VectorXd::Zero(3);
    Eigen::VectorXd p;
    try {
        p = gauss_newton(residuals, p0);
    } catch (const Error&) {
        throw Error(ErrorCode::DegenerateGeometry,
                    "degenerate samples: normal equations are rank-deficient");
    }
    LsqGeomParams out;
    out.dF_mm = p(0);
    out.alpha0_deg = p(1);
    out.beta0_deg = p(2);
    return out;
}

features::BalancePair qpd_gap_balance(double a, double b, double c, double d,
                                      const std::array<double, 4>& lit_areas,
                                      double gap_area_x, double gap_area_y,
                                      double k_g) {
    const double signal_sum = a + b + c + d;
    const double area_sum =
        lit_areas[0] + lit_areas[1] + lit_areas[2] + lit_areas[3];
    if (signal_sum <= 0.0 || area_sum <= 0.0)
        throw Error(ErrorCode::DarkInput, "zero quadrant signal or lit area");
    const auto plain = features::voltage_balance(a, b, c, d);
    const double scale = signal_sum / area_sum / k_g;
    return {plain.s_a + gap_area_x * scale, plain.s_b + gap_area_y * scale};
}

double slit_correct(const SlitParams& p, const SunAngles& measured) {
    if (std::abs(measured.alpha_deg) >= 89.9 || std::abs(measured.beta_deg) >= 89.9)
        throw Error(ErrorCode::OutOfFov, "measured angle too close to 90 deg");
    const double ta = std::tan(deg2rad(measured.alpha_deg));
    const double tb = std::tan(deg2rad(measured.beta_deg));
    const double td = std::tan(deg2rad(p.delta_deg));
    const double inner =
        std::atan(ta * td / (1.0 - tb * td)) - deg2rad(p.theta_deg);
    const double t_corr = (p.f_prime / p.f) * (ta + tb * std::tan(inner));
    return rad2deg(std::atan(t_corr));
}

MultiSlitResult multi_slit_angles(const MultiSlitParams& p,
                                  std::span<const double> spot_x_mm) {
    if (spot_x_mm.empty() || p.d_mm.size() < spot_x_mm.size())
        throw Error(ErrorCode::DarkInput, "no slit measurements resolved");
    MultiSlitResult res;
    double acc = 0.0;
    for (size_t i = 0; i < spot_x_mm.size(); ++i) {
        // 1-based parity: odd slits sit on the upper mask plane h + t.
        const double plane = (i % 2 == 0) ? p.h_mm + p.t_mm : p.h_mm;
        const double th = rad2deg(std::atan((spot_x_mm[i] - p.d_mm[i]) / plane));
        res.per_slit_deg.push_back(th);
        acc += th;
    }
    res.fused_deg = acc / res.per_slit_deg.size();
    return res;
}

void VSlitParams::validate() const {
    // rotation must be orthonormal within 1e-6
    const auto& a = rotation;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double dot = 0.0;
            for (int k = 0; k < 3; ++k) dot += a[3 * k + i] * a[3 * k + j];
            const double expect = i == j ? 1.0 : 0.0;
            if (std::abs(dot - expect) > 1e-6)
                throw Error(ErrorCode::ValidationError,
                            "V-slit rotation is not orthonormal");
        }
    if (focal_h_mm <= 0.0)
        throw Error(ErrorCode::ValidationError, "focal length must be positive");
}

namespace {

struct VSlitFrame {
    double a11, a12, a13, a21, a22, a23, a31, a32, a33;
    double t1, t2, t3;
    double td, y;
};

VSlitFrame vslit_frame(const VSlitParams& p) {
    p.validate();
    const auto& a = p.rotation;
    return {a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8],
            p.displacement[0], p.displacement[1],
            p.focal_h_mm + p.displacement[2], // error offset from (0, 0, h)
            std::tan(deg2rad(p.delta_deg)), p.slit_length_y_mm};
}

} // namespace

SunAngles vslit_angles(const VSlitParams& p, double x1_mm, double x2_mm) {
    const VSlitFrame f = vslit_frame(p);
    const double u = f.t1 + f.y * f.td - x2_mm;
    const double den_a = f.a13 * u + f.a23 * f.t2 + f.a33 * f.t3;
    if (std::abs(den_a) < 1e-12)
        throw Error(ErrorCode::DegenerateGeometry, "vanishing alpha denominator");
    const double ta = (f.a11 * u + f.a21 * f.t2 + f.a31 * f.t3) / den_a;

    const double c1 = f.a11 - f.a12 * f.td - f.a13 * ta;
    const double c2 = f.a21 - f.a22 * f.td - f.a23 * ta;
    const double c3 = f.a31 - f.a32 * f.td - f.a33 * ta;
    const double v = f.y * f.td - x1_mm;
    const double den_b =
        (f.a13 * v + f.a13 * f.t1 + f.a23 * f.t2 + f.a33 * f.t3) * f.td;
    if (std::abs(den_b) < 1e-12)
        throw Error(ErrorCode::DegenerateGeometry, "vanishing beta denominator");
    const double num_b =
        f.y * f.td + c1 * f.t1 + c2 * f.t2 + c3 * f.t3 + c1 * v;
    const double tb = num_b / den_b;
    return {rad2deg(std::atan(ta)), rad2deg(std::atan(tb))};
}

std::pair<double, double> vslit_forward(const VSlitParams& p,
                                        const SunAngles& truth) {
    const VSlitFrame f = vslit_frame(p);
    const double ta = std::tan(deg2rad(truth.alpha_deg));
    const double tb = std::tan(deg2rad(truth.beta_deg));

    const double denom_u = ta * f.a13 - f.a11;
    if (std::abs(denom_u) < 1e-12)
        throw Error(ErrorCode::DegenerateGeometry, "forward model degenerate in alpha");
    const double u = (f.a21 * f.t2 + f.a31 * f.t3 -
                      ta * (f.a23 * f.t2 + f.a33 * f.t3)) /
                     denom_u;
    const double x2 = f.t1 + f.y * f.td - u;

    const double c1 = f.a11 - f.a12 * f.td - f.a13 * ta;
    const double c2 = f.a21 - f.a22 * f.td - f.a23 * ta;
    const double c3 = f.a31 - f.a32 * f.td - f.a33 * ta;
    const double denom_v = tb * f.td * f.a13 - c1;
    if (std::abs(denom_v) < 1e-12)
        throw Error(ErrorCode::DegenerateGeometry, "forward model degenerate in beta");
    const double v = (f.y * f.td + c1 * f.t1 + c2 * f.t2 + c3 * f.t3 -
                      tb * f.td * (f.a13 * f.t1 + f.a23 * f.t2 + f.a33 * f.t3)) /
                     denom_v;
    const double x1 = f.y * f.td - v;
    return {x1, x2};
}

SunAngles nslit_angles(const NSlitParams& p, double l_mm, double c_mm,
                       double r_mm) {
    if (!std::isfinite(l_mm) || !std::isfinite(c_mm) || !std::isfinite(r_mm))
        throw Error(ErrorCode::InsufficientObservations, "missing slit centroid");
    const double td = std::tan(deg2rad(p.delta_deg));
    const double dc = c_mm - p.c_ref_mm;
    const double ta = dc / p.h_mm * p.refraction_K;
    const double dl = l_mm - p.l_ref_mm;
    const double dr = r_mm - p.r_ref_mm;
    const double tb =
        ((dl + dr) / (2.0 * p.h_mm * td) - dc / (p.h_mm * td)) * p.refraction_K;
    return {rad2deg(std::atan(ta)), rad2deg(std::atan(tb))};
}

SunAngles camera_angles(double f_px, double px, double py, double u, double v) {
    if (f_px <= 0.0)
        throw Error(ErrorCode::ValidationError, "focal length must be positive");
    const double phi = std::atan((u - px) / f_px);
    const double theta = std::atan(-(v - py) / f_px);
    return {rad2deg(theta), rad2deg(phi)};
}

NonPhysicalModel fit_nonphysical(std::span<const FitSample> samples, FitKind kind,
                                 int order, double fov_min_deg, double fov_max_deg) {
    NonPhysicalModel m;
    m.kind = kind;
    m.order = order;
    m.fov_min_deg = fov_min_deg;
    m.fov_max_deg = fov_max_deg;
    if (samples.empty())
        throw Error(ErrorCode::InsufficientObservations, "no samples");
    m.feature_min = samples[0].feature;
    m.feature_max = samples[0].feature;
    for (const auto& s : samples) {
        m.feature_min = std::min(m.feature_min, s.feature);
        m.feature_max = std::max(m.feature_max, s.feature);
    }

    const int n = static_cast<int>(samples.size());
    switch (kind) {
        case FitKind::Linear: {
            if (n < 2)
                throw Error(ErrorCode::InsufficientObservations, "need >= 2 samples");
            Eigen::MatrixXd A(n, 2);
            Eigen::VectorXd b(n);
            for (int i = 0; i < n; ++i) {
                A(i, 0) = 1.0;
                A(i, 1) = samples[i].feature;
                b(i) = samples[i].angle_deg;
            }
            const Eigen::VectorXd x = lsq_solve(A, b, "degenerate linear fit");
            m.coeffs = {x(0), x(1)};
            return m;
        }
        case FitKind::Polynomial: {
            if (order < 1 || order > 11)
                throw Error(ErrorCode::ValidationError,
                            "polynomial degree must be within [1, 11]");
            if (n <= order)
                throw Error(ErrorCode::InsufficientObservations,
                            "sample count must exceed the free parameters");
            // Fit in a unit-scaled basis for conditioning, then expand the
            // coefficients back to the raw monomials.
            const double scale =
                std::max(std::abs(m.feature_min), std::abs(m.feature_max));
            const double s_basis = scale > 0.0 ? scale : 1.0;
            Eigen::MatrixXd A(n, order + 1);
            Eigen::VectorXd b(n);
            for (int i = 0; i < n; ++i) {
                double p = 1.0;
                for (int c = 0; c <= order; ++c) {
                    A(i, c) = p;
                    p *= samples[i].feature / s_basis;
                }
                b(i) = samples[i].angle_deg;
            }
            const Eigen::VectorXd x = lsq_solve(
                A, b, "ill-conditioned Vandermonde: reduce the polynomial degree");
            m.coeffs.resize(order + 1);
            double inv = 1.0;
            for (int c = 0; c <= order; ++c) {
                m.coeffs[c] = x(c) * inv;
                inv /= s_basis;
            }
            return m;
        }
        case FitKind::Trigonometric: {
            // Direct relation: sin(|angle|) = c0 + c1 * feature; the caller's
            // quadrant sign recovers the branch at evaluation time.
            if (n < 2)
                throw Error(ErrorCode::InsufficientObservations, "need >= 2 samples");
            Eigen::MatrixXd A(n, 2);
            Eigen::VectorXd b(n);
            for (int i = 0; i < n; ++i) {
                A(i, 0) = 1.0;
                A(i, 1) = samples[i].feature;
                b(i) = std::sin(std::abs(deg2rad(samples[i].angle_deg)));
            }
            const Eigen::VectorXd x = lsq_solve(A, b, "degenerate trig fit");
            m.coeffs = {x(0), x(1)};
            return m;
        }
        case FitKind::Fourier: {
            if (order < 1)
                throw Error(ErrorCode::ValidationError, "Fourier order must be >= 1");
            const int cols = 1 + 2 * order;
            if (n < cols)
                throw Error(ErrorCode::InsufficientObservations,
                            "sample count must exceed the free parameters");
            const double span = std::max(m.feature_max - m.feature_min, 1e-12);
            m.feature_scale = 2.0 * kPi / span;
            Eigen::MatrixXd A(n, cols);
            Eigen::VectorXd b(n);
            for (int i = 0; i < n; ++i) {
                A(i, 0) = 0.5;
                for (int k = 1; k <= order; ++k) {
                    const double arg = k * m.feature_scale * samples[i].feature;
                    A(i, 2 * k - 1) = std::cos(arg);
                    A(i, 2 * k) = std::sin(arg);
                }
                b(i) = samples[i].angle_deg;
            }
            const Eigen::VectorXd x = lsq_solve(A, b, "degenerate Fourier fit");
            m.coeffs.assign(x.data(), x.data() + x.size());
            return m;
        }
        case FitKind::SigmoidComposite: {
            // Sigmoid + first-order Fourier terms + constant offset.
            if (n < 7)
                throw Error(ErrorCode::InsufficientObservations, "need >= 7 samples");
            const double span = std::max(m.feature_max - m.feature_min, 1e-12);
            m.feature_scale = 2.0 * kPi / span;
            const double f_mid = 0.5 * (m.feature_min + m.feature_max);

            // Separable structure: given the sigmoid shape (k, f0), the
            // remaining parameters are linear.
            auto linear_fit = [&](double k, double f0, Eigen::VectorXd* lin) {
                Eigen::MatrixXd A(n, 4);
                Eigen::VectorXd b(n);
                for (int i = 0; i < n; ++i) {
                    const double f = samples[i].feature;
                    A(i, 0) = 1.0 / (1.0 + std::exp(-k * (f - f0)));
                    A(i, 1) = std::sin(m.feature_scale * f);
                    A(i, 2) = std::cos(m.feature_scale * f);
                    A(i, 3) = 1.0;
                    b(i) = samples[i].angle_deg;
                }
                *lin = A.colPivHouseholderQr().solve(b);
                Eigen::VectorXd r = A * *lin - b;
                return r;
            };
            auto residuals = [&](const Eigen::VectorXd& p) {
                Eigen::VectorXd lin;
                return linear_fit(p(0), p(1), &lin);
            };
            Eigen::VectorXd p0(2);
            p0 << 4.0 / span, f_mid;
            const Eigen::VectorXd p = gauss_newton(residuals, p0);
            Eigen::VectorXd lin;
            linear_fit(p(0), p(1), &lin);
            m.coeffs = {lin(0), lin(1), lin(2), lin(3), p(0), p(1)};
            return m;
        }
    }
    throw Error(ErrorCode::ValidationError, "unknown fit kind");
}

double eval_nonphysical(const NonPhysicalModel& m, double feature,
                        int quadrant_sign, bool* extrapolated) {
    if (extrapolated)
        *extrapolated = feature < m.feature_min || feature > m.feature_max;
    switch (m.kind) {
        case FitKind::Linear:
            return m.coeffs[0] + m.coeffs[1] * feature;
        case FitKind::Polynomial: {
            double acc = 0.0;
            for (size_t c = m.coeffs.size(); c-- > 0;)
                acc = acc * feature + m.coeffs[c];
            return acc;
        }
        case FitKind::Trigonometric: {
            const double s =
                std::clamp(m.coeffs[0] + m.coeffs[1] * feature, -1.0, 1.0);
            const double mag = rad2deg(std::asin(s));
            return quadrant_sign >= 0 ? mag : -mag;
        }
        case FitKind::Fourier: {
            double acc = 0.5 * m.coeffs[0];
            for (int k = 1; 2 * k < (int)m.coeffs.size(); ++k) {
                const double arg = k * m.feature_scale * feature;
                acc += m.coeffs[2 * k - 1] * std::cos(arg) +
                       m.coeffs[2 * k] * std::sin(arg);
            }
            return acc;
        }
        case FitKind::SigmoidComposite: {
            const double k = m.coeffs[4], f0 = m.coeffs[5];
            return m.coeffs[0] / (1.0 + std::exp(-k * (feature - f0))) +
                   m.coeffs[1] * std::sin(m.feature_scale * feature) +
                   m.coeffs[2] * std::cos(m.feature_scale * feature) + m.coeffs[3];
        }
    }
    throw Error(ErrorCode::ValidationError, "unknown fit kind");
}

LutModel lut_build(std::span<const FitSample> samples, double interval_deg,
                   int degree, double lo_deg, double hi_deg) {
    if (interval_deg <= 0.0 || hi_deg <= lo_deg)
        throw Error(ErrorCode::ValidationError, "bad LUT grid");
    LutModel m;
    m.lo_deg = lo_deg;
    m.hi_deg = hi_deg;
    m.interval_deg = interval_deg;
    m.degree = degree;
    const int nodes = (int)std::lround((hi_deg - lo_deg) / interval_deg) + 1;
    const double support = 0.5 * interval_deg * (degree + 2);

    for (int k = 0; k < nodes; ++k) {
        const double node = lo_deg + k * interval_deg;
        std::vector<const FitSample*> local;
        for (const auto& s : samples)
            if (std::abs(s.feature - node) <= support) local.push_back(&s);
        if ((int)local.size() <= degree)
            throw Error(ErrorCode::InsufficientObservations,
                        "samples do not span the LUT grid");
        Eigen::MatrixXd A(local.size(), degree + 1);
        Eigen::VectorXd b(local.size());
        for (size_t i = 0; i < local.size(); ++i) {
            const double u = local[i]->feature - node; // centered basis
            double p = 1.0;
            for (int c = 0; c <= degree; ++c) {
                A(i, c) = p;
                p *= u;
            }
            b(i) = local[i]->angle_deg;
        }
        const Eigen::VectorXd x =
            lsq_solve(A, b, "ill-conditioned node polynomial");
        m.node_polys.emplace_back(x.data(), x.data() + x.size());
    }
    return m;
}

namespace {

double lut_node_eval(const LutModel& m, int node, double q) {
    const double u = q - (m.lo_deg + node * m.interval_deg);
    double acc = 0.0;
    const auto& c = m.node_polys[node];
    for (size_t i = c.size(); i-- > 0;) acc = acc * u + c[i];
    return acc;
}

} // namespace

double lut_eval(const LutModel& m, double query_deg) {
    if (query_deg < m.lo_deg - 1e-12 || query_deg > m.hi_deg + 1e-12)
        throw Error(ErrorCode::ExtrapolationError, "query outside the LUT grid");
    const double pos = (query_deg - m.lo_deg) / m.interval_deg;
    const int k0 = std::clamp((int)std::floor(pos), 0,
                              (int)m.node_polys.size() - 2);
    // Weighted sum of the two neighboring node polynomials, linear in the
    // angular distance to each node.
    const double w1 = pos - k0;
    const double w0 = 1.0 - w1;
    return w0 * lut_node_eval(m, k0, query_deg) +
           w1 * lut_node_eval(m, k0 + 1, query_deg);
}

double refraction_residual(const RefractionStack& s, double theta_deg,
                           double l_mm) {
    const double th = deg2rad(theta_deg);
    const double sin_r = std::sin(th) / s.n2;
    if (std::abs(sin_r) >= 1.0)
        return std::numeric_limits<double>::infinity();
    return (s.h2_mm + s.h4_mm) * std::tan(th) +
           s.h3_mm * std::tan(std::asin(sin_r)) - l_mm;
}

double refraction_solve_incidence(const RefractionStack& s, double l_mm) {
    if (l_mm < 0.0)
        throw Error(ErrorCode::ValidationError, "landing offset must be >= 0");
    double lo = 0.0, hi = 80.0;
    double flo = refraction_residual(s, lo, l_mm);
    double fhi = refraction_residual(s, hi, l_mm);
    if (flo > 0.0 || fhi < 0.0)
        throw Error(ErrorCode::SolverError,
                    "incidence root not bracketed on [0, 80] deg");
    for (int it = 0; it < s.max_iterations; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = refraction_residual(s, mid, l_mm);
        if (fm >= 0.0) hi = mid;
        else lo = mid;
        if (hi - lo < 1e-8) break;
    }
    // Newton polish from the bracket midpoint.
    double th = 0.5 * (lo + hi);
    for (int it = 0; it < 30; ++it) {
        const double f0 = refraction_residual(s, th, l_mm);
        if (std::abs(f0) < s.tol) break;
        const double h = 1e-7;
        const double d = (refraction_residual(s, th + h, l_mm) - f0) / h;
        if (d == 0.0) break;
        double next = th - f0 / d;
        if (next < lo || next > hi) next = 0.5 * (lo + hi);
        th = next;
    }
    if (std::abs(refraction_residual(s, th, l_mm)) > 1e3 * s.tol)
        throw Error(ErrorCode::SolverError,
                    "refraction solver did not converge; last bracket [" +
                        std::to_string(lo) + ", " + std::to_string(hi) + "] deg");
    return th;
}

double refraction_k(const RefractionStack& s, double theta_deg) {
    const double th = deg2rad(theta_deg);
    if (th == 0.0) return 1.0;
    const double t2 = std::tan(std::asin(s.n1 * std::sin(th) / s.n2));
    const double t3 = std::tan(std::asin(s.n1 * std::sin(th) / s.n3));
    const double denom = s.h2_mm * std::tan(th) + s.h3_mm * t2 + s.h4_mm * t3;
    return s.height_mm() * std::tan(th) / denom;
}

RefractionCorrected refraction_correct(const RefractionStack& s, double y1m_mm,
                                       double y2m_mm, double y1r_mm,
                                       double y2r_mm, double h_mm) {
    const double d1 = y1m_mm - y1r_mm;
    const double d2 = y2m_mm - y2r_mm;
    RefractionCorrected out;
    out.theta_deg = refraction_solve_incidence(s, std::abs(d1));
    out.k = refraction_k(s, out.theta_deg);
    const double kd1 = out.k * d1;
    const double kdd = out.k * (d2 - d1);
    out.mu_deg = rad2deg(std::atan(kd1 / h_mm));
    out.nu_deg = rad2deg(std::atan(kdd / h_mm));
    out.beta_deg = rad2deg(
        std::atan(kd1 / std::sqrt(kdd * kdd + h_mm * h_mm)));
    return out;
}

double periodic_phase_compensate(double alpha1_deg, double alpha2_deg,
                                 double error_amp_k, double error_phase_t,
                                 const std::array<double, 4>& abcd,
                                 double alpha_meas_deg) {
    const double a2_bar =
        alpha2_deg +
        error_amp_k * std::sin(4.0 * kPi * deg2rad(alpha_meas_deg) + error_phase_t);
    const double as = alpha1_deg + a2_bar;
    const double tas = std::tan(deg2rad(as));
    const double den = abcd[2] * tas - abcd[0];
    if (std::abs(den) < 1e-12)
        throw Error(ErrorCode::DegenerateGeometry,
                    "singular configuration: c tan(alpha_s) = a");
    return rad2deg(std::atan((abcd[1] - abcd[3] * tas) / den));
}

Centroid shadow_center_correct(const SensorGeometry& geom, const Centroid& raw,
                               int iterations, bool* unreliable) {
    const double t = geom.mask_thickness_mm;
    if (unreliable) *unreliable = false;
    if (t <= 0.0) return raw;
    const double x_mm = raw.x * geom.pitch_mm;
    const double y_mm = raw.y * geom.pitch_mm;
    const double r_raw = std::hypot(x_mm, y_mm);
    if (r_raw == 0.0) return raw;
    const double ux = x_mm / r_raw, uy = y_mm / r_raw;

    // The measured lens center sits mid-way between the upper and lower
    // projections; peel off half the center gap, re-estimating the
    // incidence from the corrected radius.
    double r_corr = r_raw;
    for (int it = 0; it < iterations; ++it) {
        const double tan_inc = r_corr / geom.focal_length_mm;
        r_corr = r_raw - 0.5 * t * tan_inc;
    }
    const double tan_inc = r_corr / geom.focal_length_mm;
    // Elevation below 5 degrees (incidence beyond 85) is unreliable.
    if (unreliable && tan_inc > std::tan(deg2rad(85.0))) *unreliable = true;

    Centroid out = raw;
    out.x = ux * r_corr / geom.pitch_mm;
    out.y = uy * r_corr / geom.pitch_mm;
    return out;
}

namespace {

const char* kind_name(FitKind k) {
    switch (k) {
        case FitKind::Linear: return "linear";
        case FitKind::Polynomial: return "polynomial";
        case FitKind::Trigonometric: return "trigonometric";
        case FitKind::Fourier: return "fourier";
        case FitKind::SigmoidComposite: return "sigmoid-composite";
    }
    return "polynomial";
}

FitKind kind_from_name(const std::string& s) {
    if (s == "linear") return FitKind::Linear;
    if (s == "polynomial") return FitKind::Polynomial;
    if (s == "trigonometric") return FitKind::Trigonometric;
    if (s == "fourier") return FitKind::Fourier;
    if (s == "sigmoid-composite") return FitKind::SigmoidComposite;
    throw Error(ErrorCode::ParseError, "unknown model kind '" + s + "'");
}

} // namespace

std::string nonphysical_to_json(const NonPhysicalModel& m, const std::string& axis,
                                const std::string& metadata) {
    nlohmann::json j;
    j["kind"] = kind_name(m.kind);
    j["axis"] = axis;
    j["order"] = m.order;
    j["coefficients"] = m.coeffs;
    j["feature_scale"] = m.feature_scale;
    j["fov"] = {m.fov_min_deg, m.fov_max_deg};
    j["feature_range"] = {m.feature_min, m.feature_max};
    j["metadata"] = metadata;
    return j.dump(2);
}

NonPhysicalModel nonphysical_from_json(const std::string& text, std::string* axis) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("model JSON: ") + e.what());
    }
    NonPhysicalModel m;
    m.kind = kind_from_name(j.at("kind").get<std::string>());
    m.order = j.value("order", 1);
    m.coeffs = j.at("coefficients").get<std::vector<double>>();
    m.feature_scale = j.value("feature_scale", 1.0);
    if (j.contains("fov")) {
        m.fov_min_deg = j["fov"][0].get<double>();
        m.fov_max_deg = j["fov"][1].get<double>();
    }
    if (j.contains("feature_range")) {
        m.feature_min = j["feature_range"][0].get<double>();
        m.feature_max = j["feature_range"][1].get<double>();
    }
    if (axis) *axis = j.value("axis", std::string("alpha"));
    return m;
}

} // namespace sunsense::calib
