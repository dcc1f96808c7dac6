#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "sunsense/features.hpp"

namespace sunsense::features {

namespace {

using cd = std::complex<double>;

// Direct DFT; signal lengths here are a few hundred samples at most.
std::vector<cd> dft(std::span<const double> x, size_t out_len) {
    std::vector<cd> X(out_len);
    const size_t n = out_len;
    for (size_t k = 0; k < n; ++k) {
        cd acc(0.0, 0.0);
        for (size_t m = 0; m < x.size(); ++m) {
            const double ang = -2.0 * kPi * (double)(k * m % n) / (double)n;
            acc += x[m] * cd(std::cos(ang), std::sin(ang));
        }
        X[k] = acc;
    }
    return X;
}

} // namespace

double linear_phase_delay(std::span<const double> reference,
                          std::span<const double> shifted, double dx) {
    if (reference.size() != shifted.size() || reference.size() < 4)
        throw Error(ErrorCode::ValidationError, "signals must share a length >= 4");
    const size_t n = reference.size();
    const auto s0 = dft(reference, n);
    const auto sa = dft(shifted, n);

    double max_mag = 0.0;
    for (const auto& v : s0) max_mag = std::max(max_mag, std::abs(v));
    if (max_mag <= 0.0)
        throw Error(ErrorCode::SpectralDegeneracy, "reference spectrum is empty");

    // Unwrapped phase of S_a / S_0 over the contiguous well-conditioned
    // low-frequency bins; weak reference bins are excluded.
    std::vector<double> ks, psis;
    double prev = 0.0;
    double offset = 0.0;
    for (size_t k = 1; k <= n / 2; ++k) {
        if (std::abs(s0[k]) <= 1e-3 * max_mag) break;
        const cd y = sa[k] / s0[k];
        double phi = std::arg(y) + offset;
        while (phi - prev > kPi) {
            phi -= 2.0 * kPi;
            offset -= 2.0 * kPi;
        }
        while (phi - prev < -kPi) {
            phi += 2.0 * kPi;
            offset += 2.0 * kPi;
        }
        ks.push_back((double)k);
        psis.push_back(phi);
        prev = phi;
    }
    if (ks.size() < 2)
        throw Error(ErrorCode::SpectralDegeneracy,
                    "no usable bins for the phase fit");

    // LSQ line fit; the slope carries the shift.
    const size_t m = ks.size();
    double sk = 0, sp = 0, skk = 0, skp = 0;
    for (size_t i = 0; i < m; ++i) {
        sk += ks[i];
        sp += psis[i];
        skk += ks[i] * ks[i];
        skp += ks[i] * psis[i];
    }
    const double denom = m * skk - sk * sk;
    const double slope = (m * skp - sk * sp) / denom;
    const double alpha = -slope * (double)n / (2.0 * kPi);
    return alpha * dx;
}

double eigen_delay(std::span<const double> r1, std::span<const double> r2,
                   double dx, const EigenDelayOptions& opts) {
    const size_t n = r1.size();
    if (n != r2.size() || n < 8)
        throw Error(ErrorCode::ValidationError, "signals must share a length >= 8");
    const size_t kx = 2 * n - 1;

    const auto R1 = dft(r1, kx);
    const auto R2 = dft(r2, kx);

    // Circular cross-correlation r12[m] = sum_n r1[n] r2[n+m].
    std::vector<cd> cross_spec(kx);
    for (size_t k = 0; k < kx; ++k) cross_spec[k] = std::conj(R1[k]) * R2[k];
    std::vector<double> r12(kx, 0.0);
    for (size_t m = 0; m < kx; ++m) {
        cd acc(0.0, 0.0);
        for (size_t k = 0; k < kx; ++k) {
            const double ang = 2.0 * kPi * (double)(k * m % kx) / (double)kx;
            acc += cross_spec[k] * cd(std::cos(ang), std::sin(ang));
        }
        r12[m] = acc.real() / (double)kx;
    }

    // Frequency-domain correlation of the squared cross-correlation:
    // R_x[l] retains the delay as a linear phase across lags.
    std::vector<cd> rx(n);
    for (size_t l = 0; l < n; ++l) {
        cd acc(0.0, 0.0);
        for (size_t m = 0; m < kx; ++m) {
            const double ang = -2.0 * kPi * (double)(m * l % kx) / (double)kx;
            acc += r12[m] * r12[m] * cd(std::cos(ang), std::sin(ang));
        }
        rx[l] = acc;
    }

    // Hermitian Toeplitz covariance from the lag sequence.
    Eigen::MatrixXcd cov(n, n);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) {
            const long d = (long)i - (long)j;
            cov(i, j) = d >= 0 ? rx[d] : std::conj(rx[-d]);
        }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(cov);
    if (es.info() != Eigen::Success)
        throw Error(ErrorCode::DegenerateSpectrum, "eigendecomposition failed");
    const Eigen::VectorXd evals = es.eigenvalues();
    const double lam_max = evals(n - 1);
    const double trace = evals.sum();
    if (trace <= 0.0 || lam_max - evals(0) < 1e-9 * std::abs(trace))
        throw Error(ErrorCode::DegenerateSpectrum,
                    "signal/noise subspace split is ambiguous");

    // Noise subspace: eigenvectors below the floor fraction of the largest.
    std::vector<int> noise_idx;
    for (size_t i = 0; i < n; ++i)
        if (evals(i) < opts.noise_floor_frac * lam_max)
            noise_idx.push_back((int)i);
    if (noise_idx.empty())
        throw Error(ErrorCode::DegenerateSpectrum, "empty noise subspace");
    Eigen::MatrixXcd En(n, noise_idx.size());
    for (size_t c = 0; c < noise_idx.size(); ++c)
        En.col(c) = es.eigenvectors().col(noise_idx[c]);

    // |S[k]|^2 from the reference; b(tau) truncated to length n.
    std::vector<double> s2(n);
    for (size_t k = 0; k < n; ++k) s2[k] = std::norm(R1[k]);

    auto cost = [&](double tau) {
        Eigen::VectorXcd b(n);
        for (size_t k = 0; k < n; ++k) {
            const double ang = -2.0 * kPi * (double)k * tau / (double)kx;
            b(k) = s2[k] * cd(std::cos(ang), std::sin(ang));
        }
        return (b.adjoint() * En).squaredNorm();
    };

    // Coarse grid, then parabolic refinement around the minimum.
    double best_tau = opts.search_min;
    double best_cost = cost(best_tau);
    for (double tau = opts.search_min; tau <= opts.search_max + 1e-12;
         tau += opts.coarse_step) {
        const double c = cost(tau);
        if (c < best_cost) {
            best_cost = c;
            best_tau = tau;
        }
    }
    const double h = opts.coarse_step;
    const double cm = cost(best_tau - h), cp = cost(best_tau + h);
    const double denom = cm - 2.0 * best_cost + cp;
    double refined = best_tau;
    if (denom > 0.0) {
        const double delta = 0.5 * (cm - cp) / denom;
        if (std::abs(delta) <= 1.0) refined = best_tau + delta * h;
    }
    return refined * dx;
}

} // namespace sunsense::features
