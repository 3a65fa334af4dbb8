// Classical Kalman-Bucy reference for the linear-Gaussian oscillator case.
//
// State x = (Q, P, theta): oscillator quadratures plus the classical signal.
// The same Brownian increment that drives the signal also kicks the momentum
// (the signal enters the system as a differential), which is why the process
// noise has off-diagonal sigma^2 entries; the measurement back-action adds an
// independent kick of intensity sigma_gamma_sq to the momentum alone. The
// observation is dY = Q dt + sqrt(gamma) dW.
#pragma once

#include <cmath>
#include <vector>

#include "qfilter/rng.hpp"
#include "qfilter/common.hpp"

namespace qfilter {

using Vector3 = Eigen::Vector3d;
using Matrix3 = Eigen::Matrix3d;

struct KalmanParams {
    double omega = 0.0;   // oscillator frequency
    double upsilon = 0.0; // signal relaxation rate
    double sigma = 0.0;   // signal diffusion
    double gamma = 0.0;   // measurement noise intensity
    double sigma_gamma_sq = 0.0; // momentum back-action intensity
    // Alternate drift sign for the momentum-signal coupling, kept for
    // comparison; the default is the one consistent with dP = -w^2 Q dt +
    // dtheta + (kick), where dtheta = -upsilon theta dt + sigma dw.
    bool flipped_signal_drift = false;

    // Back-action intensity fixed by the measurement strength: hbar^2/(4 gamma).
    static KalmanParams standard(double hbar, double omega, double upsilon,
                                 double sigma, double gamma) {
        if (!(gamma > 0.0)) throw model_error("KalmanParams: gamma must be > 0");
        if (!(hbar > 0.0)) throw model_error("KalmanParams: hbar must be > 0");
        KalmanParams p;
        p.omega = omega;
        p.upsilon = upsilon;
        p.sigma = sigma;
        p.gamma = gamma;
        p.sigma_gamma_sq = hbar * hbar / (4.0 * gamma);
        return p;
    }

    // Explicit back-action intensity (0 recovers the purely classical model).
    static KalmanParams with_backaction(double omega, double upsilon,
                                        double sigma, double gamma,
                                        double sigma_gamma_sq) {
        if (!(gamma > 0.0)) throw model_error("KalmanParams: gamma must be > 0");
        if (sigma_gamma_sq < 0.0)
            throw model_error("KalmanParams: sigma_gamma_sq must be >= 0");
        KalmanParams p;
        p.omega = omega;
        p.upsilon = upsilon;
        p.sigma = sigma;
        p.gamma = gamma;
        p.sigma_gamma_sq = sigma_gamma_sq;
        return p;
    }

    Matrix3 drift() const {
        Matrix3 a;
        double s = flipped_signal_drift ? upsilon : -upsilon;
        a << 0.0, 1.0, 0.0,
             -omega * omega, 0.0, s,
             0.0, 0.0, -upsilon;
        return a;
    }

    Matrix3 process_noise() const {
        Matrix3 u = Matrix3::Zero();
        double s2 = sigma * sigma;
        u(1, 1) = s2 + sigma_gamma_sq;
        u(1, 2) = u(2, 1) = s2;
        u(2, 2) = s2;
        return u;
    }
};

struct KalmanState {
    Vector3 mean = Vector3::Zero();
    Matrix3 cov = Matrix3::Zero();
};

// dK/dt = A K + K A^T + U - K c c^T K / gamma with c = (1,0,0).
inline Matrix3 riccati_rhs(const KalmanParams& p, const Matrix3& k) {
    Matrix3 a = p.drift();
    Vector3 kc = k.col(0);
    return a * k + k * a.transpose() + p.process_noise() -
           kc * kc.transpose() / p.gamma;
}

// One filter step consuming the raw measurement increment dy. Covariance by
// RK4 on the Riccati flow, mean by Euler with the pre-step gain. Returns the
// innovation increment (variance dt/gamma under the model).
inline double kalman_step(const KalmanParams& p, KalmanState& st, double dy,
                          double dt) {
    double innovation = (dy - st.mean(0) * dt) / p.gamma;
    st.mean += p.drift() * st.mean * dt + st.cov.col(0) * innovation;

    Matrix3 k1 = riccati_rhs(p, st.cov);
    Matrix3 k2 = riccati_rhs(p, st.cov + 0.5 * dt * k1);
    Matrix3 k3 = riccati_rhs(p, st.cov + 0.5 * dt * k2);
    Matrix3 k4 = riccati_rhs(p, st.cov + dt * k3);
    st.cov += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    st.cov = 0.5 * (st.cov + st.cov.transpose()).eval();
    return innovation;
}

// Integrate the Riccati flow to its fixed point.
inline Matrix3 stationary_riccati(const KalmanParams& p, const Matrix3& k0,
                                  double dt = 1e-3, double max_time = 1e4,
                                  double tol = 1e-12) {
    Matrix3 k = k0;
    double t = 0.0;
    while (t < max_time) {
        Matrix3 k1 = riccati_rhs(p, k);
        if (k1.cwiseAbs().maxCoeff() <= tol) return k;
        Matrix3 k2 = riccati_rhs(p, k + 0.5 * dt * k1);
        Matrix3 k3 = riccati_rhs(p, k + 0.5 * dt * k2);
        Matrix3 k4 = riccati_rhs(p, k + dt * k3);
        k += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        k = 0.5 * (k + k.transpose()).eval();
        t += dt;
    }
    throw model_error("stationary_riccati: no fixed point within max_time");
}

struct TruthPath {
    std::vector<Vector3> x; // states at step boundaries, size steps + 1
    RealVector dy;          // measurement increments, size steps
};

// Euler-Maruyama simulation of the true joint dynamics. Per step, draws the
// shared signal/kick increment, the back-action kick, and the measurement
// noise, in that order.
inline TruthPath simulate_truth(const KalmanParams& p, const Vector3& mean0,
                                const Matrix3& cov0, int steps, double dt,
                                TrajectoryStream& stream) {
    if (steps <= 0) throw domain_error("simulate_truth: steps must be >= 1");
    if (!(dt > 0.0)) throw domain_error("simulate_truth: dt must be > 0");
    TruthPath path;
    path.x.reserve(steps + 1);
    path.dy.resize(steps);

    Eigen::LLT<Matrix3> llt(cov0 + 1e-300 * Matrix3::Identity());
    if (llt.info() != Eigen::Success)
        throw model_error("simulate_truth: initial covariance not PSD");
    Vector3 x = mean0 + llt.matrixL() * Vector3(stream.gaussian(),
                                                stream.gaussian(),
                                                stream.gaussian());
    path.x.push_back(x);

    const Matrix3 a = p.drift();
    const double sg = std::sqrt(p.sigma_gamma_sq);
    const double root_dt = std::sqrt(dt);
    for (int k = 0; k < steps; ++k) {
        double dw = root_dt * stream.gaussian();      // signal + momentum kick
        double dfw = root_dt * stream.gaussian();     // back-action kick
        double dmeas = root_dt * stream.gaussian();   // measurement noise
        path.dy[k] = x(0) * dt + std::sqrt(p.gamma) * dmeas;
        x += a * x * dt;
        x(1) += p.sigma * dw + sg * dfw;
        x(2) += p.sigma * dw;
        path.x.push_back(x);
    }
    return path;
}

} // namespace qfilter
