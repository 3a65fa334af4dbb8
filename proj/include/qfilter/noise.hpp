// Noise covariance algebra for the input/output field pair.
//
// Conventions (see docs/conventions.md):
//   * kappa is the Hermitian positive intensity of the input noises v_j;
//     kappa_tilde = kappa^T is the output intensity.
//   * Raised indices are inverse-matrix entries: kappa^{ik} = (kappa^-1)_ik.
//   * The filter is driven by the contravariant inputs dv^j whose covariance
//     is the observed block of kappa_tilde^-1; output increments
//     de_j = (kappa_tilde dv)_j carry the observed block of kappa_tilde and
//     satisfy dv^j de_j' = delta dt.
//   * gamma is the geometric mean of (kappa, kappa_tilde): the unique
//     positive solution of gamma kappa^-1 gamma = kappa_tilde; theta is the
//     same construction on the observed sub-block.
#pragma once

#include <cmath>
#include <vector>

#include "qfilter/operators.hpp"
#include "qfilter/rng.hpp"

namespace qfilter {

// Geometric mean of kappa and its transpose. For 1x1 input the defining
// relation gamma^2 = kappa conj(kappa) forces gamma = |kappa| for any nonzero
// complex scalar; dims >= 2 require Hermitian positive definite input.
inline Operator geometric_mean(const Operator& kappa) {
    if (kappa.rows() != kappa.cols())
        throw domain_error("geometric_mean: matrix not square");
    if (kappa.rows() == 1) {
        double mag = std::abs(kappa(0, 0));
        if (mag <= 0.0) throw domain_error("geometric_mean: zero scalar");
        return mag * Operator::Identity(1, 1);
    }
    Operator tilde = kappa.transpose();
    Operator root = herm_sqrt(kappa);
    Operator inv_root = herm_inv_sqrt(kappa);
    Operator mid = herm_sqrt(Operator(inv_root * tilde * inv_root));
    Operator gamma = root * mid * root;
    double scale = std::max(kappa.norm(), 1.0);
    if ((Operator(gamma * herm_inverse(kappa) * gamma) - tilde).norm() >
        1e-10 * scale)
        throw domain_error("geometric_mean: residual check failed");
    if (gamma.imag().norm() > 1e-10 * scale ||
        (gamma.real() - gamma.real().transpose()).norm() > 1e-10 * scale)
        throw domain_error("geometric_mean: result not symmetric real");
    return gamma;
}

// Transposition intensity of the observed sub-block: the positive solution of
// theta kappa_sub^-1 theta^T = conj(kappa_sub); identical construction to the
// geometric mean because kappa_tilde = conj(kappa) for Hermitian kappa.
inline Operator standard_theta(const Operator& kappa_sub) {
    return geometric_mean(kappa_sub);
}

struct NoiseSpec {
    int m = 0; // total channels
    int n = 0; // observed channels (leading block)
    Operator kappa;        // m x m Hermitian positive
    Operator kappa_tilde;  // kappa^T
    Operator kappa_contra; // kappa^-1
    RealMatrix gamma;      // geometric mean of (kappa, kappa_tilde)
    RealMatrix theta;      // observed-block transposition intensity
    RealMatrix de_cov;     // observed block of kappa_tilde (real by invariant)
    RealMatrix dv_cov;     // observed block of kappa_tilde^-1, when real
    bool dv_cov_real = false;
    RealMatrix dv_chol;    // lower Cholesky factor of dv_cov

    static NoiseSpec make(const Operator& kappa, int observed) {
        NoiseSpec s;
        if (kappa.rows() != kappa.cols())
            throw model_error("NoiseSpec: kappa not square");
        s.m = int(kappa.rows());
        s.n = observed;
        if (s.n < 1 || s.n > s.m)
            throw model_error("NoiseSpec: observed channel count out of range");
        double scale = std::max(kappa.norm(), 1.0);
        if (s.m > 1 && !is_hermitian(kappa))
            throw model_error("NoiseSpec: kappa not Hermitian");
        s.kappa = kappa;
        s.kappa_tilde = kappa.transpose();
        // classicality: the observed outputs must commute
        Operator obs_tilde = s.kappa_tilde.topLeftCorner(s.n, s.n);
        if (obs_tilde.imag().norm() > 1e-12 * scale)
            throw model_error(
                "NoiseSpec: observed block of kappa_tilde is not real");
        s.de_cov = obs_tilde.real();
        if (s.m == 1) {
            double g = std::abs(kappa(0, 0));
            if (kappa(0, 0).real() <= 0.0 || std::abs(kappa(0, 0).imag()) > 1e-12 * scale)
                throw model_error("NoiseSpec: scalar kappa must be real positive");
            s.kappa_contra = Operator::Constant(1, 1, 1.0 / g);
        } else {
            s.kappa_contra = herm_inverse(kappa);
        }
        s.gamma = geometric_mean(kappa).real();
        s.theta = standard_theta(Operator(kappa.topLeftCorner(s.n, s.n))).real();
        Operator tilde_inv = s.kappa_contra.transpose(); // kappa_tilde^-1
        Operator dv_block = tilde_inv.topLeftCorner(s.n, s.n);
        s.dv_cov_real = dv_block.imag().norm() <= 1e-12 * scale;
        if (s.dv_cov_real) {
            s.dv_cov = dv_block.real();
            Eigen::LLT<RealMatrix> llt(s.dv_cov);
            if (llt.info() != Eigen::Success)
                throw model_error("NoiseSpec: observed dv covariance not positive");
            s.dv_chol = llt.matrixL();
        }
        return s;
    }
};

// ---------------------------------------------------------------------------
// Ito multiplication table.
//
// Every increment label is expanded over the fundamental annihilation /
// creation integrators of the m noise channels plus the signal channel; a
// vacuum product keeps only da_p da_p† contractions, so
//   product(A, B) = sum_p alpha_A[p] * beta_B[p]   (per dt).
// This reproduces every covariance block from one source of truth:
//   dv^i dv^k = (kappa_tilde^-1)_ik, de_j de_j' = kappa_tilde_jj',
//   dv^i de_j = delta, df^i df^k = (hbar/2)^2 (kappa_tilde^-1)_ik,
//   dw dw = dtheta dw / sigma = dt-scale entries, all crosses with the
//   signal channel zero. Ordered pairs differ where the underlying
//   operators do not commute (e.g. de_j df^k vs df^k de_j).
// ---------------------------------------------------------------------------

enum class IncrementKind { dv, de, df, dw, dtheta };

struct IncrementLabel {
    IncrementKind kind;
    int index = 0; // 1-based channel index for dv/de/df
};

inline IncrementLabel label_dv(int j) { return {IncrementKind::dv, j}; }
inline IncrementLabel label_de(int j) { return {IncrementKind::de, j}; }
inline IncrementLabel label_df(int k) { return {IncrementKind::df, k}; }
inline IncrementLabel label_dw() { return {IncrementKind::dw, 0}; }
inline IncrementLabel label_dtheta() { return {IncrementKind::dtheta, 0}; }

class ItoTable {
  public:
    ItoTable(const NoiseSpec& spec, double hbar, double sigma)
        : m_(spec.m), n_(spec.n), hbar_(hbar), sigma_(sigma) {
        Operator tilde_root = (spec.m == 1)
            ? Operator::Constant(1, 1, std::sqrt(std::abs(spec.kappa(0, 0))))
            : herm_sqrt(spec.kappa_tilde);
        tilde_inv_root_ = (spec.m == 1)
            ? Operator::Constant(1, 1, 1.0 / tilde_root(0, 0))
            : herm_inv_sqrt(spec.kappa_tilde);
        tilde_root_ = tilde_root;
    }

    // Ito product coefficient per dt for the ordered pair (a, b).
    Complex product(const IncrementLabel& a, const IncrementLabel& b) const {
        Eigen::VectorXcd alpha = annihilation_part(a);
        Eigen::VectorXcd beta = creation_part(b);
        return alpha.cwiseProduct(beta).sum(); // plain bilinear sum
    }

  private:
    void check(const IncrementLabel& l) const {
        switch (l.kind) {
            case IncrementKind::dv:
            case IncrementKind::df:
                if (l.index < 1 || l.index > m_)
                    throw domain_error("ItoTable: channel index out of range");
                break;
            case IncrementKind::de:
                if (l.index < 1 || l.index > n_)
                    throw domain_error("ItoTable: output index out of range");
                break;
            default:
                break;
        }
    }

    // Coefficients over channels p = 0 (signal) and 1..m (noise).
    Eigen::VectorXcd annihilation_part(const IncrementLabel& l) const {
        check(l);
        Eigen::VectorXcd v = Eigen::VectorXcd::Zero(m_ + 1);
        switch (l.kind) {
            case IncrementKind::dw: v[0] = 1.0; break;
            case IncrementKind::dtheta: v[0] = sigma_; break;
            case IncrementKind::dv:
                v.tail(m_) = tilde_inv_root_.row(l.index - 1).transpose();
                break;
            case IncrementKind::de:
                v.tail(m_) = tilde_root_.row(l.index - 1).transpose();
                break;
            case IncrementKind::df:
                // f^k = -hbar Im(contravariant input integrator)
                v.tail(m_) = Complex(0.0, 0.5 * hbar_) *
                             tilde_inv_root_.row(l.index - 1).transpose();
                break;
        }
        return v;
    }

    Eigen::VectorXcd creation_part(const IncrementLabel& l) const {
        check(l);
        // All labels are Hermitian processes, so the creation coefficients
        // are exactly the conjugated annihilation ones.  (For the force this
        // conjugation already supplies the sign flip of the Im part.)
        return annihilation_part(l).conjugate();
    }

    int m_, n_;
    double hbar_, sigma_;
    Operator tilde_root_, tilde_inv_root_;
};

inline Complex ito_product(const ItoTable& table, const IncrementLabel& a,
                           const IncrementLabel& b) {
    return table.product(a, b);
}

// ---------------------------------------------------------------------------
// Sampling. dv are the contravariant observed components (covariance
// dv_cov * dt); dw is the independent signal noise with variance dt.
// ---------------------------------------------------------------------------

struct Increments {
    RealVector dv; // observed channels
    double dw = 0.0;
};

inline Increments sample_increments(const NoiseSpec& spec,
                                    TrajectoryStream& stream, double dt) {
    if (!(dt > 0.0)) throw domain_error("sample_increments: dt must be > 0");
    if (!spec.dv_cov_real)
        throw model_error(
            "sample_increments: observed dv covariance is not real");
    double root_dt = std::sqrt(dt);
    Increments inc;
    inc.dv = spec.dv_chol * stream.gaussian_vector(spec.n, root_dt);
    inc.dw = root_dt * stream.gaussian();
    return inc;
}

// Output increments determined by the sampled inputs: de = kappa_tilde_obs dv.
inline RealVector derive_outputs(const NoiseSpec& spec, const RealVector& dv) {
    return spec.de_cov * dv;
}

} // namespace qfilter
