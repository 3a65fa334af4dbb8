// Finite-dimensional operator algebra: truncated oscillator ladder,
// commutators, Hermitian matrix functions, and the symmetric (Jordan)
// linear solve used for posterior symmetrized means.
#pragma once

#include <cmath>
#include <string>

#include "qfilter/common.hpp"

namespace qfilter {

inline Operator dagger(const Operator& x) { return x.adjoint(); }

inline Operator commutator(const Operator& a, const Operator& b) {
    return a * b - b * a;
}

inline Operator anticommutator(const Operator& a, const Operator& b) {
    return a * b + b * a;
}

inline double hermiticity_defect(const Operator& x) {
    return (x - Operator(x.adjoint())).norm();
}

inline bool is_hermitian(const Operator& x, double rel_tol = 1e-12) {
    double scale = std::max(x.norm(), 1.0);
    return hermiticity_defect(x) <= rel_tol * scale;
}

// Average out round-off asymmetry; used after every stochastic step.
inline void hermitize(Operator& x) {
    x = 0.5 * (x + Operator(x.adjoint()));
}

inline bool all_finite(const Operator& x) {
    return x.allFinite();
}

// ---------------------------------------------------------------------------
// Hermitian matrix functions via eigendecomposition.
// Eigenvalues below floor_rel * max|lambda| on paths that invert are a
// domain error: the input was required to be positive definite.
// ---------------------------------------------------------------------------

struct HermEig {
    RealVector values;
    Operator vectors;
};

inline HermEig herm_eig(const Operator& x, const char* what = "herm_eig") {
    if (x.rows() != x.cols())
        throw domain_error(std::string(what) + ": matrix not square");
    if (!is_hermitian(x))
        throw domain_error(std::string(what) + ": matrix not Hermitian");
    Eigen::SelfAdjointEigenSolver<Operator> es(x);
    if (es.info() != Eigen::Success)
        throw domain_error(std::string(what) + ": eigendecomposition failed");
    return {es.eigenvalues(), es.eigenvectors()};
}

inline void require_positive(const HermEig& eig, const char* what,
                             double floor_rel = 1e-14) {
    double top = eig.values.cwiseAbs().maxCoeff();
    if (top <= 0.0 || eig.values.minCoeff() <= floor_rel * top)
        throw domain_error(std::string(what) + ": matrix not positive definite");
}

inline Operator herm_sqrt(const Operator& x) {
    HermEig eig = herm_eig(x, "herm_sqrt");
    require_positive(eig, "herm_sqrt");
    return eig.vectors * eig.values.cwiseSqrt().asDiagonal() *
           eig.vectors.adjoint();
}

inline Operator herm_inv_sqrt(const Operator& x) {
    HermEig eig = herm_eig(x, "herm_inv_sqrt");
    require_positive(eig, "herm_inv_sqrt");
    return eig.vectors * eig.values.cwiseSqrt().cwiseInverse().asDiagonal() *
           eig.vectors.adjoint();
}

inline Operator herm_inverse(const Operator& x) {
    HermEig eig = herm_eig(x, "herm_inverse");
    require_positive(eig, "herm_inverse");
    return eig.vectors * eig.values.cwiseInverse().asDiagonal() *
           eig.vectors.adjoint();
}

// exp(i b) for Hermitian b; exactly unitary up to round-off.
inline Operator expi_hermitian(const Operator& b) {
    HermEig eig = herm_eig(b, "expi_hermitian");
    Eigen::VectorXcd phases(eig.values.size());
    for (Eigen::Index k = 0; k < eig.values.size(); ++k)
        phases[k] = std::polar(1.0, eig.values[k]);
    return eig.vectors * phases.asDiagonal() * eig.vectors.adjoint();
}

// ---------------------------------------------------------------------------
// Truncated harmonic oscillator.
// a has sqrt(n) weights, so [q, p] = i hbar (I - dim E_{dd}) exactly: the
// canonical pair is only canonical on the top-left (dim-1) block.
// ---------------------------------------------------------------------------

struct Oscillator {
    int dim = 0;
    double hbar = 0.0;
    double omega = 0.0;
    Operator a;      // lowering operator
    Operator q, p;   // q = sqrt(hbar/2w)(a + a†), p = i sqrt(hbar w/2)(a† - a)
    Operator h;      // (1/2) A†A with A = iP + wQ; equals hbar w a†a, diagonal
    Operator number; // a†a
};

inline Oscillator build_oscillator(int dim, double hbar, double omega) {
    if (dim < 2) throw domain_error("build_oscillator: dim must be >= 2");
    if (hbar <= 0.0 || omega <= 0.0)
        throw domain_error("build_oscillator: hbar and omega must be positive");
    Oscillator osc;
    osc.dim = dim;
    osc.hbar = hbar;
    osc.omega = omega;
    osc.a = Operator::Zero(dim, dim);
    for (int n = 1; n < dim; ++n) osc.a(n - 1, n) = std::sqrt(double(n));
    Operator ad = osc.a.adjoint();
    osc.q = std::sqrt(hbar / (2.0 * omega)) * (osc.a + ad);
    osc.p = Complex(0.0, 1.0) * std::sqrt(hbar * omega / 2.0) * (ad - osc.a);
    osc.number = ad * osc.a;
    osc.h = hbar * omega * osc.number;
    return osc;
}

// ---------------------------------------------------------------------------
// Density operators.
// ---------------------------------------------------------------------------

struct DensityOperator {
    Operator rho;
    bool normalized = true;

    DensityOperator(Operator m, bool require_unit_trace = true)
        : rho(std::move(m)), normalized(require_unit_trace) {
        double scale = std::max(rho.norm(), 1.0);
        if (hermiticity_defect(rho) > 1e-12 * scale)
            throw domain_error("DensityOperator: not Hermitian");
        Eigen::SelfAdjointEigenSolver<Operator> es(rho);
        if (es.eigenvalues().minCoeff() < -1e-10 * scale)
            throw domain_error("DensityOperator: not positive semidefinite");
        if (normalized && std::abs(rho.trace().real() - 1.0) > 1e-10)
            throw domain_error("DensityOperator: trace != 1");
    }

    int dim() const { return int(rho.rows()); }
};

// Kronecker product with the second factor as the fast index:
// (a (x) b)_{(i,alpha),(j,beta)} = a_ij b_{alpha beta}.
inline Operator kron(const Operator& a, const Operator& b) {
    Operator out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) =
                a(i, j) * b;
    return out;
}

// Pure Fock state |n><n| in a dim-dimensional truncation.
inline Operator fock_state(int dim, int n) {
    if (n < 0 || n >= dim) throw domain_error("fock_state: level out of range");
    Operator rho = Operator::Zero(dim, dim);
    rho(n, n) = 1.0;
    return rho;
}

// ---------------------------------------------------------------------------
// jordan_solve: the unique solution X of X o P := (XP + PX)/2 = C for
// Hermitian positive definite P. In the eigenbasis of P the entries decouple:
// X_ij = 2 C_ij / (lambda_i + lambda_j).
// ---------------------------------------------------------------------------

inline Operator jordan_solve(const Operator& p, const Operator& c,
                             double floor_rel = 1e-12) {
    if (p.rows() != c.rows() || p.cols() != c.cols())
        throw domain_error("jordan_solve: dimension mismatch");
    HermEig eig = herm_eig(p, "jordan_solve");
    double top = eig.values.cwiseAbs().maxCoeff();
    if (top <= 0.0 || eig.values.minCoeff() <= floor_rel * top)
        throw domain_error("jordan_solve: P not positive definite");
    Operator ct = eig.vectors.adjoint() * c * eig.vectors;
    for (Eigen::Index i = 0; i < ct.rows(); ++i)
        for (Eigen::Index j = 0; j < ct.cols(); ++j)
            ct(i, j) *= 2.0 / (eig.values[i] + eig.values[j]);
    return eig.vectors * ct * eig.vectors.adjoint();
}

} // namespace qfilter
