// Repeated-interaction dilation for a single vacuum measurement channel.
//
// The continuous dynamics is replaced by a chain of two-level ancillas, one
// per time slice: the system interacts unitarily with ancilla k during slice
// k, then the ancilla's quadrature X = a + a{dagger} is read out. This gives
// an exact finite-dimensional model whose conditional states and output
// statistics must agree with the diffusive filter to the order of the slice
// width, and whose output observables commute with all later system
// observables (the measurements demolish nothing).
#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "qfilter/operators.hpp"
#include "qfilter/rng.hpp"

namespace qfilter {

// Slice unitary on system (x) ancilla:
//   U = exp( sqrt(dt) (L (x) adag - Ldag (x) a) - (i dt / hbar) H (x) I ).
inline Operator step_unitary(const Operator& h, const Operator& l, double hbar,
                             double dt) {
    const int d = int(h.rows());
    if (l.rows() != d || l.cols() != d || h.cols() != d)
        throw domain_error("step_unitary: H and L must be square, same size");
    if (!(dt > 0.0) || !(hbar > 0.0))
        throw domain_error("step_unitary: dt and hbar must be > 0");
    Operator a = Operator::Zero(2, 2);
    a(0, 1) = 1.0;
    Operator g = std::sqrt(dt) * (kron(l, dagger(a)) - kron(dagger(l), a)) -
                 Complex(0.0, dt / hbar) * kron(h, Operator::Identity(2, 2));
    // g is anti-Hermitian; exponentiate through the Hermitian -i g.
    return expi_hermitian(Complex(0.0, -1.0) * g);
}

// Measurement operators for the ancilla quadrature readout, outcomes
// lambda = +1 / -1: M_pm = <pm| U |0>, with |pm> = (|0> +- |1>)/sqrt(2).
// The observed increment carried by outcome lambda is lambda * sqrt(dt).
inline std::array<Operator, 2> kraus_pair(const Operator& u) {
    const int d = int(u.rows()) / 2;
    if (u.rows() != 2 * d || u.cols() != 2 * d)
        throw domain_error("kraus_pair: expected system (x) qubit unitary");
    std::array<Operator, 2> m = {Operator(d, d), Operator(d, d)};
    const double r = 1.0 / std::sqrt(2.0);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            Complex u0 = u(2 * i, 2 * j);     // <i,0| U |j,0>
            Complex u1 = u(2 * i + 1, 2 * j); // <i,1| U |j,0>
            m[0](i, j) = r * (u0 + u1);       // lambda = +1
            m[1](i, j) = r * (u0 - u1);       // lambda = -1
        }
    return m;
}

struct ConditionedBranch {
    double probability = 0.0;
    Operator state; // normalized post-measurement system state
};

// Both measurement branches from one slice.
inline std::array<ConditionedBranch, 2>
condition_step(const std::array<Operator, 2>& kraus, const Operator& rho) {
    std::array<ConditionedBranch, 2> out;
    for (int k = 0; k < 2; ++k) {
        Operator post = kraus[k] * rho * dagger(kraus[k]);
        double p = post.trace().real();
        out[k].probability = p;
        if (p > 1e-300) out[k].state = post / p;
        else out[k].state = Operator::Zero(rho.rows(), rho.cols());
    }
    return out;
}

// Outcome-averaged slice map sum_k M_k rho M_k{dagger}; equals the
// measurement-free reduced dynamics of the slice.
inline Operator reduced_step(const std::array<Operator, 2>& kraus,
                             const Operator& rho) {
    return kraus[0] * rho * dagger(kraus[0]) + kraus[1] * rho * dagger(kraus[1]);
}

// Embed an operator acting on system (x) ancilla_r into the full chain space
// system (x) ancilla_1 (x) ... (x) ancilla_T (ancilla 1 is the most
// significant ancilla bit). r is 1-based.
inline Operator embed_pair(const Operator& op, int sys_dim, int chain_len,
                           int r) {
    if (r < 1 || r > chain_len) throw domain_error("embed_pair: slice out of range");
    if (op.rows() != 2 * sys_dim || op.cols() != 2 * sys_dim)
        throw domain_error("embed_pair: operator must act on system (x) qubit");
    const long total = long(sys_dim) << chain_len;
    if (total > 4096) throw domain_error("embed_pair: chain space exceeds 4096");
    const long bit = 1L << (chain_len - r);
    const long rest_mask = (1L << chain_len) - 1 - bit;
    Operator out = Operator::Zero(total, total);
    for (long n = 0; n < total; ++n) {
        long anc = n & ((1L << chain_len) - 1);
        long i_sys = n >> chain_len;
        long b = (anc & bit) ? 1 : 0;
        long rest = anc & rest_mask;
        for (long i2 = 0; i2 < sys_dim; ++i2)
            for (long b2 = 0; b2 < 2; ++b2) {
                Complex v = op(2 * i2 + b2, 2 * i_sys + b);
                if (v != 0.0)
                    out((i2 << chain_len) | rest | (b2 ? bit : 0), n) = v;
            }
    }
    return out;
}

// Embed a single-ancilla observable (2x2) on slice r into the chain space.
inline Operator embed_ancilla(const Operator& op, int sys_dim, int chain_len,
                              int r) {
    return embed_pair(kron(Operator::Identity(sys_dim, sys_dim), op), sys_dim,
                      chain_len, r);
}

struct NondemolitionReport {
    double max_causal = 0.0;  // max ||[Y(s), X(t)]|| over s <= t
    double min_acausal = 0.0; // min ||[Y(s), X(t)]|| over s > t
};

// Heisenberg-picture commutator audit. Y(s) is the accumulated output
// observable after s slices, X(t) the system observable after t slices, both
// conjugated by the cumulative interaction unitary of their own horizon.
// Output observables must commute with every present or future system
// observable; against *earlier* system observables they generally do not.
inline NondemolitionReport check_nondemolition(const Operator& h,
                                               const Operator& l,
                                               const Operator& x_sys,
                                               double hbar, double dt,
                                               int chain_len) {
    const int d = int(h.rows());
    const long total = long(d) << chain_len;
    if (total > 4096)
        throw domain_error("check_nondemolition: chain space exceeds 4096");
    Operator x_anc = Operator::Zero(2, 2);
    x_anc(0, 1) = x_anc(1, 0) = 1.0;

    const Operator u_slice = step_unitary(h, l, hbar, dt);
    Operator ident = Operator::Identity(total, total);
    std::vector<Operator> v(chain_len + 1); // cumulative unitaries V_s
    v[0] = ident;
    for (int s = 1; s <= chain_len; ++s)
        v[s] = embed_pair(u_slice, d, chain_len, s) * v[s - 1];

    Operator x_emb = Operator::Zero(total, total);
    {
        Operator xe = kron(x_sys, Operator::Identity(total / d, total / d));
        x_emb = xe;
    }
    std::vector<Operator> y(chain_len + 1), x(chain_len + 1);
    Operator cum_out = Operator::Zero(total, total);
    x[0] = x_emb;
    y[0] = Operator::Zero(total, total);
    for (int s = 1; s <= chain_len; ++s) {
        cum_out += embed_ancilla(x_anc, d, chain_len, s);
        y[s] = dagger(v[s]) * cum_out * v[s];
        x[s] = dagger(v[s]) * x_emb * v[s];
    }

    auto comm_norm = [](const Operator& a, const Operator& b) {
        Operator c = a * b - b * a; // anti-Hermitian for Hermitian a, b
        Operator hc = Complex(0.0, 1.0) * c;
        hermitize(hc);
        Eigen::SelfAdjointEigenSolver<Operator> es(hc, Eigen::EigenvaluesOnly);
        return es.eigenvalues().cwiseAbs().maxCoeff();
    };

    NondemolitionReport rep;
    rep.min_acausal = std::numeric_limits<double>::infinity();
    for (int s = 1; s <= chain_len; ++s)
        for (int t = 0; t <= chain_len; ++t) {
            double nrm = comm_norm(y[s], x[t]);
            if (s <= t) rep.max_causal = std::max(rep.max_causal, nrm);
            else rep.min_acausal = std::min(rep.min_acausal, nrm);
        }
    return rep;
}

struct DilationTrajectory {
    std::vector<double> outcomes;   // lambda_k = +-1
    std::vector<Operator> states;   // conditioned system states, size steps+1
};

// Sample a measurement record by exact per-slice conditioning.
inline DilationTrajectory run_exact_conditioning(const Operator& h,
                                                 const Operator& l,
                                                 const Operator& rho0,
                                                 double hbar, double dt,
                                                 int steps,
                                                 TrajectoryStream& stream) {
    const auto kraus = kraus_pair(step_unitary(h, l, hbar, dt));
    DilationTrajectory traj;
    traj.states.push_back(rho0);
    Operator rho = rho0;
    for (int k = 0; k < steps; ++k) {
        auto branches = condition_step(kraus, rho);
        double u = stream.uniform();
        int pick = (u < branches[0].probability) ? 0 : 1;
        rho = branches[pick].state;
        traj.outcomes.push_back(pick == 0 ? 1.0 : -1.0);
        traj.states.push_back(rho);
    }
    return traj;
}

} // namespace qfilter
