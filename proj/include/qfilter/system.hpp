// System model: Hamiltonian, signal-coupled observable, measurement channels.
#pragma once

#include <vector>

#include "qfilter/field.hpp"
#include "qfilter/noise.hpp"
#include "qfilter/operators.hpp"

namespace qfilter {

// Bundles everything the generator and filters need. The system couples to
// the classical signal through f(theta) * Q and is monitored through the
// channel operators L_j; the first noise.n channels are observed.
struct SystemModel {
    int dim = 0;
    double hbar = 0.0;
    Operator H; // Hamiltonian
    Operator Q; // signal-coupled observable
    std::vector<Operator> L; // channel operators, one per noise channel
    NoiseSpec noise;
    SignalModel signal;

    // Cached derived operators.
    Operator B;                      // (i/hbar) Q, anti-Hermitian
    std::vector<Operator> Ldag;      // adjoints of L
    Operator M;                      // sum_{ik} kappa^{ik} Ldag_k L_i
    std::vector<Operator> L_out;     // output gains L^j = sum_i theta^{ij} L_i
    std::vector<Operator> L_out_dag;
    std::vector<Operator> L_out_sym; // L^j + L^j{dagger}
    bool h_diagonal = false;
    Operator ham_phase; // (i/hbar)(H_bb - H_aa), used when H is diagonal

    static SystemModel make(double hbar, Operator H, Operator Q,
                            std::vector<Operator> L, NoiseSpec noise,
                            SignalModel signal) {
        if (!(hbar > 0.0)) throw model_error("SystemModel: hbar must be > 0");
        const int d = int(H.rows());
        if (H.cols() != d || Q.rows() != d || Q.cols() != d)
            throw model_error("SystemModel: H and Q must be square and same size");
        if (!is_hermitian(H)) throw model_error("SystemModel: H not Hermitian");
        if (!is_hermitian(Q)) throw model_error("SystemModel: Q not Hermitian");
        if (int(L.size()) != noise.m)
            throw model_error("SystemModel: need one channel operator per noise channel");
        for (const auto& l : L)
            if (l.rows() != d || l.cols() != d)
                throw model_error("SystemModel: channel operator has wrong size");

        SystemModel s;
        s.dim = d;
        s.hbar = hbar;
        s.H = std::move(H);
        s.Q = std::move(Q);
        s.L = std::move(L);
        s.noise = std::move(noise);
        s.signal = std::move(signal);

        s.B = (Complex(0.0, 1.0) / hbar) * s.Q;
        s.Ldag.resize(s.noise.m);
        for (int i = 0; i < s.noise.m; ++i) s.Ldag[i] = dagger(s.L[i]);

        s.M = Operator::Zero(d, d);
        for (int i = 0; i < s.noise.m; ++i)
            for (int k = 0; k < s.noise.m; ++k)
                s.M += s.noise.kappa_contra(i, k) * s.Ldag[k] * s.L[i];

        const RealMatrix theta_inv = s.noise.theta.inverse();
        s.L_out.resize(s.noise.n);
        s.L_out_dag.resize(s.noise.n);
        s.L_out_sym.resize(s.noise.n);
        for (int j = 0; j < s.noise.n; ++j) {
            Operator lj = Operator::Zero(d, d);
            for (int i = 0; i < s.noise.n; ++i) lj += theta_inv(i, j) * s.L[i];
            s.L_out[j] = lj;
            s.L_out_dag[j] = dagger(lj);
            s.L_out_sym[j] = lj + s.L_out_dag[j];
        }

        Operator off = s.H;
        off.diagonal().setZero();
        s.h_diagonal = off.cwiseAbs().maxCoeff() <=
                       1e-14 * std::max(1.0, s.H.cwiseAbs().maxCoeff());
        if (s.h_diagonal) {
            s.ham_phase.resize(d, d);
            for (int a = 0; a < d; ++a)
                for (int b = 0; b < d; ++b)
                    s.ham_phase(a, b) = Complex(0.0, 1.0) / hbar *
                                        (s.H(b, b).real() - s.H(a, a).real());
        }
        return s;
    }

    // (i/hbar)[x, H], taking the diagonal fast path when available.
    Operator ham_commutator(const Operator& x) const {
        if (h_diagonal) return x.cwiseProduct(ham_phase);
        return Complex(0.0, 1.0) / hbar * (x * H - H * x);
    }
};

// Standard construction: oscillator of the given size with channel operators
// L_j = Q/2 for every channel.
inline SystemModel oscillator_system(int dim, double hbar, double omega,
                                     NoiseSpec noise, SignalModel signal) {
    Oscillator osc = build_oscillator(dim, hbar, omega);
    std::vector<Operator> L(noise.m, 0.5 * osc.q);
    return SystemModel::make(hbar, osc.h, osc.q, std::move(L), std::move(noise),
                             std::move(signal));
}

} // namespace qfilter
