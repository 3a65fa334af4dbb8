// Time-evolution generator for operator-valued fields and its exact discrete
// adjoint.
//
// The state side (apply) evolves an unnormalized density field; the
// observable side (apply_adjoint) is constructed as the literal weighted
// transpose of apply under <X, phi> = sum_i w_i tr(X_i phi_i), so the
// discrete duality <X, apply(phi)> = <apply_adjoint(X), phi> holds to
// rounding by construction, and apply conserves the trace-weight exactly
// because apply_adjoint annihilates constant identity fields.
#pragma once

#include <vector>

#include "qfilter/system.hpp"

namespace qfilter {

// Banded operator on grid-indexed data; row i combines source entries
// start[i] .. start[i]+coef[i].size()-1.
struct GridOp {
    std::vector<int> start;
    std::vector<std::vector<double>> coef;

    int n() const { return int(start.size()); }

    void add_apply(Field& out, const Field& src) const {
        for (int i = 0; i < n(); ++i) {
            const auto& c = coef[i];
            for (size_t k = 0; k < c.size(); ++k)
                if (c[k] != 0.0) out[i] += c[k] * src[start[i] + k];
        }
    }

    Field apply(const Field& src) const {
        Field out = zero_field_like(src);
        add_apply(out, src);
        return out;
    }

    RealVector apply(const RealVector& src) const {
        RealVector out = RealVector::Zero(n());
        for (int i = 0; i < n(); ++i) {
            const auto& c = coef[i];
            for (size_t k = 0; k < c.size(); ++k)
                out[i] += c[k] * src[start[i] + k];
        }
        return out;
    }

    // Adjoint under the weighted pairing: T_{ji} = w_i A_{ij} / w_j.
    GridOp weighted_transpose(const RealVector& w) const {
        const int N = n();
        std::vector<int> lo(N, N), hi(N, -1);
        for (int i = 0; i < N; ++i)
            for (size_t k = 0; k < coef[i].size(); ++k) {
                int j = start[i] + int(k);
                lo[j] = std::min(lo[j], i);
                hi[j] = std::max(hi[j], i);
            }
        GridOp t;
        t.start.resize(N);
        t.coef.resize(N);
        for (int j = 0; j < N; ++j) {
            if (hi[j] < lo[j]) { lo[j] = j; hi[j] = j; } // empty column
            t.start[j] = lo[j];
            t.coef[j].assign(hi[j] - lo[j] + 1, 0.0);
        }
        for (int i = 0; i < N; ++i)
            for (size_t k = 0; k < coef[i].size(); ++k) {
                int j = start[i] + int(k);
                t.coef[j][i - t.start[j]] += w[i] * coef[i][k] / w[j];
            }
        return t;
    }

    // Central first derivative, second-order one-sided rows at the ends.
    static GridOp central_derivative(int N, double h) {
        GridOp op;
        op.start.resize(N);
        op.coef.resize(N);
        const double s = 1.0 / (2.0 * h);
        op.start[0] = 0;
        op.coef[0] = {-3.0 * s, 4.0 * s, -s};
        for (int i = 1; i + 1 < N; ++i) {
            op.start[i] = i - 1;
            op.coef[i] = {-s, 0.0, s};
        }
        op.start[N - 1] = N - 3;
        op.coef[N - 1] = {s, -4.0 * s, 3.0 * s};
        return op;
    }

    // Three-point second derivative, second-order one-sided rows at the ends
    // (falls back to the interior stencil when the grid is only 3 points).
    static GridOp second_derivative(int N, double h) {
        GridOp op;
        op.start.resize(N);
        op.coef.resize(N);
        const double s = 1.0 / (h * h);
        for (int i = 1; i + 1 < N; ++i) {
            op.start[i] = i - 1;
            op.coef[i] = {s, -2.0 * s, s};
        }
        if (N >= 4) {
            op.start[0] = 0;
            op.coef[0] = {2.0 * s, -5.0 * s, 4.0 * s, -s};
            op.start[N - 1] = N - 4;
            op.coef[N - 1] = {-s, 4.0 * s, -5.0 * s, 2.0 * s};
        } else {
            op.start[0] = 0;
            op.coef[0] = {s, -2.0 * s, s};
            op.start[N - 1] = 0;
            op.coef[N - 1] = {s, -2.0 * s, s};
        }
        return op;
    }

    // Divergence of the drift-diffusion flux G_{i+1/2} =
    // u_{i+1/2} (phi_i + phi_{i+1})/2 + (sigma^2/2)(phi_{i+1} - phi_i)/h
    // with zero flux through the outer faces. Boundary cells have width h/2,
    // which makes the trapezoid-weighted column sums vanish identically
    // (telescoping fluxes), i.e. the weight is conserved exactly.
    static GridOp flux_divergence(const SignalModel& sig) {
        const int N = sig.points();
        const double h = sig.h;
        const double D = 0.5 * sig.sigma * sig.sigma;
        GridOp op;
        op.start.resize(N);
        op.coef.resize(N);
        auto face = [&](int i) { return sig.upsilon_face[i]; }; // u_{i+1/2}
        op.start[0] = 0;
        op.coef[0] = {(0.5 * face(0) - D / h) / (0.5 * h),
                      (0.5 * face(0) + D / h) / (0.5 * h)};
        for (int i = 1; i + 1 < N; ++i) {
            op.start[i] = i - 1;
            op.coef[i] = {(-0.5 * face(i - 1) + D / h) / h,
                          (0.5 * (face(i) - face(i - 1)) - 2.0 * D / h) / h,
                          (0.5 * face(i) + D / h) / h};
        }
        op.start[N - 1] = N - 2;
        op.coef[N - 1] = {(-0.5 * face(N - 2) + D / h) / (0.5 * h),
                          (-0.5 * face(N - 2) - D / h) / (0.5 * h)};
        return op;
    }
};

inline Operator commutator_b(const Operator& x, const Operator& b) {
    return x * b - b * x;
}

class Generator {
public:
    explicit Generator(const SystemModel& sys) : sys_(&sys) {
        const SignalModel& sig = sys.signal;
        flux_ = GridOp::flux_divergence(sig);
        flux_t_ = flux_.weighted_transpose(sig.weights);
        dc_ = GridOp::central_derivative(sig.points(), sig.h);
        dc_t_ = dc_.weighted_transpose(sig.weights);
        const double half_var = 0.5 * sig.sigma * sig.sigma;
        g_drift_ = sig.fprime.cwiseProduct(sig.upsilon);
        g_cross_ = half_var * (2.0 * sig.fprime + sig.fsecond);
        g_curv_ = half_var * sig.fprime.cwiseProduct(sig.fprime);
        need_cross_ = !sig.f_flat && g_cross_.cwiseAbs().maxCoeff() > 0.0;
        need_curv_ = !sig.f_flat && g_curv_.cwiseAbs().maxCoeff() > 0.0;
        need_drift_ = !sig.f_flat && g_drift_.cwiseAbs().maxCoeff() > 0.0;
    }

    const SystemModel& system() const { return *sys_; }

    // Dissipative part at a single point (state side):
    // sum_{ik} kappa^{ik} L_i phi Ldag_k - (M phi + phi M)/2.
    Operator dissipator(const Operator& phi) const {
        const SystemModel& s = *sys_;
        Operator out = -0.5 * (s.M * phi + phi * s.M);
        for (int i = 0; i < s.noise.m; ++i)
            for (int k = 0; k < s.noise.m; ++k) {
                Complex c = s.noise.kappa_contra(i, k);
                if (c != 0.0) out += c * (s.L[i] * phi * s.Ldag[k]);
            }
        return out;
    }

    // Dissipative part at a single point (observable side):
    // sum_{ik} kappa^{ik} Ldag_k X L_i - (M X + X M)/2.
    Operator dissipator_adjoint(const Operator& x) const {
        const SystemModel& s = *sys_;
        Operator out = -0.5 * (s.M * x + x * s.M);
        for (int i = 0; i < s.noise.m; ++i)
            for (int k = 0; k < s.noise.m; ++k) {
                Complex c = s.noise.kappa_contra(i, k);
                if (c != 0.0) out += c * (s.Ldag[k] * x * s.L[i]);
            }
        return out;
    }

    // State-side generator.
    Field apply(const Field& phi) const {
        const SystemModel& s = *sys_;
        const int N = s.signal.points();
        Field out = flux_.apply(phi);
        Field dphi;
        if (need_cross_) dphi = dc_.apply(phi);
        for (int i = 0; i < N; ++i) {
            out[i] += s.ham_commutator(phi[i]);
            out[i] += dissipator(phi[i]);
            if (need_drift_ && g_drift_[i] != 0.0)
                out[i] += g_drift_[i] * commutator_b(phi[i], s.B);
            if (need_cross_ && g_cross_[i] != 0.0)
                out[i] += g_cross_[i] * commutator_b(dphi[i], s.B);
            if (need_curv_ && g_curv_[i] != 0.0)
                out[i] += g_curv_[i] * commutator_b(commutator_b(phi[i], s.B), s.B);
        }
        return out;
    }

    // Observable-side generator: exact weighted transpose of apply.
    Field apply_adjoint(const Field& x) const {
        const SystemModel& s = *sys_;
        const int N = s.signal.points();
        Field out = flux_t_.apply(x);
        for (int i = 0; i < N; ++i) {
            out[i] -= s.ham_commutator(x[i]);
            out[i] += dissipator_adjoint(x[i]);
            if (need_drift_ && g_drift_[i] != 0.0)
                out[i] -= g_drift_[i] * commutator_b(x[i], s.B);
            if (need_curv_ && g_curv_[i] != 0.0)
                out[i] += g_curv_[i] * commutator_b(commutator_b(x[i], s.B), s.B);
        }
        if (need_cross_) {
            Field y(N);
            for (int i = 0; i < N; ++i)
                y[i] = -g_cross_[i] * commutator_b(x[i], s.B);
            dc_t_.add_apply(out, y);
        }
        return out;
    }

    const GridOp& flux() const { return flux_; }
    const GridOp& flux_transpose() const { return flux_t_; }
    const GridOp& derivative() const { return dc_; }

private:
    const SystemModel* sys_;
    GridOp flux_, flux_t_, dc_, dc_t_;
    RealVector g_drift_; // f' upsilon
    RealVector g_cross_; // (sigma^2/2)(2 f' + f'')
    RealVector g_curv_;  // (sigma^2/2) f'^2
    bool need_drift_ = false, need_cross_ = false, need_curv_ = false;
};

// First signal-derivative of an observable field:
// (d/dtheta) X + f'(theta) [X, B].
inline Field signal_derivative(const SystemModel& sys, const Field& x) {
    const SignalModel& sig = sys.signal;
    Field out = GridOp::central_derivative(sig.points(), sig.h).apply(x);
    if (!sig.f_flat)
        for (int i = 0; i < sig.points(); ++i)
            if (sig.fprime[i] != 0.0)
                out[i] += sig.fprime[i] * commutator_b(x[i], sys.B);
    return out;
}

// Second signal-derivative of an observable field:
// (d2/dtheta2) X + (2 f' + f'') [dX/dtheta, B] + f'^2 [[X, B], B].
inline Field signal_second_derivative(const SystemModel& sys, const Field& x) {
    const SignalModel& sig = sys.signal;
    const int N = sig.points();
    Field out = GridOp::second_derivative(N, sig.h).apply(x);
    if (!sig.f_flat) {
        Field dx = GridOp::central_derivative(N, sig.h).apply(x);
        for (int i = 0; i < N; ++i) {
            double c = 2.0 * sig.fprime[i] + sig.fsecond[i];
            if (c != 0.0) out[i] += c * commutator_b(dx[i], sys.B);
            double c2 = sig.fprime[i] * sig.fprime[i];
            if (c2 != 0.0)
                out[i] += c2 * commutator_b(commutator_b(x[i], sys.B), sys.B);
        }
    }
    return out;
}

} // namespace qfilter
