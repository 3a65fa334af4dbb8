// Stochastic filtering steps for operator-valued fields.
//
// step_linear propagates the unnormalized field driven by the observed input
// increments dv; its trace-weight is a martingale under the reference
// measure. step_normalized propagates the normalized conditional field
// driven by the output increments de. Both use Euler-Maruyama gains
// evaluated at the pre-step field and re-hermitize afterwards.
#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "qfilter/generator.hpp"
#include "qfilter/rng.hpp"

namespace qfilter {

namespace detail {
inline void check_finite_field(const Field& phi, const char* who) {
    for (const auto& p : phi)
        if (!all_finite(p)) throw blowup_error(std::string(who) + ": field diverged");
}
} // namespace detail

// Unnormalized update:
//   phi += Lambda[phi] dt + sum_j dv^j (L_j phi + phi Ldag_j),
// with j running over the observed channels. Rescales into log_scale when
// the raw weight leaves [e^-200, e^200].
inline void step_linear(const Generator& gen, FieldState& st,
                        const RealVector& dv, double dt) {
    const SystemModel& s = gen.system();
    if (dv.size() != s.noise.n)
        throw domain_error("step_linear: dv has wrong number of channels");
    Field lam = gen.apply(st.phi);
    Operator g = Operator::Zero(s.dim, s.dim);
    for (int j = 0; j < s.noise.n; ++j) g += dv[j] * s.L[j];
    const Operator gdag = dagger(g);
    const int N = s.signal.points();
    for (int i = 0; i < N; ++i) {
        st.phi[i] += dt * lam[i] + g * st.phi[i] + st.phi[i] * gdag;
        hermitize(st.phi[i]);
    }
    detail::check_finite_field(st.phi, "step_linear");
    double w = st.raw_weight(s.signal);
    if (!(w > 0.0)) throw blowup_error("step_linear: weight lost positivity");
    if (std::abs(std::log(w)) > 200.0) {
        for (int i = 0; i < N; ++i) st.phi[i] /= w;
        st.log_scale += std::log(w);
    }
}

// Expected output rates q^j = sum_i w_i tr((L^j + L^j{dagger}) rho_i) of the
// normalized field.
inline RealVector output_rates(const SystemModel& s, const FieldState& st) {
    RealVector q(s.noise.n);
    for (int j = 0; j < s.noise.n; ++j) {
        Complex acc = 0.0;
        for (int i = 0; i < s.signal.points(); ++i)
            acc += s.signal.weights[i] * (s.L_out_sym[j] * st.phi[i]).trace();
        q[j] = acc.real();
    }
    return q;
}

// Normalized update driven by output increments de:
//   rho += (Lambda[rho] - sum_{jk} e_cov(j,k) q^j Xi^k[rho]) dt
//        + sum_j de^j Xi^j[rho],
// where Xi^j[rho] = L^j rho + rho L^j{dagger} - q^j rho and e_cov is the
// covariance of the output increments. The gain and the drift correction are
// both linear in Xi, so they are folded into one coefficient per channel.
// The weight is renormalized to 1 after every step.
inline void step_normalized(const Generator& gen, FieldState& st,
                            const RealVector& de, double dt) {
    const SystemModel& s = gen.system();
    if (de.size() != s.noise.n)
        throw domain_error("step_normalized: de has wrong number of channels");
    const RealVector q = output_rates(s, st);
    Field lam = gen.apply(st.phi);
    RealVector c = de - dt * (s.noise.de_cov.transpose() * q);
    Operator g = Operator::Zero(s.dim, s.dim);
    double cq = 0.0;
    for (int j = 0; j < s.noise.n; ++j) {
        g += c[j] * s.L_out[j];
        cq += c[j] * q[j];
    }
    const Operator gdag = dagger(g);
    const int N = s.signal.points();
    for (int i = 0; i < N; ++i) {
        st.phi[i] += dt * lam[i] + g * st.phi[i] + st.phi[i] * gdag - cq * st.phi[i];
        hermitize(st.phi[i]);
    }
    detail::check_finite_field(st.phi, "step_normalized");
    double w = st.raw_weight(s.signal);
    if (!(w > 0.0)) throw blowup_error("step_normalized: weight lost positivity");
    for (int i = 0; i < N; ++i) st.phi[i] /= w;
    st.log_scale = 0.0;
}

// Rescale a field state to unit weight (for comparing against normalized runs).
inline FieldState normalized_copy(const SignalModel& sig, const FieldState& st) {
    FieldState out = st;
    double w = out.raw_weight(sig);
    if (!(w > 0.0)) throw blowup_error("normalized_copy: nonpositive weight");
    for (auto& p : out.phi) p /= w;
    out.log_scale = 0.0;
    return out;
}

// Half the trace norm of the difference of two (normalized) fields under the
// grid weights: the joint state is block-diagonal over the signal grid, so
// this is the trace distance of the joint system-signal states.
inline double field_trace_distance(const SignalModel& sig, const Field& a,
                                   const Field& b) {
    double acc = 0.0;
    for (int i = 0; i < sig.points(); ++i) {
        Operator d = a[i] - b[i];
        hermitize(d);
        Eigen::SelfAdjointEigenSolver<Operator> es(d, Eigen::EigenvaluesOnly);
        acc += sig.weights[i] * es.eigenvalues().cwiseAbs().sum();
    }
    return 0.5 * acc;
}

// Smallest eigenvalue over all grid points (diagnostic; hermitizes copies).
inline double field_min_eigenvalue(const Field& phi) {
    double lo = std::numeric_limits<double>::infinity();
    for (const auto& p : phi) {
        Operator h = p;
        hermitize(h);
        Eigen::SelfAdjointEigenSolver<Operator> es(h, Eigen::EigenvaluesOnly);
        lo = std::min(lo, es.eigenvalues().minCoeff());
    }
    return lo;
}

struct MgfResult {
    double mc_value = 0.0;      // Monte Carlo estimate E[<X, phi_T> Z_T]
    double mc_std_error = 0.0;
    double ode_value = 0.0;     // deterministic tilted-evolution value
    int trajectories = 0;
};

// Cross-check of the unnormalized filter against its closed-form first
// moment: for any test weight process Z_T = exp(int beta.de - 1/2 int
// beta.e_cov.beta dt), the average E[<X, phi_T> Z_T] equals <X, rho_T> where
// rho solves the deterministic tilted equation
//   drho/dt = Lambda[rho] + sum_j beta^j(t) (L_j rho + rho Ldag_j).
// beta == 0 reduces to the ensemble-average master equation.
inline MgfResult mgf_check(const Generator& gen, const FieldState& initial,
                           const Operator& xobs,
                           const std::function<RealVector(double)>& beta,
                           double t_final, double dt, int trajectories,
                           uint64_t seed) {
    const SystemModel& s = gen.system();
    const SignalModel& sig = s.signal;
    const int steps = int(std::llround(t_final / dt));
    if (steps <= 0) throw domain_error("mgf_check: t_final/dt must be >= 1");
    if (trajectories <= 0) throw domain_error("mgf_check: need trajectories >= 1");

    auto pair_x = [&](const FieldState& st) {
        Complex acc = 0.0;
        for (int i = 0; i < sig.points(); ++i)
            acc += sig.weights[i] * (xobs * st.phi[i]).trace();
        return acc.real() * std::exp(st.log_scale);
    };

    // Deterministic side: classical RK4 on the tilted field equation.
    auto tilted_rhs = [&](const Field& rho, double t) {
        Field out = gen.apply(rho);
        RealVector b = beta(t);
        if (b.size() != s.noise.n)
            throw domain_error("mgf_check: beta has wrong number of channels");
        Operator g = Operator::Zero(s.dim, s.dim);
        for (int j = 0; j < s.noise.n; ++j) g += b[j] * s.L[j];
        Operator gdag = dagger(g);
        for (int i = 0; i < sig.points(); ++i)
            out[i] += g * rho[i] + rho[i] * gdag;
        return out;
    };
    Field rho = initial.phi;
    for (int k = 0; k < steps; ++k) {
        double t = k * dt;
        Field k1 = tilted_rhs(rho, t);
        Field y = rho;
        field_axpy(y, 0.5 * dt, k1);
        Field k2 = tilted_rhs(y, t + 0.5 * dt);
        y = rho;
        field_axpy(y, 0.5 * dt, k2);
        Field k3 = tilted_rhs(y, t + 0.5 * dt);
        y = rho;
        field_axpy(y, dt, k3);
        Field k4 = tilted_rhs(y, t + dt);
        field_axpy(rho, dt / 6.0, k1);
        field_axpy(rho, dt / 3.0, k2);
        field_axpy(rho, dt / 3.0, k3);
        field_axpy(rho, dt / 6.0, k4);
    }
    MgfResult res;
    {
        FieldState st;
        st.phi = std::move(rho);
        res.ode_value = pair_x(st) * std::exp(initial.log_scale);
    }

    // Monte Carlo side: unnormalized filter driven by reference noise.
    double sum = 0.0, sumsq = 0.0;
    for (int traj = 0; traj < trajectories; ++traj) {
        TrajectoryStream stream(seed, uint64_t(traj));
        FieldState st = initial;
        double log_z = 0.0;
        for (int k = 0; k < steps; ++k) {
            double t = k * dt;
            Increments inc = sample_increments(s.noise, stream, dt);
            RealVector de = derive_outputs(s.noise, inc.dv);
            RealVector b = beta(t);
            log_z += b.dot(de) - 0.5 * dt * b.dot(s.noise.de_cov * b);
            step_linear(gen, st, inc.dv, dt);
        }
        double v = pair_x(st) * std::exp(log_z);
        sum += v;
        sumsq += v * v;
    }
    res.trajectories = trajectories;
    res.mc_value = sum / trajectories;
    double var = std::max(0.0, sumsq / trajectories - res.mc_value * res.mc_value);
    res.mc_std_error =
        trajectories > 1 ? std::sqrt(var / (trajectories - 1)) : 0.0;
    return res;
}

} // namespace qfilter
