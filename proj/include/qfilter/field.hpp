// Signal-grid model and operator-valued fields.
//
// A field assigns one system operator to every point of a uniform signal
// grid; integrals over the signal use trapezoid weights throughout, so the
// scalar pairing is <X, phi> = sum_i w_i tr(X_i phi_i).
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "qfilter/operators.hpp"

namespace qfilter {

struct SignalModel {
    RealVector grid;     // uniform, >= 3 points
    double h = 0.0;      // spacing
    RealVector weights;  // trapezoid: h * (1/2, 1, ..., 1, 1/2)
    double sigma = 0.0;  // signal diffusion
    RealVector upsilon;      // drift coefficient upsilon(theta_i)
    RealVector upsilon_face; // upsilon at cell faces (midpoints), size N-1
    RealVector f;        // coupling f(theta_i)
    RealVector fprime;   // f'(theta_i)
    RealVector fsecond;  // f''(theta_i)
    bool f_flat = false; // f' == f'' == 0 (no signal force on the system)

    int points() const { return int(grid.size()); }

    static SignalModel tabulated(double lo, double hi, int points, double sigma,
                                 const std::function<double(double)>& upsilon_fn,
                                 const std::function<double(double)>& f_fn,
                                 const std::function<double(double)>& fprime_fn,
                                 const std::function<double(double)>& fsecond_fn) {
        if (points < 3) throw model_error("SignalModel: grid needs >= 3 points");
        if (!(hi > lo)) throw model_error("SignalModel: empty grid range");
        if (sigma < 0.0) throw model_error("SignalModel: sigma must be >= 0");
        SignalModel s;
        s.h = (hi - lo) / (points - 1);
        s.grid = RealVector::LinSpaced(points, lo, hi);
        s.weights = RealVector::Constant(points, s.h);
        s.weights[0] = s.weights[points - 1] = 0.5 * s.h;
        s.sigma = sigma;
        s.upsilon = s.grid.unaryExpr(upsilon_fn);
        s.upsilon_face.resize(points - 1);
        for (int i = 0; i + 1 < points; ++i)
            s.upsilon_face[i] = upsilon_fn(0.5 * (s.grid[i] + s.grid[i + 1]));
        s.f = s.grid.unaryExpr(f_fn);
        s.fprime = s.grid.unaryExpr(fprime_fn);
        s.fsecond = s.grid.unaryExpr(fsecond_fn);
        s.f_flat = s.fprime.cwiseAbs().maxCoeff() == 0.0 &&
                   s.fsecond.cwiseAbs().maxCoeff() == 0.0;
        return s;
    }

    // Linear drift upsilon(theta) = upsilon_coef * theta with identity coupling.
    static SignalModel linear(double upsilon_coef, double sigma, double lo,
                              double hi, int points) {
        return tabulated(
            lo, hi, points, sigma,
            [upsilon_coef](double t) { return upsilon_coef * t; },
            [](double t) { return t; }, [](double) { return 1.0; },
            [](double) { return 0.0; });
    }

    // No signal force on the system; drift/diffusion may still act on the grid.
    static SignalModel inert(double lo, double hi, int points,
                             double upsilon_coef = 0.0, double sigma = 0.0) {
        return tabulated(
            lo, hi, points, sigma,
            [upsilon_coef](double t) { return upsilon_coef * t; },
            [](double) { return 0.0; }, [](double) { return 0.0; },
            [](double) { return 0.0; });
    }
};

using Field = std::vector<Operator>;

inline Field zero_field_like(const Field& x) {
    Field out(x.size());
    for (size_t i = 0; i < x.size(); ++i)
        out[i] = Operator::Zero(x[i].rows(), x[i].cols());
    return out;
}

// out += c * x
inline void field_axpy(Field& out, double c, const Field& x) {
    for (size_t i = 0; i < x.size(); ++i) out[i] += c * x[i];
}

struct FieldState {
    Field phi;
    double log_scale = 0.0; // represented field = exp(log_scale) * phi

    // Stored weight sum_i w_i tr(phi_i), without the log-scale factor.
    double raw_weight(const SignalModel& sig) const {
        double w = 0.0;
        for (int i = 0; i < sig.points(); ++i)
            w += sig.weights[i] * phi[i].trace().real();
        return w;
    }

    double log_weight(const SignalModel& sig) const {
        double w = raw_weight(sig);
        if (!(w > 0.0))
            throw blowup_error("FieldState: weight is not positive");
        return log_scale + std::log(w);
    }

    // System marginal sum_i w_i phi_i at stored scale.
    Operator marginal(const SignalModel& sig) const {
        Operator m = Operator::Zero(phi[0].rows(), phi[0].cols());
        for (int i = 0; i < sig.points(); ++i) m += sig.weights[i] * phi[i];
        return m;
    }
};

// Product state rho0 x prior, with the prior renormalized so the discrete
// weight is exactly 1 on the grid.
inline FieldState product_state(const SignalModel& sig, const Operator& rho0,
                                const std::function<double(double)>& prior) {
    FieldState st;
    st.phi.resize(sig.points());
    double z = 0.0;
    for (int i = 0; i < sig.points(); ++i) z += sig.weights[i] * prior(sig.grid[i]);
    if (!(z > 0.0)) throw model_error("product_state: prior has zero mass on grid");
    for (int i = 0; i < sig.points(); ++i)
        st.phi[i] = (prior(sig.grid[i]) / z) * rho0;
    return st;
}

inline FieldState gaussian_product_state(const SignalModel& sig,
                                         const Operator& rho0, double mean,
                                         double stddev) {
    if (!(stddev > 0.0)) throw model_error("gaussian_product_state: bad stddev");
    return product_state(sig, rho0, [mean, stddev](double t) {
        double z = (t - mean) / stddev;
        return std::exp(-0.5 * z * z);
    });
}

// <X, phi> = sum_i w_i tr(X_i phi_i) at stored scale (log_scale ignored).
inline Complex field_pairing(const SignalModel& sig, const Field& x,
                             const Field& phi) {
    Complex acc = 0.0;
    for (int i = 0; i < sig.points(); ++i)
        acc += sig.weights[i] * (x[i] * phi[i]).trace();
    return acc;
}

// Posterior mean of a fixed observable X under the (possibly unnormalized)
// state: sum_i w_i tr(X phi_i) / weight.
inline double operator_mean(const SignalModel& sig, const FieldState& st,
                            const Operator& x) {
    Complex num = 0.0;
    double den = 0.0;
    for (int i = 0; i < sig.points(); ++i) {
        num += sig.weights[i] * (x * st.phi[i]).trace();
        den += sig.weights[i] * st.phi[i].trace().real();
    }
    if (!(std::abs(den) > 0.0))
        throw blowup_error("operator_mean: zero weight");
    return (num / den).real();
}

// Posterior mean of the signal value itself.
inline double signal_mean(const SignalModel& sig, const FieldState& st) {
    double num = 0.0, den = 0.0;
    for (int i = 0; i < sig.points(); ++i) {
        double t = sig.weights[i] * st.phi[i].trace().real();
        num += sig.grid[i] * t;
        den += t;
    }
    if (!(std::abs(den) > 0.0)) throw blowup_error("signal_mean: zero weight");
    return num / den;
}

} // namespace qfilter
