#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "qfilter/generator.hpp"
#include "qfilter/rng.hpp"

using namespace qfilter;

namespace {

Operator random_matrix(int n, TrajectoryStream& s) {
    Operator m(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            m(i, j) = Complex(s.gaussian(), s.gaussian());
    return m;
}

Operator random_hermitian(int n, TrajectoryStream& s) {
    Operator m = random_matrix(n, s);
    return 0.5 * (m + dagger(m)).eval();
}

Field random_field(const SignalModel& sig, int dim, TrajectoryStream& s,
                   bool hermitian = false) {
    Field f(sig.points());
    for (auto& op : f)
        op = hermitian ? random_hermitian(dim, s) : random_matrix(dim, s);
    return f;
}

double field_max_norm(const Field& f) {
    double m = 0.0;
    for (const auto& op : f) m = std::max(m, op.cwiseAbs().maxCoeff());
    return m;
}

// Oscillator system with two channels, one observed, a complex noise matrix
// and a nonlinear signal coupling. Exercises every term of the generator.
SystemModel full_system(int points) {
    Operator kappa(2, 2);
    kappa << Complex(2.0, 0.0), Complex(0.0, 1.0),
             Complex(0.0, -1.0), Complex(2.0, 0.0);
    NoiseSpec noise = NoiseSpec::make(kappa, 1);
    SignalModel sig = SignalModel::tabulated(
        -3.0, 3.0, points, 0.6, [](double t) { return 0.8 * t; },
        [](double t) { return std::sin(t); },
        [](double t) { return std::cos(t); },
        [](double t) { return -std::sin(t); });
    Oscillator osc = build_oscillator(4, 2.0, 1.3);
    std::vector<Operator> L = {0.5 * osc.q, 0.3 * osc.p};
    return SystemModel::make(2.0, osc.h, osc.q, std::move(L), std::move(noise),
                             std::move(sig));
}

// Purely classical 1x1 "system": the generator reduces to the
// drift-diffusion flux of the signal density.
SystemModel classical_system(SignalModel sig) {
    NoiseSpec noise = NoiseSpec::make(Operator::Identity(1, 1), 1);
    Operator z = Operator::Zero(1, 1);
    return SystemModel::make(1.0, z, z, {z}, std::move(noise), std::move(sig));
}

} // namespace

TEST_CASE("state and observable generators are exact duals") {
    SystemModel sys = full_system(41);
    Generator gen(sys);
    TrajectoryStream s(404, 0);
    for (int rep = 0; rep < 4; ++rep) {
        Field phi = random_field(sys.signal, sys.dim, s);
        Field x = random_field(sys.signal, sys.dim, s);
        Complex lhs = field_pairing(sys.signal, x, gen.apply(phi));
        Complex rhs = field_pairing(sys.signal, gen.apply_adjoint(x), phi);
        REQUIRE(std::abs(lhs - rhs) < 1e-10 * (1.0 + std::abs(lhs)));
    }
}

TEST_CASE("generator conserves the trace weight") {
    SystemModel sys = full_system(33);
    Generator gen(sys);
    TrajectoryStream s(405, 0);
    Field phi = random_field(sys.signal, sys.dim, s, true);
    Field lam = gen.apply(phi);
    Complex rate = 0.0;
    for (int i = 0; i < sys.signal.points(); ++i)
        rate += sys.signal.weights[i] * lam[i].trace();
    REQUIRE(std::abs(rate) < 1e-10);
}

TEST_CASE("observable generator annihilates the constant identity field") {
    SystemModel sys = full_system(33);
    Generator gen(sys);
    Field ident(sys.signal.points(),
                Operator::Identity(sys.dim, sys.dim));
    Field out = gen.apply_adjoint(ident);
    REQUIRE(field_max_norm(out) < 1e-10);
}

TEST_CASE("flux operator conserves weight column by column") {
    SignalModel sig = SignalModel::linear(1.1, 0.7, -2.0, 2.0, 17);
    GridOp flux = GridOp::flux_divergence(sig);
    for (int j = 0; j < sig.points(); ++j) {
        RealVector e = RealVector::Zero(sig.points());
        e[j] = 1.0;
        RealVector col = flux.apply(e);
        REQUIRE(std::abs(sig.weights.dot(col)) < 1e-12);
    }
}

TEST_CASE("weighted transpose is the exact adjoint of a grid operator") {
    SignalModel sig = SignalModel::linear(0.9, 0.5, -1.0, 1.0, 13);
    GridOp flux = GridOp::flux_divergence(sig);
    GridOp fluxT = flux.weighted_transpose(sig.weights);
    TrajectoryStream s(406, 0);
    RealVector a(sig.points()), b(sig.points());
    for (int i = 0; i < sig.points(); ++i) {
        a[i] = s.gaussian();
        b[i] = s.gaussian();
    }
    double lhs = sig.weights.dot(b.cwiseProduct(flux.apply(a)));
    double rhs = sig.weights.dot(fluxT.apply(b).cwiseProduct(a));
    REQUIRE(std::abs(lhs - rhs) < 1e-11 * (1.0 + std::abs(lhs)));
}

TEST_CASE("drift-diffusion flux reproduces Ornstein-Uhlenbeck moments") {
    const double ucoef = 1.2, sigma = 0.8, m0 = 1.0, s0 = 0.6, T = 0.5;
    const double vinf = sigma * sigma / (2.0 * ucoef);
    const double mT = m0 * std::exp(-ucoef * T);
    const double vT = vinf + (s0 * s0 - vinf) * std::exp(-2.0 * ucoef * T);

    auto run = [&](int points) {
        SignalModel sig = SignalModel::linear(ucoef, sigma, -6.0, 6.0, points);
        SystemModel sys = classical_system(sig);
        Generator gen(sys);
        FieldState st =
            gaussian_product_state(sys.signal, Operator::Identity(1, 1), m0, s0);
        const double dt = 2e-3;
        const int steps = int(std::lround(T / dt));
        Field k1, k2, k3, k4, tmp;
        for (int n = 0; n < steps; ++n) {
            k1 = gen.apply(st.phi);
            tmp = st.phi; field_axpy(tmp, 0.5 * dt, k1);
            k2 = gen.apply(tmp);
            tmp = st.phi; field_axpy(tmp, 0.5 * dt, k2);
            k3 = gen.apply(tmp);
            tmp = st.phi; field_axpy(tmp, dt, k3);
            k4 = gen.apply(tmp);
            field_axpy(st.phi, dt / 6.0, k1);
            field_axpy(st.phi, dt / 3.0, k2);
            field_axpy(st.phi, dt / 3.0, k3);
            field_axpy(st.phi, dt / 6.0, k4);
        }
        REQUIRE(std::abs(st.raw_weight(sys.signal) - 1.0) < 1e-12);
        double mean = signal_mean(sys.signal, st);
        double m2 = 0.0;
        for (int i = 0; i < sig.points(); ++i)
            m2 += sig.weights[i] * sig.grid[i] * sig.grid[i] *
                  st.phi[i](0, 0).real();
        double var = m2 - mean * mean;
        return std::pair<double, double>(std::abs(mean - mT),
                                         std::abs(var - vT));
    };

    auto [em_fine, ev_fine] = run(241);
    REQUIRE(em_fine < 3e-3);
    REQUIRE(ev_fine < 3e-3);
    auto [em_coarse, ev_coarse] = run(121);
    REQUIRE(em_coarse + ev_coarse > 2.0 * (em_fine + ev_fine));
}

TEST_CASE("dissipator matches the single-channel master-equation form") {
    for (double gamma : {1.0, 2.5}) {
        NoiseSpec noise =
            NoiseSpec::make(gamma * Operator::Identity(1, 1), 1);
        SignalModel sig = SignalModel::inert(-1.0, 1.0, 3);
        SystemModel sys = oscillator_system(6, 2.0, 1.0, noise, sig);
        Generator gen(sys);
        TrajectoryStream s(407, 0);
        Operator phi = random_hermitian(6, s);
        const Operator& L = sys.L[0];
        Operator want =
            (L * phi * dagger(L) -
             0.5 * (dagger(L) * L * phi + phi * dagger(L) * L)) / gamma;
        REQUIRE((gen.dissipator(phi) - want).cwiseAbs().maxCoeff() < 1e-12);
        Operator x = random_hermitian(6, s);
        Operator wantx =
            (dagger(L) * x * L -
             0.5 * (dagger(L) * L * x + x * dagger(L) * L)) / gamma;
        REQUIRE((gen.dissipator_adjoint(x) - wantx).cwiseAbs().maxCoeff() <
                1e-12);
    }
}

TEST_CASE("generator preserves Hermiticity pointwise") {
    SystemModel sys = full_system(21);
    Generator gen(sys);
    TrajectoryStream s(408, 0);
    Field phi = random_field(sys.signal, sys.dim, s, true);
    Field lam = gen.apply(phi);
    Field lamx = gen.apply_adjoint(phi);
    for (int i = 0; i < sys.signal.points(); ++i) {
        REQUIRE(hermiticity_defect(lam[i]) < 1e-11);
        REQUIRE(hermiticity_defect(lamx[i]) < 1e-11);
    }
}

TEST_CASE("derivative stencils converge at second order") {
    auto g = [](double t) { return std::sin(1.3 * t + 0.2); };
    auto g1 = [](double t) { return 1.3 * std::cos(1.3 * t + 0.2); };
    auto g2 = [](double t) { return -1.69 * std::sin(1.3 * t + 0.2); };
    auto max_errors = [&](int N) {
        const double lo = -2.0, hi = 2.0, h = (hi - lo) / (N - 1);
        RealVector v(N);
        for (int i = 0; i < N; ++i) v[i] = g(lo + i * h);
        RealVector d1 = GridOp::central_derivative(N, h).apply(v);
        RealVector d2 = GridOp::second_derivative(N, h).apply(v);
        double e1 = 0.0, e2 = 0.0;
        for (int i = 0; i < N; ++i) {
            e1 = std::max(e1, std::abs(d1[i] - g1(lo + i * h)));
            e2 = std::max(e2, std::abs(d2[i] - g2(lo + i * h)));
        }
        return std::pair<double, double>(e1, e2);
    };
    auto [e1c, e2c] = max_errors(41);
    auto [e1f, e2f] = max_errors(81);
    REQUIRE(e1c > 3.5 * e1f);
    REQUIRE(e2c > 3.5 * e2f);
    REQUIRE(e1f < 5e-3);
    REQUIRE(e2f < 5e-3);
}

TEST_CASE("signal derivative annihilates covariantly transported fields") {
    // X(theta) = e^{f(theta) B} Y e^{-f(theta) B} satisfies
    // dX/dtheta = -f' [X, B], so the covariant derivative vanishes.
    auto run = [&](int N) {
        NoiseSpec noise = NoiseSpec::make(Operator::Identity(1, 1), 1);
        SignalModel sig = SignalModel::tabulated(
            -2.0, 2.0, N, 0.5, [](double) { return 0.0; },
            [](double t) { return std::sin(t); },
            [](double t) { return std::cos(t); },
            [](double t) { return -std::sin(t); });
        SystemModel sys = oscillator_system(4, 2.0, 1.0, noise, sig);
        TrajectoryStream s(409, 0);
        Operator y = random_hermitian(4, s);
        Field x(N);
        for (int i = 0; i < N; ++i) {
            Operator v = expi_hermitian((sig.f[i] / sys.hbar) * sys.Q);
            x[i] = v * y * dagger(v);
        }
        return field_max_norm(signal_derivative(sys, x));
    };
    double coarse = run(33), fine = run(65);
    REQUIRE(coarse > 3.5 * fine);
    REQUIRE(fine < 1e-2);
}

TEST_CASE("signal second derivative annihilates linearly transported fields") {
    // With f linear the composite second stencil is the square of the first,
    // so it also vanishes on covariantly transported fields.
    auto run = [&](int N) {
        NoiseSpec noise = NoiseSpec::make(Operator::Identity(1, 1), 1);
        SignalModel sig = SignalModel::tabulated(
            -2.0, 2.0, N, 0.5, [](double) { return 0.0; },
            [](double t) { return 0.7 * t; }, [](double) { return 0.7; },
            [](double) { return 0.0; });
        SystemModel sys = oscillator_system(4, 2.0, 1.0, noise, sig);
        TrajectoryStream s(410, 0);
        Operator y = random_hermitian(4, s);
        Field x(N);
        for (int i = 0; i < N; ++i) {
            Operator v = expi_hermitian((sig.f[i] / sys.hbar) * sys.Q);
            x[i] = v * y * dagger(v);
        }
        return field_max_norm(signal_second_derivative(sys, x));
    };
    double coarse = run(33), fine = run(65);
    REQUIRE(coarse > 3.0 * fine);
    REQUIRE(fine < 1e-1);
}

TEST_CASE("signal second derivative matches its continuum formula") {
    Oscillator osc = build_oscillator(4, 2.0, 1.0);
    const Operator A = osc.q, C = osc.p;
    auto run = [&](int N) {
        NoiseSpec noise = NoiseSpec::make(Operator::Identity(1, 1), 1);
        SignalModel sig = SignalModel::tabulated(
            -2.0, 2.0, N, 0.5, [](double) { return 0.0; },
            [](double t) { return std::sin(t); },
            [](double t) { return std::cos(t); },
            [](double t) { return -std::sin(t); });
        SystemModel sys = oscillator_system(4, 2.0, 1.0, noise, sig);
        Field x(N);
        for (int i = 0; i < N; ++i) {
            double t = sig.grid[i];
            x[i] = std::sin(t) * A + std::cos(2.0 * t) * C;
        }
        Field got = signal_second_derivative(sys, x);
        double err = 0.0;
        for (int i = 0; i < N; ++i) {
            double t = sig.grid[i];
            Operator x0 = std::sin(t) * A + std::cos(2.0 * t) * C;
            Operator x1 = std::cos(t) * A - 2.0 * std::sin(2.0 * t) * C;
            Operator x2 = -std::sin(t) * A - 4.0 * std::cos(2.0 * t) * C;
            Operator want =
                x2 +
                (2.0 * sig.fprime[i] + sig.fsecond[i]) *
                    commutator_b(x1, sys.B) +
                sig.fprime[i] * sig.fprime[i] *
                    commutator_b(commutator_b(x0, sys.B), sys.B);
            err = std::max(err, (got[i] - want).cwiseAbs().maxCoeff());
        }
        return err;
    };
    double coarse = run(41), fine = run(81);
    REQUIRE(coarse > 3.0 * fine);
    REQUIRE(fine < 1e-1);
}
