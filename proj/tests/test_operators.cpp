#include <catch2/catch_amalgamated.hpp>

#include "qfilter/operators.hpp"
#include "qfilter/rng.hpp"

using namespace qfilter;
using Catch::Approx;

namespace {
Operator random_hermitian(int n, TrajectoryStream& s, double scale = 1.0) {
    Operator m(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            m(i, j) = Complex(s.gaussian(), s.gaussian());
    m = 0.5 * (m + dagger(m)).eval();
    return scale * m;
}

Operator random_hpd(int n, TrajectoryStream& s) {
    Operator m(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            m(i, j) = Complex(s.gaussian(), s.gaussian());
    return m * dagger(m) + 0.5 * Operator::Identity(n, n);
}
} // namespace

TEST_CASE("oscillator ladder algebra respects the truncation") {
    Oscillator osc = build_oscillator(2, 1.0, 1.0);
    Operator c = commutator(osc.a, dagger(osc.a));
    REQUIRE(std::abs(c(0, 0) - Complex(1.0)) < 1e-14);
    REQUIRE(std::abs(c(1, 1) - Complex(-1.0)) < 1e-14);
    REQUIRE(std::abs(c(0, 1)) < 1e-14);
}

TEST_CASE("canonical commutator holds below the truncation edge") {
    const int d = 5;
    const double hbar = 2.0, omega = 1.3;
    Oscillator osc = build_oscillator(d, hbar, omega);
    // [Q, P] = i hbar (I - d |d-1><d-1|) in a d-level truncation.
    Operator expect = Complex(0, hbar) * Operator::Identity(d, d);
    expect(d - 1, d - 1) = Complex(0, hbar) * (1.0 - double(d));
    REQUIRE((commutator(osc.q, osc.p) - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("rotating-frame mode operator reproduces the Hamiltonian scale") {
    const int d = 6;
    const double hbar = 2.0, omega = 0.7;
    Oscillator osc = build_oscillator(d, hbar, omega);
    // A = i P + omega Q has [A, Adag] = 2 hbar omega away from the edge.
    Operator a_mode = Complex(0, 1) * osc.p + omega * osc.q;
    Operator c = commutator(a_mode, dagger(a_mode));
    for (int n = 0; n + 1 < d; ++n)
        REQUIRE(std::abs(c(n, n) - Complex(2.0 * hbar * omega)) < 1e-12);
    // And hbar omega adag a equals the stored Hamiltonian exactly.
    Operator h2 = hbar * omega * dagger(osc.a) * osc.a;
    REQUIRE((h2 - osc.h).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("oscillator construction validates arguments") {
    REQUIRE_THROWS_AS(build_oscillator(1, 1.0, 1.0), domain_error);
    REQUIRE_THROWS_AS(build_oscillator(4, 0.0, 1.0), domain_error);
    REQUIRE_THROWS_AS(build_oscillator(4, 1.0, -2.0), domain_error);
}

TEST_CASE("hermitize and defect measurement") {
    TrajectoryStream s(7, 0);
    Operator m(3, 3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m(i, j) = Complex(s.gaussian(), s.gaussian());
    REQUIRE(hermiticity_defect(m) > 0.0);
    Operator h = m;
    hermitize(h);
    REQUIRE(hermiticity_defect(h) < 1e-14);
    REQUIRE(is_hermitian(h));
    REQUIRE(!is_hermitian(m + Operator::Identity(3, 3) * Complex(0, 1)));
}

TEST_CASE("exact unitary exponential of a Hermitian generator") {
    // exp(i t sigma_y) = cos t I + i sin t sigma_y.
    Operator sy(2, 2);
    sy << Complex(0, 0), Complex(0, -1), Complex(0, 1), Complex(0, 0);
    const double t = 0.8321;
    Operator u = expi_hermitian(t * sy);
    Operator expect = std::cos(t) * Operator::Identity(2, 2) +
                      Complex(0, 1) * std::sin(t) * sy;
    REQUIRE((u - expect).cwiseAbs().maxCoeff() < 1e-14);
    REQUIRE((u * dagger(u) - Operator::Identity(2, 2)).cwiseAbs().maxCoeff() <
            1e-14);
}

TEST_CASE("herm_sqrt and herm_inv_sqrt invert each other") {
    TrajectoryStream s(11, 0);
    Operator p = random_hpd(4, s);
    Operator r = herm_sqrt(p);
    REQUIRE((r * r - p).cwiseAbs().maxCoeff() < 1e-11 * p.norm());
    Operator ri = herm_inv_sqrt(p);
    REQUIRE((r * ri - Operator::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-11);
    REQUIRE(hermiticity_defect(r) < 1e-12 * p.norm());
}

TEST_CASE("herm_eig rejects non-Hermitian input") {
    Operator m(2, 2);
    m << 1.0, Complex(0, 1), Complex(0, 1), 2.0;
    REQUIRE_THROWS_AS(herm_eig(m, "test"), domain_error);
}

TEST_CASE("symmetrized product equation: scalar case") {
    Operator p(1, 1), c(1, 1);
    p(0, 0) = 0.5;
    c(0, 0) = 0.3;
    Operator x = jordan_solve(p, c);
    REQUIRE(std::abs(x(0, 0) - Complex(0.6)) < 1e-14);
}

TEST_CASE("symmetrized product equation matches a vectorized solve") {
    TrajectoryStream s(23, 0);
    const int n = 4;
    Operator p = random_hpd(n, s);
    Operator c = random_hermitian(n, s);
    Operator x = jordan_solve(p, c);

    // Independent route: vectorize (XP + PX)/2 = C as a dense linear system
    // using vec(AXB) = (B^T (x) A) vec(X).
    Operator ident = Operator::Identity(n, n);
    Operator m = 0.5 * (kron(p.transpose(), ident) + kron(ident, p));
    Eigen::VectorXcd vc(n * n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) vc[j * n + i] = c(i, j);
    Eigen::VectorXcd vx = m.fullPivLu().solve(vc);
    Operator x_ref(n, n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) x_ref(i, j) = vx[j * n + i];
    REQUIRE((x - x_ref).cwiseAbs().maxCoeff() < 1e-10);
    // Solution of a Hermitian equation is Hermitian.
    REQUIRE(hermiticity_defect(x) < 1e-11);
    // Residual of the defining equation.
    REQUIRE((0.5 * (x * p + p * x) - c).cwiseAbs().maxCoeff() < 1e-11);
}

TEST_CASE("jordan_solve rejects indefinite coefficient") {
    Operator p(2, 2), c(2, 2);
    p << 1.0, 0.0, 0.0, -1.0;
    c.setIdentity();
    REQUIRE_THROWS_AS(jordan_solve(p, c), domain_error);
}

TEST_CASE("kron multiplies blockwise") {
    TrajectoryStream s(31, 0);
    Operator a = random_hermitian(2, s), b = random_hermitian(3, s);
    Operator c = random_hermitian(2, s), d = random_hermitian(3, s);
    Operator lhs = kron(a, b) * kron(c, d);
    Operator rhs = kron((a * c).eval(), (b * d).eval());
    REQUIRE((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("density operator validation") {
    Operator good = fock_state(3, 1);
    REQUIRE_NOTHROW(DensityOperator(good));
    Operator bad_trace = 2.0 * good;
    REQUIRE_THROWS_AS(DensityOperator(bad_trace), domain_error);
    Operator negative = good;
    negative(0, 0) = -0.5;
    negative(1, 1) = 1.5;
    REQUIRE_THROWS_AS(DensityOperator(negative), domain_error);
    Operator unnorm = 2.0 * good;
    REQUIRE_NOTHROW(DensityOperator(unnorm, false));
}

TEST_CASE("trajectory streams are reproducible and decorrelated") {
    TrajectoryStream a(99, 4), b(99, 4), c(99, 5);
    double a1 = a.gaussian(), b1 = b.gaussian(), c1 = c.gaussian();
    REQUIRE(a1 == b1);
    REQUIRE(a1 != c1);
    for (int i = 0; i < 100; ++i) {
        REQUIRE(a.gaussian() == b.gaussian());
    }
    double u = c.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
}
