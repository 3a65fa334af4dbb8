#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "qfilter/dilation.hpp"
#include "qfilter/filter.hpp"

using namespace qfilter;
using Catch::Approx;

namespace {

Operator random_matrix(int dim, TrajectoryStream& stream) {
    Operator m(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j)
            m(i, j) = Complex(stream.gaussian(), stream.gaussian());
    return m;
}

Operator random_hermitian(int dim, TrajectoryStream& stream) {
    Operator m = random_matrix(dim, stream);
    Operator h = 0.5 * (m + dagger(m));
    hermitize(h);
    return h;
}

Operator random_state(int dim, TrajectoryStream& stream) {
    Operator m = random_matrix(dim, stream);
    Operator rho = m * dagger(m);
    rho /= rho.trace().real();
    hermitize(rho);
    return rho;
}

double max_abs(const Operator& m) { return m.cwiseAbs().maxCoeff(); }

double trace_norm(Operator m) {
    hermitize(m);
    Eigen::SelfAdjointEigenSolver<Operator> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().sum();
}

// Trace distance between one exact-conditioning branch and one normalized
// filter step consuming the same two-point record increment +-sqrt(dt).
double one_step_gap(double dt, int sign, const Operator& rho0) {
    Oscillator osc = build_oscillator(4, 2.0, 1.0);
    Operator l = 0.5 * osc.q;
    auto kraus = kraus_pair(step_unitary(osc.h, l, 2.0, dt));
    auto branches = condition_step(kraus, rho0);
    const ConditionedBranch& branch = branches[sign > 0 ? 0 : 1];

    NoiseSpec vac = NoiseSpec::make(Operator::Identity(1, 1), 1);
    SignalModel inert = SignalModel::inert(-1.0, 1.0, 3);
    SystemModel sys = SystemModel::make(2.0, osc.h, osc.q, {l}, std::move(vac),
                                        std::move(inert));
    Generator gen(sys);
    FieldState st = product_state(sys.signal, rho0, [](double) { return 1.0; });
    RealVector de = RealVector::Constant(1, sign * std::sqrt(dt));
    step_normalized(gen, st, de, dt);
    return 0.5 * trace_norm(st.marginal(sys.signal) - branch.state);
}

} // namespace

TEST_CASE("slice unitary is unitary and validates its arguments") {
    TrajectoryStream stream(301, 0);
    for (int rep = 0; rep < 4; ++rep) {
        int dim = 2 + rep % 3;
        Operator h = random_hermitian(dim, stream);
        Operator l = random_matrix(dim, stream);
        Operator u = step_unitary(h, l, 2.0, 0.01);
        REQUIRE(u.rows() == 2 * dim);
        REQUIRE(max_abs(dagger(u) * u -
                        Operator::Identity(2 * dim, 2 * dim)) < 1e-12);
    }
    Operator h = random_hermitian(3, stream);
    Operator l = random_matrix(2, stream);
    REQUIRE_THROWS_AS(step_unitary(h, l, 2.0, 0.01), domain_error);
    REQUIRE_THROWS_AS(step_unitary(h, random_matrix(3, stream), 2.0, 0.0),
                      domain_error);
    REQUIRE_THROWS_AS(step_unitary(h, random_matrix(3, stream), 0.0, 0.01),
                      domain_error);
}

TEST_CASE("measurement operators are complete and match the slice expansion") {
    TrajectoryStream stream(302, 0);
    Operator h = random_hermitian(3, stream);
    Operator l = random_matrix(3, stream);
    const double hbar = 2.0;
    const Operator ident = Operator::Identity(3, 3);

    auto defect = [&](double dt) {
        auto kraus = kraus_pair(step_unitary(h, l, hbar, dt));
        double worst = 0.0;
        for (int sign : {+1, -1}) {
            Operator expansion =
                (1.0 / std::sqrt(2.0)) *
                (ident + double(sign) * std::sqrt(dt) * l -
                 0.5 * dt * dagger(l) * l -
                 Complex(0.0, dt / hbar) * h);
            worst = std::max(
                worst, max_abs(kraus[sign > 0 ? 0 : 1] - expansion));
        }
        return worst;
    };

    for (double dt : {0.02, 0.005}) {
        auto kraus = kraus_pair(step_unitary(h, l, hbar, dt));
        REQUIRE(max_abs(dagger(kraus[0]) * kraus[0] +
                        dagger(kraus[1]) * kraus[1] - ident) < 1e-12);
    }

    // The residual after the explicit expansion scales as dt^(3/2): a factor
    // of 4 in dt shrinks it by about 8.
    double coarse = defect(0.02), fine = defect(0.005);
    INFO("expansion defect " << coarse << " -> " << fine);
    REQUIRE(coarse / fine > 5.5);
    REQUIRE(coarse / fine < 11.0);
    REQUIRE(fine < 1e-3);

    REQUIRE_THROWS_AS(kraus_pair(random_matrix(5, stream)), domain_error);
}

TEST_CASE("outcome-averaged slice map reproduces the generator to dt^2") {
    TrajectoryStream stream(303, 0);
    Operator h = random_hermitian(3, stream);
    Operator l = random_matrix(3, stream);
    Operator rho = random_state(3, stream);
    const double hbar = 2.0;

    auto defect = [&](double dt) {
        auto kraus = kraus_pair(step_unitary(h, l, hbar, dt));
        Operator reduced = reduced_step(kraus, rho);
        Operator lind = Complex(0.0, -1.0 / hbar) * (h * rho - rho * h) +
                        l * rho * dagger(l) -
                        0.5 * (dagger(l) * l * rho + rho * dagger(l) * l);
        return max_abs(reduced - (rho + dt * lind));
    };

    double coarse = defect(0.02), fine = defect(0.005);
    INFO("reduced defect " << coarse << " -> " << fine);
    REQUIRE(coarse / fine > 12.0);
    REQUIRE(coarse / fine < 20.0);
    REQUIRE(fine < 2e-3);
}

TEST_CASE("conditioning branches are normalized states with total weight one") {
    TrajectoryStream stream(304, 0);
    Operator h = random_hermitian(4, stream);
    Operator l = random_matrix(4, stream);
    Operator rho = random_state(4, stream);

    for (double dt : {0.05, 0.01}) {
        auto kraus = kraus_pair(step_unitary(h, l, 2.0, dt));
        auto branches = condition_step(kraus, rho);
        REQUIRE(branches[0].probability + branches[1].probability ==
                Approx(1.0).margin(1e-12));
        for (const auto& b : branches) {
            REQUIRE(b.probability > 0.0);
            REQUIRE(b.state.trace().real() == Approx(1.0).margin(1e-12));
            Operator s = b.state;
            hermitize(s);
            Eigen::SelfAdjointEigenSolver<Operator> es(s,
                                                       Eigen::EigenvaluesOnly);
            REQUIRE(es.eigenvalues().minCoeff() > -1e-12);
        }
    }
}

TEST_CASE("mean measured increment reproduces the output rate to dt^2") {
    // E[lambda sqrt(dt)] = tr((L + Ldag) rho) dt + O(dt^2).
    TrajectoryStream stream(305, 0);
    Operator h = random_hermitian(3, stream);
    Operator l = random_matrix(3, stream);
    Operator rho = random_state(3, stream);
    double rate = ((l + dagger(l)) * rho).trace().real();

    auto defect = [&](double dt) {
        auto branches =
            condition_step(kraus_pair(step_unitary(h, l, 2.0, dt)), rho);
        double mean =
            (branches[0].probability - branches[1].probability) * std::sqrt(dt);
        return std::abs(mean - rate * dt);
    };

    double coarse = defect(0.02), fine = defect(0.005);
    INFO("increment-mean defect " << coarse << " -> " << fine);
    REQUIRE(coarse / fine > 12.0);
    REQUIRE(coarse / fine < 20.0);
    REQUIRE(fine < 2e-3);
}

TEST_CASE("slice-local embedding respects products, traces, and disjointness") {
    const int d = 3, len = 3;
    TrajectoryStream stream(306, 0);
    Operator a = random_matrix(2 * d, stream);
    Operator b = random_matrix(2 * d, stream);

    // Base case: a one-slice chain is the bare pair space.
    REQUIRE(max_abs(embed_pair(a, d, 1, 1) - a) == 0.0);

    for (int r = 1; r <= len; ++r) {
        Operator ea = embed_pair(a, d, len, r);
        REQUIRE(ea.rows() == d << len);
        // Identity embeds to identity.
        REQUIRE(max_abs(embed_pair(Operator::Identity(2 * d, 2 * d), d, len, r) -
                        Operator::Identity(d << len, d << len)) == 0.0);
        // Embedding is an algebra homomorphism slice by slice.
        REQUIRE(max_abs(embed_pair(a, d, len, r) * embed_pair(b, d, len, r) -
                        embed_pair(a * b, d, len, r)) < 1e-12);
        // Trace picks up a factor 2 per spectator ancilla.
        REQUIRE(std::abs(ea.trace() - a.trace() * std::pow(2.0, len - 1)) <
                1e-10);
    }

    // Ancilla-only observables on different slices commute.
    Operator x = Operator::Zero(2, 2);
    x(0, 1) = x(1, 0) = 1.0;
    Operator x1 = embed_ancilla(x, d, len, 1);
    Operator x3 = embed_ancilla(x, d, len, 3);
    REQUIRE(max_abs(x1 * x3 - x3 * x1) == 0.0);

    REQUIRE_THROWS_AS(embed_pair(a, d, len, 0), domain_error);
    REQUIRE_THROWS_AS(embed_pair(a, d, len, len + 1), domain_error);
    REQUIRE_THROWS_AS(embed_pair(random_matrix(d, stream), d, len, 1),
                      domain_error);
    REQUIRE_THROWS_AS(embed_pair(random_matrix(128, stream), 64, 8, 1),
                      domain_error);
}

TEST_CASE("output observables commute with later system observables") {
    Operator sz = Operator::Zero(2, 2);
    sz(0, 0) = 1.0;
    sz(1, 1) = -1.0;
    Operator sx = Operator::Zero(2, 2);
    sx(0, 1) = sx(1, 0) = 1.0;

    NondemolitionReport rep =
        check_nondemolition(sz, 0.5 * sx, sz, 2.0, 0.1, 3);
    INFO("causal " << rep.max_causal << " acausal " << rep.min_acausal);
    REQUIRE(rep.max_causal <= 1e-12);
    REQUIRE(rep.min_acausal > 0.01);
}

TEST_CASE("exact conditioning matches the normalized filter to order 3/2") {
    Eigen::VectorXcd psi = Eigen::VectorXcd::Zero(4);
    psi[0] = 1.0 / std::sqrt(2.0);
    psi[1] = 1.0 / std::sqrt(2.0);
    Operator rho0 = psi * psi.adjoint();

    const std::vector<double> dts = {0.02, 0.01, 0.005};
    std::vector<double> gaps;
    for (double dt : dts) {
        gaps.push_back(
            std::max(one_step_gap(dt, +1, rho0), one_step_gap(dt, -1, rho0)));
    }
    INFO("gaps " << gaps[0] << " " << gaps[1] << " " << gaps[2]);
    double order1 = std::log2(gaps[0] / gaps[1]);
    double order2 = std::log2(gaps[1] / gaps[2]);
    REQUIRE(order1 > 1.4);
    REQUIRE(order2 > 1.4);
    REQUIRE(gaps[2] < 1e-3);
}

TEST_CASE("sampled records are reproducible and conserve state structure") {
    Oscillator osc = build_oscillator(3, 2.0, 1.0);
    Operator l = 0.5 * osc.q;
    Eigen::VectorXcd psi = Eigen::VectorXcd::Zero(3);
    psi[0] = std::sqrt(0.7);
    psi[1] = std::sqrt(0.3);
    Operator rho0 = psi * psi.adjoint();

    TrajectoryStream s1(41, 7), s2(41, 7), s3(41, 8);
    DilationTrajectory a = run_exact_conditioning(osc.h, l, rho0, 2.0, 0.05,
                                                  20, s1);
    DilationTrajectory b = run_exact_conditioning(osc.h, l, rho0, 2.0, 0.05,
                                                  20, s2);
    DilationTrajectory c = run_exact_conditioning(osc.h, l, rho0, 2.0, 0.05,
                                                  20, s3);
    REQUIRE(a.outcomes.size() == 20);
    REQUIRE(a.states.size() == 21);
    bool identical = true, same_as_c = true;
    for (int k = 0; k < 20; ++k) {
        identical = identical && a.outcomes[k] == b.outcomes[k];
        same_as_c = same_as_c && a.outcomes[k] == c.outcomes[k];
        REQUIRE(std::abs(a.outcomes[k]) == 1.0);
        REQUIRE(a.states[k + 1].trace().real() == Approx(1.0).margin(1e-10));
        Operator s = a.states[k + 1];
        hermitize(s);
        Eigen::SelfAdjointEigenSolver<Operator> es(s, Eigen::EigenvaluesOnly);
        REQUIRE(es.eigenvalues().minCoeff() > -1e-12);
    }
    REQUIRE(identical);
    REQUIRE_FALSE(same_as_c);
}
