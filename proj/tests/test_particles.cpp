#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>
#include <vector>

#include "dflab/particles.hpp"

using namespace dflab;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kLambda1 = 4.0 * std::numbers::pi * std::numbers::pi;  // mode k = 1

ParticleEnsemble two_atom_fiber() {
    AtomicMeasure mu = make_measure({0.6, 0.4}, {TorusPoint({0.15}), TorusPoint({0.7})});
    return ensemble_from_measure(mu);
}

CylinderFunction mode_observable(double eps, int k) {
    return CylinderFunction(OuterFunction::linear({1.0}),
                            {InnerFunction::smooth_mode(eps, FourierMode({k}))});
}

// E[ sum_i s_i chi(s_i) cos(2 pi k x_i) ] after free evolution for time t
double heat_oracle(const AtomicMeasure& mu, double eps, int k, double t) {
    double acc = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        double s = mu.weights.w[i];
        acc += s * mass_cutoff(eps, s) * std::cos(kTwoPi * k * mu.atoms[i][0]) *
               std::exp(-kLambda1 * k * k * t / s);
    }
    return acc;
}

bool agrees(const MonteCarloStat& a, const MonteCarloStat& b) {
    return std::fabs(a.mean - b.mean) <= 3.0 * std::hypot(a.se, b.se);
}

}  // namespace

TEST_CASE("free evolution: identity at zero span, error on backward time") {
    ParticleEnsemble e = two_atom_fiber();
    RNGStream rng(400, 0);
    ParticleEnsemble same = simulate_free(e, 0.0, rng);
    CHECK(same.positions == e.positions);
    CHECK(same.time == e.time);
    CHECK_THROWS_AS(simulate_free(e, -0.1, rng), std::invalid_argument);
}

TEST_CASE("free evolution: coordinate variance 2/s dt, independent particles") {
    ParticleEnsemble e = two_atom_fiber();
    double span = 0.13;
    const std::size_t n = 10000;
    std::vector<double> d0(n), d1(n), prod(n);
    for (std::size_t p = 0; p < n; ++p) {
        RNGStream rng(401, p);
        ParticleEnsemble out = simulate_free(e, span, rng);
        d0[p] = out.positions[0][0] - e.positions[0][0];
        d1[p] = out.positions[1][0] - e.positions[1][0];
        prod[p] = d0[p] * d1[p];
    }
    for (int i : {0, 1}) {
        auto v = variance_stat(i == 0 ? d0 : d1);
        double expect = 2.0 / e.weights.w[i] * span;
        CHECK(std::fabs(v.var - expect) <= 3.0 * v.se);
    }
    auto cross = mc_stat(prod);  // increments are centered, so E[d0 d1] = cov
    CHECK(std::fabs(cross.mean) <= 3.0 * cross.se);
}

TEST_CASE("weights are frozen along drifted trajectories") {
    ParticleEnsemble e = two_atom_fiber();
    SimulationParams params;
    params.horizon = 0.05;
    params.dt = 5e-3;
    params.truncation_eps = 0.2;
    DriftField b = DriftField::mode_force(1.0, FourierMode({1}));
    RNGStream rng(402, 0);
    std::size_t seen = 0;
    simulate_drifted(e, b, params, rng, [&](const ParticleEnsemble& s) {
        CHECK(s.weights.w == e.weights.w);
        CHECK(s.weights.tail == e.weights.tail);
        ++seen;
    });
    CHECK(seen == params.n_steps() + 1);
}

TEST_CASE("drifted simulation rejects incompatible configurations") {
    ParticleEnsemble e = two_atom_fiber();
    SimulationParams params;
    params.horizon = 0.05;
    params.dt = 5e-3;
    params.truncation_eps = 0.2;
    RNGStream rng(403, 0);
    CHECK_THROWS_AS(simulate_drifted(e, DriftField::mean_attraction(1.0, 0.1), params, rng),
                    std::invalid_argument);
    SimulationParams off = params;
    off.t0 = 0.5;
    off.horizon = 0.55;
    CHECK_THROWS_AS(simulate_drifted(e, DriftField::zero(1), off, rng), std::invalid_argument);
    SimulationParams ragged = params;
    ragged.dt = 0.003;  // does not divide 0.05
    CHECK_THROWS_AS(simulate_drifted(e, DriftField::zero(1), ragged, rng), std::invalid_argument);
    SimulationParams empty = params;
    empty.n_paths = 0;
    CHECK_THROWS_AS(empty.validate(), std::invalid_argument);
}

TEST_CASE("zero drift reproduces the free marginals") {
    ParticleEnsemble e = two_atom_fiber();
    SimulationParams params;
    params.horizon = 0.1;
    params.dt = 2e-3;
    params.truncation_eps = 0.2;
    const std::size_t n = 8000;
    std::vector<double> stepped(n), oneshot(n);
    for (std::size_t p = 0; p < n; ++p) {
        RNGStream r1(404, p), r2(405, p);
        stepped[p] = simulate_drifted(e, DriftField::zero(1), params, r1).positions[0][0];
        oneshot[p] = simulate_free(e, 0.1, r2).positions[0][0];
    }
    auto vs = variance_stat(stepped), vo = variance_stat(oneshot);
    CHECK(std::fabs(vs.var - vo.var) <= 3.0 * std::hypot(vs.se, vo.se));
    auto ms = mc_stat(stepped), mo = mc_stat(oneshot);
    CHECK(agrees(ms, mo));
}

TEST_CASE("constant drift moves the retained particle by c (T - t0) on average") {
    AtomicMeasure mu = make_measure({0.9, 0.1}, {TorusPoint({0.3}), TorusPoint({0.8})});
    ParticleEnsemble e = ensemble_from_measure(mu);
    SimulationParams params;
    params.horizon = 0.2;
    params.dt = 2e-3;
    params.truncation_eps = 0.5;  // only the first particle is drifted
    double c = 1.7;
    const std::size_t n = 6000;
    std::vector<double> disp(n), tail_disp(n);
    for (std::size_t p = 0; p < n; ++p) {
        RNGStream rng(406, p);
        ParticleEnsemble out = simulate_drifted(e, DriftField::constant({c}), params, rng);
        disp[p] = out.positions[0][0] - e.positions[0][0];
        tail_disp[p] = out.positions[1][0] - e.positions[1][0];
    }
    auto m = mc_stat(disp);
    CHECK(std::fabs(m.mean - c * 0.2) <= 3.0 * m.se);
    CHECK(mc_stat(tail_disp).mean == 0.0);  // below truncation, frozen by default
}

TEST_CASE("halving dt leaves terminal estimates within the statistical CI") {
    AtomicMeasure mu =
        make_measure({0.5, 0.3, 0.2},
                     {TorusPoint({0.1}), TorusPoint({0.55}), TorusPoint({0.8})});
    ParticleEnsemble e = ensemble_from_measure(mu);
    CylinderFunction g = mode_observable(0.15, 1);
    DriftField b = DriftField::mean_attraction(0.8, 0.15);
    SimulationParams params;
    params.horizon = 0.2;
    params.dt = 4e-3;
    params.truncation_eps = 0.15;
    params.n_paths = 4000;
    params.seed = 407;
    auto coarse = estimate_terminal(g, e, b, params);
    params.dt = 2e-3;
    params.seed = 408;
    auto fine = estimate_terminal(g, e, b, params);
    CHECK(agrees(coarse, fine));
}

TEST_CASE("reweighting is exactly one for zero drift") {
    ParticleEnsemble e = two_atom_fiber();
    SimulationParams params;
    params.horizon = 0.1;
    params.dt = 2e-3;
    params.truncation_eps = 0.2;
    RNGStream rng(409, 0);
    FreeTrajectory traj = simulate_free_path(e, params, rng);
    CHECK(girsanov_inverse_weight(traj, DriftField::zero(1)) == 1.0);

    FreeTrajectory broken = traj;
    broken.increments.pop_back();
    CHECK_THROWS_AS(girsanov_inverse_weight(broken, DriftField::mode_force(1.0, FourierMode({1}))),
                    std::invalid_argument);
    FreeTrajectory untruncated = traj;
    untruncated.truncation_eps = 0.0;
    CHECK_THROWS_AS(
        girsanov_inverse_weight(untruncated, DriftField::mode_force(1.0, FourierMode({1}))),
        std::invalid_argument);
}

TEST_CASE("reweighting is a unit-mean martingale with bounded second moment") {
    ParticleEnsemble e = two_atom_fiber();
    SimulationParams params;
    params.horizon = 0.1;
    params.dt = 1e-3;
    params.truncation_eps = 0.2;
    DriftField b = DriftField::mode_force(1.0, FourierMode({1}), 0.4);  // M = 1
    const std::size_t n = 10000;
    std::vector<double> w(n), wsq(n);
    for (std::size_t p = 0; p < n; ++p) {
        RNGStream rng(410, p);
        double v = girsanov_inverse_weight(simulate_free_path(e, params, rng), b);
        CHECK(v > 0.0);
        w[p] = v;
        wsq[p] = v * v;
    }
    auto m = mc_stat(w);
    CHECK(std::fabs(m.mean - 1.0) <= 3.0 * m.se);
    double second = mc_stat(wsq).mean;
    CHECK(second <= 2.0 * std::exp(0.1 * b.bound * b.bound));
}

TEST_CASE("terminal estimate of a constant functional is exact") {
    ParticleEnsemble e = two_atom_fiber();
    SimulationParams params;
    params.horizon = 0.05;
    params.dt = 5e-3;
    params.truncation_eps = 0.2;
    params.n_paths = 200;
    params.seed = 411;
    CylinderFunction g(OuterFunction::linear({0.0}, 2.5),
                       {InnerFunction::smooth_mode(0.2, FourierMode({1}))});
    auto est = estimate_terminal(g, e, DriftField::zero(1), params);
    CHECK(est.mean == 2.5);
    CHECK(est.se == 0.0);
}

TEST_CASE("free terminal means match the heat kernel mode decay") {
    RNGStream init_rng(412, 0);
    AtomicMeasure mu0 = sample_dirichlet_ferguson(init_rng, 1);
    ParticleEnsemble e = ensemble_from_measure(mu0);
    SimulationParams params;
    params.truncation_eps = 0.1;
    params.n_paths = 10000;
    struct Case {
        int k;
        double horizon;
    };
    for (auto [k, horizon] : {Case{1, 0.02}, Case{2, 0.005}}) {
        params.horizon = horizon;
        params.dt = horizon / 10.0;
        params.seed = 413 + std::uint64_t(k);
        CylinderFunction g = mode_observable(0.1, k);
        auto est = estimate_terminal(g, e, DriftField::zero(1), params);
        double expect = heat_oracle(mu0, 0.1, k, horizon);
        CHECK(std::fabs(est.mean - expect) <= 3.0 * est.se);
        CHECK(est.se > 0.0);
    }
}

TEST_CASE("importance sampling with zero drift is bitwise the direct estimator") {
    ParticleEnsemble e = two_atom_fiber();
    SimulationParams params;
    params.horizon = 0.1;
    params.dt = 2e-3;
    params.truncation_eps = 0.2;
    params.n_paths = 500;
    params.seed = 415;
    params.evolve_tail_free = true;
    CylinderFunction g = mode_observable(0.2, 1);
    auto direct = estimate_terminal(g, e, DriftField::zero(1), params);
    auto shifted = importance_sampled_terminal(g, e, DriftField::zero(1), params);
    CHECK(direct.mean == shifted.mean);
    CHECK(direct.se == shifted.se);
}

TEST_CASE("direct and importance-sampled estimators agree under a mode drift") {
    ParticleEnsemble e = two_atom_fiber();
    DriftField b = DriftField::mode_force(1.0, FourierMode({1}), 0.3);
    CylinderFunction g = mode_observable(0.2, 1);
    SimulationParams params;
    params.horizon = 0.1;
    params.dt = 1e-3;
    params.truncation_eps = 0.2;
    params.n_paths = 10000;
    params.seed = 416;
    auto direct = estimate_terminal(g, e, b, params);
    params.seed = 417;
    auto is = importance_sampled_terminal(g, e, b, params);
    CHECK(agrees(direct, is));
    MESSAGE("direct se ", direct.se, " importance se ", is.se);
}

TEST_CASE("constant drift: both estimators match the shifted heat oracle") {
    ParticleEnsemble e = two_atom_fiber();
    double c = 5.0, horizon = 0.02;
    DriftField b = DriftField::constant({c});
    CylinderFunction g = mode_observable(0.2, 1);
    AtomicMeasure mu0 = e.measure();
    double expect = 0.0;
    for (std::size_t i = 0; i < mu0.size(); ++i) {
        double s = mu0.weights.w[i];
        expect += s * std::cos(kTwoPi * (mu0.atoms[i][0] + c * horizon)) *
                  std::exp(-kLambda1 * horizon / s);
    }
    SimulationParams params;
    params.horizon = horizon;
    params.dt = 1e-3;
    params.truncation_eps = 0.2;
    params.n_paths = 10000;
    params.seed = 418;
    auto direct = estimate_terminal(g, e, b, params);
    params.seed = 419;
    auto is = importance_sampled_terminal(g, e, b, params);
    CHECK(std::fabs(direct.mean - expect) <= 3.0 * direct.se);
    CHECK(std::fabs(is.mean - expect) <= 3.0 * is.se);
}

TEST_CASE("weight-only functionals are pathwise invariant") {
    CylinderFunction u(OuterFunction::linear({1.0}), {InnerFunction::mass_only(0.15)});
    RNGStream rng(420, 0);
    AtomicMeasure mu0 = sample_dirichlet_ferguson(rng, 1);
    ParticleEnsemble e = ensemble_from_measure(mu0);
    double v0 = u.evaluate(e.measure());
    ParticleEnsemble later = simulate_free(e, 0.7, rng);
    CHECK(u.evaluate(later.measure()) == v0);
}

TEST_CASE("free dynamics preserves the sampling distribution") {
    std::vector<CylinderFunction> fns;
    fns.push_back(mode_observable(0.1, 1));
    fns.push_back(CylinderFunction(OuterFunction::quadratic({0.0}, {{2.0}}),
                                   {InnerFunction::smooth_mode(0.1, FourierMode({1}))}));
    auto reports = invariance_test(fns, 0.25, 20000, 1, RNGStream(421, 0));
    REQUIRE(reports.size() == 2);
    for (const auto& r : reports) {
        CHECK(r.mean_ok);
        CHECK(r.var_ok);
    }
    CHECK_THROWS_AS(invariance_test(fns, 0.0, 1000, 1, RNGStream(0, 0)), std::invalid_argument);
    CHECK_THROWS_AS(invariance_test(fns, 0.1, 50, 1, RNGStream(0, 0)), std::invalid_argument);
}

TEST_CASE("martingale decomposition: constant functionals have zero residual") {
    CylinderFunction u(OuterFunction::linear({0.0}, 3.0),
                       {InnerFunction::smooth_mode(0.2, FourierMode({1}))});
    ParticleEnsemble e = two_atom_fiber();
    auto rep = ito_residual(u, e, 0.05, 300, RNGStream(422, 0), 5e-3);
    CHECK(rep.residual.mean == 0.0);
    CHECK(rep.residual.se == 0.0);
    CHECK(rep.u0 == 3.0);
}

TEST_CASE("martingale decomposition balances for a mode functional") {
    AtomicMeasure mu0 = make_measure(
        {0.55, 0.25, 0.12, 0.08},
        {TorusPoint({0.13}), TorusPoint({0.47}), TorusPoint({0.71}), TorusPoint({0.89})});
    ParticleEnsemble e = ensemble_from_measure(mu0);
    CylinderFunction u = mode_observable(0.1, 1);
    double horizon = 0.02, dt = 2.5e-4;
    const std::size_t n = 5000;
    auto rep = ito_residual(u, e, horizon, n, RNGStream(423, 0), dt);
    CHECK(std::fabs(rep.residual.mean) <= 3.0 * rep.residual.se);

    CHECK(std::fabs(rep.terminal.mean - heat_oracle(mu0, 0.1, 1, horizon)) <=
          3.0 * rep.terminal.se);

    // discrete left-endpoint oracle for the generator integral
    double expect_int = 0.0;
    std::size_t steps = std::size_t(std::llround(horizon / dt));
    for (std::size_t k = 0; k < steps; ++k) {
        double t = double(k) * dt;
        for (std::size_t i = 0; i < mu0.size(); ++i) {
            double s = mu0.weights.w[i];
            expect_int += dt * (-kLambda1) * mass_cutoff(0.1, s) *
                          std::cos(kTwoPi * mu0.atoms[i][0]) * std::exp(-kLambda1 * t / s);
        }
    }
    CHECK(std::fabs(rep.time_integral.mean - expect_int) <= 3.0 * rep.time_integral.se);

    // quadrature refinement
    auto fine = ito_residual(u, e, horizon, n, RNGStream(424, 0), dt / 2.0);
    CHECK(std::fabs(fine.residual.mean) <=
          std::fabs(rep.residual.mean) + 3.0 * std::hypot(rep.residual.se, fine.residual.se));

    CylinderFunction bad(OuterFunction::linear({1.0}), {InnerFunction::linear_mass()});
    CHECK_THROWS_AS(ito_residual(bad, e, 0.05, 200, RNGStream(0, 0), 5e-3),
                    std::invalid_argument);
}

TEST_CASE("worker count never changes estimator output") {
    ParticleEnsemble e = two_atom_fiber();
    CylinderFunction g = mode_observable(0.2, 1);
    DriftField b = DriftField::mode_force(0.8, FourierMode({1}));
    SimulationParams params;
    params.horizon = 0.05;
    params.dt = 2.5e-3;
    params.truncation_eps = 0.2;
    params.n_paths = 400;
    params.seed = 425;
    auto one = estimate_terminal(g, e, b, params);
    params.workers = 4;
    auto four = estimate_terminal(g, e, b, params);
    CHECK(one.mean == four.mean);
    CHECK(one.se == four.se);
}
