#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <vector>

#include "dflab/pde.hpp"

using namespace dflab;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

WeightSequence plain_weights(std::vector<double> w, double tail = 0.0) {
    WeightSequence s;
    s.w = std::move(w);
    s.tail = tail;
    return s;
}

FiberProblem heat_problem(std::vector<double> w, std::size_t n_active, std::size_t n_g,
                          double horizon,
                          std::function<double(const std::vector<TorusPoint>&)> terminal) {
    FiberProblem p;
    p.weights = plain_weights(std::move(w));
    p.grid = TensorGrid{1, n_active, n_g};
    p.horizon = horizon;
    p.terminal = std::move(terminal);
    return p;
}

double max_abs_error(const GridFunction& f,
                     const std::function<double(const std::vector<TorusPoint>&)>& exact) {
    double worst = 0.0;
    for (std::size_t node = 0; node < f.grid.n_nodes(); ++node) {
        double e = std::fabs(f.values[node] - exact(f.grid.node_points(node)));
        worst = std::max(worst, e);
    }
    return worst;
}

HamiltonianSpec zero_hamiltonian() {
    HamiltonianSpec h;
    h.eval = [](const TorusPoint&, const std::vector<double>&) { return 0.0; };
    h.argmax = [](const TorusPoint& x, const std::vector<double>&) {
        return std::vector<double>(x.dim(), 0.0);
    };
    h.lipschitz_p = 0.0;
    h.name = "zero";
    return h;
}

}  // namespace

TEST_CASE("grid budgets are enforced") {
    CHECK_THROWS_AS(TensorGrid({1, 1, 4}).validate(), std::invalid_argument);
    CHECK_THROWS_AS(TensorGrid({1, 5, 16}).validate(), std::invalid_argument);
    CHECK_THROWS_AS(TensorGrid({2, 2, 64}).validate(), std::invalid_argument);  // 64^4 nodes
    CHECK_NOTHROW(TensorGrid({1, 2, 64}).validate());
    TensorGrid g{1, 2, 16};
    CHECK(g.n_nodes() == 256);
    CHECK(g.axis_stride(0) == 16);
    CHECK(g.axis_stride(1) == 1);
    auto pts = g.node_points(3 * 16 + 5);
    CHECK(pts[0][0] == doctest::Approx(3.0 / 16));
    CHECK(pts[1][0] == doctest::Approx(5.0 / 16));
}

TEST_CASE("multilinear interpolation: nodes exact, linear in between, periodic") {
    TensorGrid g{1, 2, 16};
    GridFunction f{g, std::vector<double>(g.n_nodes())};
    for (std::size_t node = 0; node < g.n_nodes(); ++node) {
        auto pts = g.node_points(node);
        f.values[node] = 2.0 * pts[0][0] + 3.0 * pts[1][0];
    }
    CHECK(multilinear(f, {3.0 / 16, 5.0 / 16}) == doctest::Approx(6.0 / 16 + 15.0 / 16));
    // exactly between two nodes along one axis
    CHECK(multilinear(f, {3.5 / 16, 5.0 / 16}) == doctest::Approx(7.0 / 16 + 15.0 / 16));
    // wrap: between the last node and node 0 the stored values interpolate
    // towards f(...,0), not towards 1
    double near_seam = multilinear(f, {15.5 / 16, 0.0});
    CHECK(near_seam == doctest::Approx(0.5 * (2.0 * 15.0 / 16 + 0.0)));
    CHECK_THROWS_AS(multilinear(f, {0.1}), std::invalid_argument);
}

TEST_CASE("fiber validation rejects malformed problems") {
    auto g1 = [](const std::vector<TorusPoint>& xs) { return xs[0][0]; };
    FiberProblem p = heat_problem({0.6, 0.4}, 1, 16, 0.1, g1);
    CHECK_NOTHROW(p.validate());

    FiberProblem inc = p;
    inc.weights = plain_weights({0.4, 0.6});
    CHECK_THROWS_AS(inc.validate(), std::invalid_argument);

    FiberProblem unbalanced = p;
    unbalanced.weights = plain_weights({0.6, 0.3});
    CHECK_THROWS_AS(unbalanced.validate(), std::invalid_argument);

    FiberProblem both = p;
    both.has_drift = true;
    both.drift = DriftField::zero(1);
    both.has_hamiltonian = true;
    both.hamiltonian = zero_hamiltonian();
    CHECK_THROWS_AS(both.validate(), std::invalid_argument);

    // drift that reads atoms finer than the grid carries
    FiberProblem offgrid = heat_problem({0.4, 0.35, 0.25}, 1, 16, 0.1, g1);
    offgrid.has_drift = true;
    offgrid.drift = DriftField::mean_attraction(0.5, 0.2);
    CHECK_THROWS_AS(offgrid.validate(), std::invalid_argument);
    offgrid.drift = DriftField::mean_attraction(0.5, 0.38);
    CHECK_NOTHROW(offgrid.validate());
}

TEST_CASE("heat mode: eigenfunction decay with O(h^2) + O(dt) convergence") {
    auto run = [](std::size_t n_g, double dt) {
        FiberProblem p =
            heat_problem({0.7, 0.3}, 1, n_g, 0.05,
                         [](const std::vector<TorusPoint>& xs) {
                             return std::cos(kTwoPi * xs[0][0]);
                         });
        SolveResult sol = solve_linear_backward(p, dt, 1000);
        double decay = std::exp(-kTwoPi * kTwoPi / 0.7 * 0.05);
        return max_abs_error(sol.initial(), [&](const std::vector<TorusPoint>& xs) {
            return decay * std::cos(kTwoPi * xs[0][0]);
        });
    };
    double coarse = run(16, 2.5e-3), fine = run(32, 6.25e-4);
    double ratio = coarse / fine;
    CHECK(ratio >= 3.0);
    CHECK(ratio <= 5.0);
}

TEST_CASE("heat mode: product eigenfunction exercises the axis splitting") {
    auto run = [](std::size_t n_g, double dt) {
        FiberProblem p = heat_problem({0.6, 0.4}, 2, n_g, 0.01,
                                      [](const std::vector<TorusPoint>& xs) {
                                          return std::cos(kTwoPi * xs[0][0]) *
                                                 std::cos(kTwoPi * xs[1][0]);
                                      });
        SolveResult sol = solve_linear_backward(p, dt, 1000);
        double decay =
            fourier_heat_oracle({FourierMode({1}), FourierMode({1})}, {0.6, 0.4}, 0.01);
        return max_abs_error(sol.initial(), [&](const std::vector<TorusPoint>& xs) {
            return decay * std::cos(kTwoPi * xs[0][0]) * std::cos(kTwoPi * xs[1][0]);
        });
    };
    double coarse = run(16, 5e-4), fine = run(32, 1.25e-4);
    double ratio = coarse / fine;
    CHECK(ratio >= 3.0);
    CHECK(ratio <= 5.0);
}

TEST_CASE("constants are fixed points of the linear solver, drift included") {
    FiberProblem p = heat_problem({0.6, 0.4}, 2, 16, 0.1,
                                  [](const std::vector<TorusPoint>&) { return 1.75; });
    p.has_drift = true;
    p.drift = DriftField::mode_force(0.8, FourierMode({1}));
    SolveResult sol = solve_linear_backward(p, 2e-3, 10);
    for (const auto& slice : sol.slices)
        for (double v : slice.values) CHECK(std::fabs(v - 1.75) <= 1e-12);
}

TEST_CASE("maximum principle holds for upwind drift plus implicit diffusion") {
    FiberProblem p = heat_problem({0.6, 0.4}, 2, 16, 0.2,
                                  [](const std::vector<TorusPoint>& xs) {
                                      return 0.5 * std::cos(kTwoPi * xs[0][0]) +
                                             0.3 * std::sin(kTwoPi * xs[1][0]);
                                  });
    p.has_drift = true;
    p.drift = DriftField::mean_attraction(0.5, 0.3);
    SolveResult sol = solve_linear_backward(p, 2e-3, 1);
    double lo = 1e300, hi = -1e300;
    for (double v : sol.slices.back().values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (const auto& slice : sol.slices)
        for (double v : slice.values) {
            CHECK(v >= lo - 1e-12);
            CHECK(v <= hi + 1e-12);
        }
}

TEST_CASE("CFL violations are rejected") {
    FiberProblem p = heat_problem({1.0}, 1, 16, 0.4,
                                  [](const std::vector<TorusPoint>& xs) { return xs[0][0]; });
    p.has_drift = true;
    p.drift = DriftField::constant({1.0});
    CHECK_THROWS_AS(solve_linear_backward(p, 0.1, 1), std::invalid_argument);  // h = 1/16
    CHECK_NOTHROW(solve_linear_backward(p, 0.05, 1000));
}

TEST_CASE("equal-weight fibers keep swap symmetry to machine precision") {
    FiberProblem p = heat_problem({0.5, 0.5}, 2, 16, 0.02,
                                  [](const std::vector<TorusPoint>& xs) {
                                      double a = std::cos(kTwoPi * xs[0][0]);
                                      double b = std::cos(kTwoPi * xs[1][0]);
                                      return a * b + 0.3 * (a + b);
                                  });
    SolveResult sol = solve_linear_backward(p, 1e-3, 1000);
    const GridFunction& f = sol.initial();
    std::size_t n = 16;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < i; ++j)
            CHECK(std::fabs(f.values[i * n + j] - f.values[j * n + i]) <= 5e-14);
}

TEST_CASE("time slices follow the stride and terminal is always kept") {
    FiberProblem p = heat_problem({1.0}, 1, 16, 0.1,
                                  [](const std::vector<TorusPoint>& xs) {
                                      return std::cos(kTwoPi * xs[0][0]);
                                  });
    SolveResult sol = solve_linear_backward(p, 0.01, 3);  // 10 steps
    REQUIRE(sol.times.size() == 5);
    CHECK(sol.times[0] == doctest::Approx(0.0));
    CHECK(sol.times[1] == doctest::Approx(0.03));
    CHECK(sol.times[2] == doctest::Approx(0.06));
    CHECK(sol.times[3] == doctest::Approx(0.09));
    CHECK(sol.times[4] == doctest::Approx(0.1));
    CHECK(&sol.at_time(0.06) == &sol.slices[2]);
    CHECK_THROWS_AS(sol.at_time(0.05), std::invalid_argument);
}

TEST_CASE("HJB with zero Hamiltonian is bitwise the heat solution") {
    auto terminal = [](const std::vector<TorusPoint>& xs) {
        return std::cos(kTwoPi * xs[0][0]) + 0.4 * std::sin(kTwoPi * xs[1][0]);
    };
    auto source = [](const std::vector<TorusPoint>& xs) {
        return 0.3 * std::cos(kTwoPi * xs[1][0]);
    };
    FiberProblem lin = heat_problem({0.6, 0.4}, 2, 16, 0.05, terminal);
    lin.source = source;
    FiberProblem hjb = lin;
    hjb.has_hamiltonian = true;
    hjb.hamiltonian = zero_hamiltonian();
    SolveResult a = solve_linear_backward(lin, 1e-3, 10);
    SolveResult b = solve_hjb(hjb, 1e-3, 10);
    REQUIRE(a.slices.size() == b.slices.size());
    for (std::size_t s = 0; s < a.slices.size(); ++s)
        CHECK(a.slices[s].values == b.slices[s].values);
}

TEST_CASE("p-independent Hamiltonian reduces bitwise to a linear source") {
    auto cost = [](const TorusPoint& x) { return 0.7 * std::cos(kTwoPi * x[0]) + 0.2; };
    auto terminal = [](const std::vector<TorusPoint>& xs) {
        return std::cos(kTwoPi * xs[0][0]) * std::cos(kTwoPi * xs[1][0]);
    };
    std::vector<double> w = {0.6, 0.4};

    FiberProblem hjb = heat_problem(w, 2, 16, 0.05, terminal);
    hjb.has_hamiltonian = true;
    hjb.hamiltonian.eval = [cost](const TorusPoint& x, const std::vector<double>&) {
        return -cost(x);
    };
    hjb.hamiltonian.lipschitz_p = 0.0;

    FiberProblem lin = heat_problem(w, 2, 16, 0.05, terminal);
    lin.source = [cost, w](const std::vector<TorusPoint>& xs) {
        double acc = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) acc += w[i] * cost(xs[i]);
        return acc;
    };

    SolveResult a = solve_hjb(hjb, 1e-3, 1000);
    SolveResult b = solve_linear_backward(lin, 1e-3, 1000);
    CHECK(a.initial().values == b.initial().values);
}

TEST_CASE("source integration matches the mode relaxation closed form") {
    // dh/dt + sum (1/s_i) Lap_i h + sum s_i cos(2 pi x_i) = 0, h_T = C:
    // h(t0, x) = C + sum_i s_i cos(2 pi x_i) (1 - e^{-lam_i tau}) / lam_i
    std::vector<double> w = {0.7, 0.3};
    double tau = 0.05, C = 0.4;
    FiberProblem p = heat_problem(w, 2, 32, tau,
                                  [C](const std::vector<TorusPoint>&) { return C; });
    p.source = [w](const std::vector<TorusPoint>& xs) {
        double acc = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i)
            acc += w[i] * std::cos(kTwoPi * xs[i][0]);
        return acc;
    };
    SolveResult sol = solve_linear_backward(p, 1e-4, 1000);
    double err = max_abs_error(sol.initial(), [&](const std::vector<TorusPoint>& xs) {
        double acc = C;
        for (std::size_t i = 0; i < 2; ++i) {
            double lam = kTwoPi * kTwoPi / w[i];
            acc += w[i] * std::cos(kTwoPi * xs[i][0]) * (1.0 - std::exp(-lam * tau)) / lam;
        }
        return acc;
    });
    CHECK(err <= 3e-4);
}

TEST_CASE("gradient extraction: analytic, constant, and Taylor bound") {
    TensorGrid g{1, 2, 32};
    GridFunction f{g, std::vector<double>(g.n_nodes())};
    for (std::size_t node = 0; node < g.n_nodes(); ++node)
        f.values[node] = std::cos(kTwoPi * g.node_points(node)[0][0]);
    auto grad0 = extract_gradient(f, 0);
    REQUIRE(grad0.size() == 1);
    double h2 = 1.0 / (32.0 * 32.0);
    for (std::size_t node = 0; node < g.n_nodes(); ++node) {
        double x = g.node_points(node)[0][0];
        CHECK(std::fabs(grad0[0].values[node] + kTwoPi * std::sin(kTwoPi * x)) <=
              kTwoPi * kTwoPi * kTwoPi * h2 / 6.0 + 1e-12);
    }
    // the function is constant along particle 1, so that block vanishes exactly
    auto grad1 = extract_gradient(f, 1);
    for (double v : grad1[0].values) CHECK(v == 0.0);
    CHECK_THROWS_AS(extract_gradient(f, 2), std::invalid_argument);

    for (int k : {2, 3}) {
        GridFunction fk{g, std::vector<double>(g.n_nodes())};
        for (std::size_t node = 0; node < g.n_nodes(); ++node)
            fk.values[node] = std::cos(kTwoPi * k * g.node_points(node)[0][0]);
        auto gk = extract_gradient(fk, 0);
        double bound = std::pow(kTwoPi * k, 3) * h2 / 6.0 + 1e-12;
        for (std::size_t node = 0; node < g.n_nodes(); ++node) {
            double x = g.node_points(node)[0][0];
            CHECK(std::fabs(gk[0].values[node] + kTwoPi * k * std::sin(kTwoPi * k * x)) <=
                  bound);
        }
    }
}

TEST_CASE("heat semigroup multiplier formula") {
    CHECK(fourier_heat_oracle({FourierMode({1})}, {0.5}, 0.0) == 1.0);
    CHECK(fourier_heat_oracle({FourierMode({1})}, {1.0}, 1.0) ==
          doctest::Approx(std::exp(-4.0 * std::numbers::pi * std::numbers::pi)));
    double joint = fourier_heat_oracle({FourierMode({1}), FourierMode({2})}, {0.6, 0.4}, 0.03);
    double split = fourier_heat_oracle({FourierMode({1})}, {0.6}, 0.03) *
                   fourier_heat_oracle({FourierMode({2})}, {0.4}, 0.03);
    CHECK(joint == doctest::Approx(split).epsilon(1e-14));
    CHECK_THROWS_AS(fourier_heat_oracle({FourierMode({1})}, {0.5, 0.5}, 0.1),
                    std::invalid_argument);
    CHECK_THROWS_AS(fourier_heat_oracle({FourierMode({1})}, {0.5}, -0.1), std::invalid_argument);
}

TEST_CASE("PDE value at a fiber point matches the mode closed form") {
    WeightSequence w = plain_weights({0.62, 0.38});
    CylinderFunction g(OuterFunction::linear({1.0}),
                       {InnerFunction::smooth_mode(0.15, FourierMode({1}))});
    FiberProblem p;
    p.weights = w;
    p.grid = TensorGrid{1, 2, 32};
    p.horizon = 0.03;
    p.terminal = [&](const std::vector<TorusPoint>& xs) { return g.evaluate(em_N(w, xs)); };
    SolveResult sol = solve_linear_backward(p, 1e-4, 1000);

    // both weights sit above twice the cutoff, so the ramp factor is one
    std::vector<double> x0 = {0.125, 0.625};
    double expect = 0.0;
    for (std::size_t i = 0; i < 2; ++i)
        expect += w.w[i] * std::cos(kTwoPi * x0[i]) *
                  std::exp(-kTwoPi * kTwoPi / w.w[i] * 0.03);
    CHECK(std::fabs(multilinear(sol.initial(), x0) - expect) <= 2e-3);
}

TEST_CASE("PDE value matches the drifted Monte Carlo representation") {
    AtomicMeasure m0 = make_measure({0.62, 0.38}, {TorusPoint({0.25}), TorusPoint({0.625})});
    CylinderFunction g(OuterFunction::linear({1.0}),
                       {InnerFunction::smooth_mode(0.25, FourierMode({1}))});
    DriftField b = DriftField::mean_attraction(0.5, 0.3);
    double horizon = 0.05;

    FiberProblem p;
    p.weights = m0.weights;
    p.grid = TensorGrid{1, 2, 32};
    p.horizon = horizon;
    const WeightSequence& w = m0.weights;
    p.terminal = [&](const std::vector<TorusPoint>& xs) { return g.evaluate(em_N(w, xs)); };
    p.has_drift = true;
    p.drift = b;
    SolveResult sol = solve_linear_backward(p, 2.5e-4, 1000);
    double v_pde = multilinear(sol.initial(), {0.25, 0.625});

    SimulationParams params;
    params.horizon = horizon;
    params.dt = 2.5e-4;
    params.truncation_eps = 0.25;
    params.n_paths = 20000;
    params.seed = 430;
    auto mc = estimate_terminal(g, ensemble_from_measure(m0), b, params);
    CHECK(std::fabs(mc.mean - v_pde) <= 3.0 * mc.se + 5e-3);
}

TEST_CASE("fiber aggregation: constants, skip accounting, trivial fibers") {
    auto const_eval = [](const AtomicMeasure&) { return FiberEvaluation{1.5, false}; };
    auto res = h_norm_aggregate(const_eval, 50, 1, RNGStream(431, 0));
    CHECK(res.estimate == doctest::Approx(2.25));
    CHECK(res.se == 0.0);
    CHECK(res.solved == 50);
    CHECK(res.skipped == 0);

    auto skip_big = [](const AtomicMeasure& mu) {
        std::size_t n = truncation_index(0.1, mu.weights);
        if (n > 2) return FiberEvaluation{0.0, true};
        return FiberEvaluation{1.0, false};
    };
    auto mixed = h_norm_aggregate(skip_big, 60, 1, RNGStream(432, 0));
    CHECK(mixed.solved + mixed.skipped == 60);
    CHECK(mixed.skipped > 0);

    auto always_skip = [](const AtomicMeasure&) { return FiberEvaluation{0.0, true}; };
    CHECK_THROWS_AS(h_norm_aggregate(always_skip, 10, 1, RNGStream(433, 0)),
                    std::runtime_error);
}

TEST_CASE("fiber value evaluator: budget skips and sub-threshold fibers") {
    CylinderFunction g(OuterFunction::linear({1.0}),
                       {InnerFunction::smooth_mode(0.25, FourierMode({1}))});
    auto gfn = [&](const AtomicMeasure& mu) { return g.evaluate(mu); };

    FiberValueConfig cfg;
    cfg.eps = 0.25;
    cfg.n_g = 32;
    cfg.dt = 2e-4;
    cfg.horizon = 0.02;

    AtomicMeasure small =
        make_measure({0.62, 0.38}, {TorusPoint({0.125}), TorusPoint({0.625})});
    auto ev = evaluate_fiber_value(gfn, cfg, small);
    CHECK(!ev.skipped);
    double expect = 0.0;
    for (std::size_t i = 0; i < 2; ++i)
        expect += small.weights.w[i] * mass_cutoff(0.25, small.weights.w[i]) *
                  std::cos(kTwoPi * small.atoms[i][0]) *
                  std::exp(-kTwoPi * kTwoPi / small.weights.w[i] * 0.02);
    CHECK(std::fabs(ev.value - expect) <= 5e-3);

    // every atom below the cut: the value is just g read through its class
    AtomicMeasure tiny = make_measure({0.2, 0.2, 0.2, 0.2, 0.2},
                                      {TorusPoint({0.05}), TorusPoint({0.25}),
                                       TorusPoint({0.45}), TorusPoint({0.65}),
                                       TorusPoint({0.85})});
    FiberValueConfig high = cfg;
    high.eps = 0.25;
    auto ev0 = evaluate_fiber_value(gfn, high, tiny);
    CHECK(!ev0.skipped);
    CHECK(ev0.value == g.evaluate(tiny));

    FiberValueConfig strict = cfg;
    strict.max_total_dim = 1;
    auto evskip = evaluate_fiber_value(gfn, strict, small);
    CHECK(evskip.skipped);
}

TEST_CASE("snapshot round trip preserves header and values") {
    TensorGrid g{1, 2, 16};
    GridFunction f{g, std::vector<double>(g.n_nodes())};
    for (std::size_t node = 0; node < g.n_nodes(); ++node)
        f.values[node] = std::sin(0.1 * double(node));
    std::string bin = "snapshot_test.bin", js = "snapshot_test.json";
    save_snapshot(f, 0.375, bin, js);
    double t = 0.0;
    GridFunction back = load_snapshot(bin, &t);
    CHECK(t == 0.375);
    CHECK(back.grid.d == 1);
    CHECK(back.grid.n_particles == 2);
    CHECK(back.grid.n_g == 16);
    CHECK(back.values == f.values);
    std::remove(bin.c_str());
    std::remove(js.c_str());
}
