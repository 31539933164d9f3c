#include "dflab/acceptance.hpp"

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "dflab/control.hpp"
#include "dflab/cylinder.hpp"
#include "dflab/experiments.hpp"
#include "dflab/measures.hpp"
#include "dflab/particles.hpp"
#include "dflab/pde.hpp"
#include "dflab/rng.hpp"
#include "dflab/stats.hpp"
#include "dflab/torus.hpp"

namespace dflab {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::string sfmt(const char* fmt, ...) {
    char buf[512];
    va_list args;
    va_start(args, fmt);
    std::vsnprintf(buf, sizeof buf, fmt, args);
    va_end(args);
    return buf;
}

struct Criterion {
    bool pass = true;
    std::string detail;

    void check(bool ok, const std::string& piece) {
        pass = pass && ok;
        if (!detail.empty()) detail += "; ";
        detail += piece;
        if (!ok) detail += " FAIL";
    }
};

AtomicMeasure pinned_measure(std::vector<double> w, std::vector<double> x) {
    AtomicMeasure mu;
    mu.weights.w = std::move(w);
    for (double c : x) mu.atoms.push_back(TorusPoint({c}));
    mu.validate();
    return mu;
}

// ---------------------------------------------------------------------------
// 1. mean truncated mass below eps equals eps

Criterion crit_tail_mass() {
    const std::size_t n = 100000;
    const std::vector<double> levels{0.05, 0.1, 0.2};
    std::vector<std::vector<double>> vals(levels.size());
    for (auto& v : vals) v.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        RNGStream rng(9001, i);
        WeightSequence s = sample_weights(rng);
        for (std::size_t j = 0; j < levels.size(); ++j) vals[j].push_back(s.mass_below(levels[j]));
    }
    Criterion c;
    for (std::size_t j = 0; j < levels.size(); ++j) {
        MonteCarloStat st = mc_stat(vals[j]);
        double tol = 3.0 * st.se;
        c.check(std::fabs(st.mean - levels[j]) <= tol,
                sfmt("eps=%g: |%.5f-%g|<=%.2g", levels[j], st.mean, levels[j], tol));
    }
    return c;
}

// ---------------------------------------------------------------------------
// 2. restriction identity battery via the mecke experiment kind

Criterion crit_mecke() {
    Json m;
    m["kind"] = "mecke";
    m["n"] = 100000;
    m["d"] = 1;
    m["master_seed"] = 9002;
    RunOutcome out = run_manifest(m);
    Criterion c;
    if (out.exit_code == 1) {
        c.check(false, "config: " + out.error);
        return c;
    }
    for (const Json& row : out.results.at("report").at("rows")) {
        std::string piece =
            sfmt("%s: |res|=%.2g tol=%.2g", row.at("name").get<std::string>().c_str(),
                 std::fabs(row.at("residual").get<double>()), row.at("tol").get<double>());
        if (row.contains("exact"))
            piece += sfmt(" (exact %g: lhs=%.4f)", row.at("exact").get<double>(),
                          row.at("lhs").at("mean").get<double>());
        c.check(row.at("pass").get<bool>(), piece);
    }
    return c;
}

// ---------------------------------------------------------------------------
// 3. law invariance under the free dynamics at two horizons

Criterion crit_invariance() {
    Criterion c;
    const double times[2] = {0.1, 0.5};
    const std::uint64_t seeds[2] = {9003, 9103};
    for (int k = 0; k < 2; ++k) {
        Json m;
        m["kind"] = "invariance";
        m["t"] = times[k];
        m["n"] = 20000;
        m["master_seed"] = seeds[k];
        RunOutcome out = run_manifest(m);
        if (out.exit_code == 1) {
            c.check(false, "config: " + out.error);
            return c;
        }
        for (const Json& row : out.results.at("report").at("rows")) {
            double db = std::fabs(row.at("after").at("mean").get<double>() -
                                  row.at("before").at("mean").get<double>());
            double dv = std::fabs(row.at("var_after").at("var").get<double>() -
                                  row.at("var_before").at("var").get<double>());
            c.check(row.at("mean_ok").get<bool>() && row.at("var_ok").get<bool>(),
                    sfmt("t=%g %s: dmean=%.2g dvar=%.2g", times[k],
                         row.at("name").get<std::string>().c_str(), db, dv));
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// 4. free semigroup against the closed Fourier form on two pinned fibers

Criterion crit_heat_oracle() {
    struct Setup {
        AtomicMeasure mu;
        double chi_eps;
        std::uint64_t seed;
    };
    std::vector<Setup> setups;
    setups.push_back({pinned_measure({0.62, 0.38}, {0.125, 0.625}), 0.15, 9004});
    setups.push_back({pinned_measure({0.5, 0.3, 0.2}, {0.1, 0.45, 0.8}), 0.1, 9104});
    // short enough that the per-atom decay rates still carry most of the
    // signal, so a wrong semigroup would show
    const double t_end = 0.02;
    const std::size_t n = 10000;

    Criterion c;
    for (const Setup& s : setups) {
        CylinderFunction u(OuterFunction::linear({1.0}),
                           {InnerFunction::smooth_mode(s.chi_eps, FourierMode({1}))});
        ParticleEnsemble init = ensemble_from_measure(s.mu);
        std::vector<double> vals(n);
        for (std::size_t p = 0; p < n; ++p) {
            RNGStream rng(s.seed, p);
            vals[p] = u.evaluate(simulate_free(init, t_end, rng).measure());
        }
        MonteCarloStat st = mc_stat(vals);
        double oracle = 0.0;
        for (std::size_t i = 0; i < s.mu.size(); ++i) {
            double w = s.mu.weights.w[i];
            oracle += w * mass_cutoff(s.chi_eps, w) * std::cos(kTwoPi * s.mu.atoms[i][0]) *
                      std::exp(-4.0 * std::numbers::pi * std::numbers::pi * t_end / w);
        }
        double tol = 3.0 * st.se;
        c.check(std::fabs(st.mean - oracle) <= tol,
                sfmt("fiber(N=%zu): |%.5f-%.5f|<=%.2g", s.mu.size(), st.mean, oracle, tol));
    }
    return c;
}

// ---------------------------------------------------------------------------
// 5. integration by parts, three pairs

Criterion crit_ibp() {
    Json m;
    m["kind"] = "ibp";
    m["n"] = 100000;
    m["master_seed"] = 9005;
    RunOutcome out = run_manifest(m);
    Criterion c;
    if (out.exit_code == 1) {
        c.check(false, "config: " + out.error);
        return c;
    }
    for (const Json& row : out.results.at("report").at("rows")) {
        c.check(row.at("pass").get<bool>(),
                sfmt("pair%zu: |res|=%.2g tol=%.2g", row.at("pair").get<std::size_t>(),
                     std::fabs(row.at("residual").at("mean").get<double>()),
                     row.at("tol").get<double>()));
    }
    return c;
}

// ---------------------------------------------------------------------------
// 6. martingale residual of the generator

Criterion crit_ito() {
    Json m;
    m["kind"] = "ito";
    m["dt"] = 1e-3;
    m["T"] = 0.1;
    m["n"] = 10000;
    m["master_seed"] = 9006;
    RunOutcome out = run_manifest(m);
    Criterion c;
    if (out.exit_code == 1) {
        c.check(false, "config: " + out.error);
        return c;
    }
    const Json& rep = out.results.at("report");
    c.check(rep.at("pass").get<bool>(),
            sfmt("|residual|=%.2g tol=%.2g",
                 std::fabs(rep.at("residual").at("mean").get<double>()),
                 rep.at("tol").get<double>()));
    return c;
}

// ---------------------------------------------------------------------------
// 7. drifted versus reweighted-free estimators, unit mean of the weight

Criterion crit_girsanov() {
    Json m;
    m["kind"] = "girsanov";
    m["eps"] = 0.3;
    m["dt"] = 1e-3;
    m["T"] = 0.1;
    m["n_paths"] = 10000;
    m["master_seed"] = 9007;
    RunOutcome out = run_manifest(m);
    Criterion c;
    if (out.exit_code == 1) {
        c.check(false, "config: " + out.error);
        return c;
    }
    const Json& rep = out.results.at("report");
    c.check(rep.at("estimators_agree").get<bool>(),
            sfmt("|direct-importance|=%.2g tol=%.2g", rep.at("diff").get<double>(),
                 rep.at("diff_tol").get<double>()));
    c.check(rep.at("martingale_ok").get<bool>(),
            sfmt("|E[1/z]-1|=%.2g tol=%.2g",
                 std::fabs(rep.at("martingale").at("mean").get<double>() - 1.0),
                 rep.at("martingale_tol").get<double>()));
    return c;
}

// ---------------------------------------------------------------------------
// 8. fiber PDE against drifted Monte Carlo, heat-oracle-calibrated budget

double heat_fiber_error(const WeightSequence& w, const std::vector<double>& atoms,
                        const CylinderFunction& g, double horizon, std::size_t n_g, double dt) {
    FiberProblem fp;
    fp.weights = w;
    fp.grid = TensorGrid{1, w.size(), n_g};
    fp.t0 = 0.0;
    fp.horizon = horizon;
    WeightSequence full = w;
    fp.terminal = [g, full](const std::vector<TorusPoint>& xs) {
        return g.evaluate(em_N(full, xs));
    };
    SolveResult sol = solve_linear_backward(fp, dt);
    double v = multilinear(sol.initial(), atoms);
    double exact = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        double wi = w.w[i];
        exact += wi * mass_cutoff(g.support_threshold(), wi) * std::cos(kTwoPi * atoms[i]) *
                 std::exp(-4.0 * std::numbers::pi * std::numbers::pi * horizon / wi);
    }
    return std::fabs(v - exact);
}

Criterion crit_kolmogorov() {
    const double T = 0.02;
    WeightSequence w;
    w.w = {0.62, 0.38};
    std::vector<double> atoms{0.125, 0.625};
    CylinderFunction g(OuterFunction::linear({1.0}),
                       {InnerFunction::smooth_mode(0.3, FourierMode({1}))});

    // split the measured heat-oracle error into its h^2 and dt parts, times a
    // safety factor of 3
    double e32 = heat_fiber_error(w, atoms, g, T, 32, 1e-4);
    double e64 = heat_fiber_error(w, atoms, g, T, 64, 1e-4);
    double e64c = heat_fiber_error(w, atoms, g, T, 64, 2e-4);
    double h32 = 1.0 / 32.0, h64 = 1.0 / 64.0;
    double c_grid = 3.0 * std::max(0.0, e32 - e64) / (h32 * h32 - h64 * h64);
    double c_dt = 3.0 * std::max(0.0, e64c - e64) / 1e-4;

    Json m;
    m["kind"] = "kolmogorov";
    m["d"] = 1;
    m["eps"] = 0.3;
    m["n_g"] = 64;
    m["dt_pde"] = 1e-4;
    m["dt_mc"] = 2.5e-4;
    m["T"] = T;
    m["n_paths"] = 10000;
    m["master_seed"] = 9008;
    m["init"]["weights"] = {0.62, 0.38};
    m["init"]["atoms"] = {{0.125}, {0.625}};
    m["drift"]["name"] = "mean_attraction";
    m["drift"]["amp"] = 0.6;
    m["drift"]["compat_eps"] = 0.3;
    m["budget"]["c_grid"] = c_grid;
    m["budget"]["c_dt"] = c_dt;
    RunOutcome out = run_manifest(m);

    Criterion c;
    if (out.exit_code == 1) {
        c.check(false, "config: " + out.error);
        return c;
    }
    const Json& rep = out.results.at("report");
    c.check(rep.at("pass").get<bool>(),
            sfmt("|pde %.5f - mc %.5f|=%.2g tol=%.2g (budget=%.2g, c_grid=%.3g, c_dt=%.3g)",
                 rep.at("v_pde").get<double>(), rep.at("mc").at("mean").get<double>(),
                 rep.at("diff").get<double>(), rep.at("tol").get<double>(),
                 rep.at("budget").at("value").get<double>(), c_grid, c_dt));
    return c;
}

// ---------------------------------------------------------------------------
// 9. feedback synthesis beats the battery and matches the HJB value

Criterion crit_hjb_verification() {
    Json m;
    m["kind"] = "control-verify";
    m["d"] = 1;
    m["eps"] = 0.3;
    m["n_g"] = 64;
    m["dt_pde"] = 1e-4;
    m["T"] = 0.025;
    m["dt_mc"] = 2.5e-4;
    m["n_paths"] = 30000;
    m["master_seed"] = 9009;
    m["solver_budget"] = 0.012;
    m["init"]["weights"] = {0.52, 0.43, 0.05};
    m["init"]["atoms"] = {{0.125}, {0.625}, {0.35}};
    m["lagrangian"]["name"] = "quadratic_ball";
    m["lagrangian"]["radius"] = 1.0;
    m["G"]["outer"]["name"] = "linear";
    m["G"]["outer"]["a"] = {2.0};
    m["G"]["inner"] = {{{"name", "smooth_mode"}, {"eps", 0.3}}};
    RunOutcome out = run_manifest(m);

    Criterion c;
    if (out.exit_code == 1) {
        c.check(false, "config: " + out.error);
        return c;
    }
    const Json& rep = out.results.at("report");
    double v = rep.at("v_pde").get<double>();
    double budget = rep.at("budget").get<double>();

    double opt_cost = 0.0, opt_se = 0.0, zero_cost = 0.0, zero_se = 0.0;
    for (const Json& cand : rep.at("candidates")) {
        if (cand.at("optimal").get<bool>()) {
            opt_cost = cand.at("cost").get<double>();
            opt_se = cand.at("stderr").get<double>();
        }
        if (cand.at("name").get<std::string>() == "zero") {
            zero_cost = cand.at("cost").get<double>();
            zero_se = cand.at("stderr").get<double>();
        }
    }
    c.check(rep.at("optimal_matches").get<bool>(),
            sfmt("|opt %.4f - v %.4f|=%.2g tol=%.2g", opt_cost, v, std::fabs(opt_cost - v),
                 3.0 * opt_se + budget));
    c.check(rep.at("all_above").get<bool>(), "all candidates >= v - 3se - budget");
    double gap = zero_cost - v;
    c.check(gap > 3.0 * zero_se,
            sfmt("zero-control gap %.4f > 3se=%.2g", gap, 3.0 * zero_se));
    return c;
}

// ---------------------------------------------------------------------------
// 10. truncation ladder: shrinking H-gaps and the pathwise TV bound

Criterion crit_stability_ladder() {
    Json m;
    m["kind"] = "stability-ladder";
    m["eps_ladder"] = {0.4, 0.3, 0.2};
    m["n_fibers"] = 200;
    m["n_g"] = 16;
    m["dt"] = 1e-3;
    m["T"] = 0.05;
    m["master_seed"] = 9010;
    RunOutcome out = run_manifest(m);

    Criterion c;
    if (out.exit_code == 1) {
        c.check(false, "config: " + out.error);
        return c;
    }
    const Json& rep = out.results.at("report");
    std::string gaps;
    for (const Json& row : rep.at("pairs")) {
        gaps += sfmt("%s%g->%g: %.4g(se %.2g)", gaps.empty() ? "" : ", ",
                     row.at("eps_hi").get<double>(), row.at("eps_lo").get<double>(),
                     row.at("gap").get<double>(), row.at("se").get<double>());
    }
    c.check(rep.at("finite").get<bool>() && rep.at("monotone").get<bool>(),
            gaps + sfmt(" [solved %zu, skipped %zu]", rep.at("solved").get<std::size_t>(),
                        rep.at("skipped").get<std::size_t>()));
    c.check(rep.at("tv_ok").get<bool>(),
            sfmt("TV<=4*tail on %zu checks", rep.at("tv_checks").get<std::size_t>()));
    return c;
}

// ---------------------------------------------------------------------------
// 11. discretization self-tests

Criterion crit_solver_selftests() {
    Criterion c;

    // (a) eigenfunction error ratio under h -> h/2, dt -> dt/4
    {
        WeightSequence w;
        w.w = {1.0};
        auto err = [&](std::size_t n_g, double dt) {
            FiberProblem fp;
            fp.weights = w;
            fp.grid = TensorGrid{1, 1, n_g};
            fp.horizon = 0.1;
            fp.terminal = [](const std::vector<TorusPoint>& xs) {
                return std::cos(kTwoPi * xs[0][0]);
            };
            SolveResult sol = solve_linear_backward(fp, dt);
            double decay = std::exp(-4.0 * std::numbers::pi * std::numbers::pi * 0.1);
            double worst = 0.0;
            const GridFunction& f = sol.initial();
            for (std::size_t j = 0; j < f.values.size(); ++j) {
                double x = double(j) / double(n_g);
                worst = std::max(worst, std::fabs(f.values[j] - decay * std::cos(kTwoPi * x)));
            }
            return worst;
        };
        double ratio = err(16, 2.5e-3) / err(32, 6.25e-4);
        c.check(ratio >= 3.0 && ratio <= 5.0, sfmt("halving ratio %.3f in [3,5]", ratio));
    }

    // (b) zero Hamiltonian reduces to the linear solver bitwise
    {
        WeightSequence w;
        w.w = {0.62, 0.38};
        auto terminal = [](const std::vector<TorusPoint>& xs) {
            return std::cos(kTwoPi * xs[0][0]) * std::cos(kTwoPi * xs[1][0]);
        };
        auto source = [](const std::vector<TorusPoint>& xs) {
            return 0.3 * std::cos(kTwoPi * xs[0][0]);
        };
        FiberProblem lin;
        lin.weights = w;
        lin.grid = TensorGrid{1, 2, 16};
        lin.horizon = 0.02;
        lin.terminal = terminal;
        lin.source = source;
        FiberProblem hjb = lin;
        hjb.has_hamiltonian = true;
        hjb.hamiltonian.eval = [](const TorusPoint&, const std::vector<double>&) { return 0.0; };
        hjb.hamiltonian.lipschitz_p = 0.0;
        SolveResult a = solve_linear_backward(lin, 1e-3);
        SolveResult b = solve_hjb(hjb, 1e-3);
        bool same = a.slices.size() == b.slices.size();
        for (std::size_t k = 0; same && k < a.slices.size(); ++k)
            same = a.slices[k].values == b.slices[k].values;
        c.check(same, sfmt("hjb(H=0) bitwise equal over %zu slices", a.slices.size()));
    }

    // (c) drifted solve stays inside the terminal range
    {
        WeightSequence w;
        w.w = {0.62, 0.38};
        CylinderFunction g(OuterFunction::linear({1.0}),
                           {InnerFunction::smooth_mode(0.3, FourierMode({1}))});
        FiberProblem fp;
        fp.weights = w;
        fp.grid = TensorGrid{1, 2, 32};
        fp.horizon = 0.05;
        WeightSequence full = w;
        fp.terminal = [g, full](const std::vector<TorusPoint>& xs) {
            return g.evaluate(em_N(full, xs));
        };
        fp.drift = DriftField::mean_attraction(0.6, 0.3);
        fp.has_drift = true;
        SolveResult sol = solve_linear_backward(fp, 2e-4);
        double lo = sol.slices.back().values[0], hi = lo;
        for (double v : sol.slices.back().values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        bool ok = true;
        for (const GridFunction& f : sol.slices)
            for (double v : f.values) ok = ok && v >= lo - 1e-12 && v <= hi + 1e-12;
        c.check(ok, sfmt("max principle: %zu slices within [%.3f, %.3f]", sol.slices.size(), lo,
                         hi));
    }
    return c;
}

using CriterionFn = Criterion (*)();

struct Entry {
    const char* name;
    CriterionFn fn;
};

const Entry kCriteria[] = {
    {"tail-mass", crit_tail_mass},
    {"mecke", crit_mecke},
    {"invariance", crit_invariance},
    {"heat-oracle", crit_heat_oracle},
    {"ibp", crit_ibp},
    {"ito", crit_ito},
    {"girsanov", crit_girsanov},
    {"kolmogorov", crit_kolmogorov},
    {"hjb-verification", crit_hjb_verification},
    {"stability-ladder", crit_stability_ladder},
    {"solver-selftests", crit_solver_selftests},
};

}  // namespace

const std::vector<std::string>& acceptance_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const Entry& e : kCriteria) v.push_back(e.name);
        return v;
    }();
    return names;
}

CriterionOutcome run_acceptance_criterion(const std::string& name) {
    for (const Entry& e : kCriteria) {
        if (name != e.name) continue;
        CriterionOutcome out;
        out.name = name;
        auto start = std::chrono::steady_clock::now();
        try {
            Criterion c = e.fn();
            out.pass = c.pass;
            out.detail = c.detail;
        } catch (const std::exception& ex) {
            out.pass = false;
            out.detail = std::string("exception: ") + ex.what();
        }
        out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                          .count();
        return out;
    }
    throw std::invalid_argument("unknown acceptance criterion '" + name + "'");
}

int acceptance_cli(const std::vector<std::string>& subset, std::ostream& out) {
    std::vector<std::string> names;
    if (subset.empty() || (subset.size() == 1 && subset[0] == "all")) {
        names = acceptance_names();
    } else {
        for (const std::string& s : subset) {
            bool known = false;
            for (const Entry& e : kCriteria) known = known || s == e.name;
            if (!known) {
                out << "unknown criterion '" << s << "'; valid names:";
                for (const Entry& e : kCriteria) out << ' ' << e.name;
                out << '\n';
                return 1;
            }
            names.push_back(s);
        }
    }

    out << sfmt("%-18s %-6s %8s  %s\n", "criterion", "status", "seconds", "detail");
    bool all = true;
    double total = 0.0;
    for (const std::string& name : names) {
        CriterionOutcome r = run_acceptance_criterion(name);
        all = all && r.pass;
        total += r.seconds;
        out << sfmt("%-18s %-6s %8.1f  %s\n", r.name.c_str(), r.pass ? "PASS" : "FAIL", r.seconds,
                    r.detail.c_str());
        out.flush();
    }
    out << sfmt("%zu criteria, %s, %.1f s total\n", names.size(),
                all ? "all passed" : "FAILURES PRESENT", total);
    return all ? 0 : 2;
}

}  // namespace dflab
