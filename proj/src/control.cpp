#include "dflab/control.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "dflab/parallel.hpp"
#include "dflab/stats.hpp"

namespace dflab {

namespace {

double l2_norm(const std::vector<double>& v) {
    double acc = 0.0;
    for (double c : v) acc += c * c;
    return std::sqrt(acc);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) acc += a[j] * b[j];
    return acc;
}

void require_finite(const std::vector<double>& p) {
    for (double c : p)
        if (!std::isfinite(c)) throw std::invalid_argument("non-finite momentum");
}

}  // namespace

bool LagrangianSpec::contains(const std::vector<double>& a) const {
    if (a.size() != dim) return false;
    double slack = 1e-9 * (1.0 + radius);
    if (set_kind == SetKind::ball) return l2_norm(a) <= radius + slack;
    for (double c : a)
        if (std::fabs(c) > radius + slack) return false;
    return true;
}

std::vector<double> LagrangianSpec::project(const std::vector<double>& a) const {
    if (a.size() != dim) throw std::invalid_argument("control dimension mismatch");
    std::vector<double> out = a;
    if (set_kind == SetKind::ball) {
        double n = l2_norm(out);
        if (n > radius)
            for (double& c : out) c *= radius / n;
    } else {
        for (double& c : out) c = std::clamp(c, -radius, radius);
    }
    return out;
}

LagrangianSpec quadratic_ball_lagrangian(double radius, std::size_t dim,
                                         std::function<double(const TorusPoint&)> c,
                                         double c_bound) {
    if (!(radius > 0.0)) throw std::invalid_argument("control radius must be positive");
    if (dim == 0) throw std::invalid_argument("control dimension must be positive");
    LagrangianSpec L;
    L.set_kind = LagrangianSpec::SetKind::ball;
    L.radius = radius;
    L.dim = dim;
    L.inf_bound = c_bound;
    L.quadratic = true;
    L.state_cost = c;
    L.name = "quadratic-ball";
    L.eval = [c](const TorusPoint& x, const std::vector<double>& a) {
        double acc = c ? c(x) : 0.0;
        for (double v : a) acc += 0.5 * v * v;
        return acc;
    };
    return L;
}

LagrangianSpec quadratic_box_lagrangian(double radius, std::size_t dim,
                                        std::function<double(const TorusPoint&)> c,
                                        double c_bound) {
    LagrangianSpec L = quadratic_ball_lagrangian(radius, dim, std::move(c), c_bound);
    L.set_kind = LagrangianSpec::SetKind::box;
    L.name = "quadratic-box";
    return L;
}

namespace {

LegendreResult quadratic_legendre(const LagrangianSpec& L, const TorusPoint& x,
                                  const std::vector<double>& p) {
    double c = L.state_cost ? L.state_cost(x) : 0.0;
    double R = L.radius;
    LegendreResult out;
    out.argmax.assign(L.dim, 0.0);
    if (L.set_kind == LagrangianSpec::SetKind::ball) {
        double pn = l2_norm(p);
        if (pn <= R) {
            for (std::size_t j = 0; j < L.dim; ++j) out.argmax[j] = -p[j];
            out.value = 0.5 * pn * pn - c;
        } else {
            for (std::size_t j = 0; j < L.dim; ++j) out.argmax[j] = -R * p[j] / pn;
            out.value = R * pn - 0.5 * R * R - c;
        }
        return out;
    }
    out.value = -c;
    for (std::size_t j = 0; j < L.dim; ++j) {
        if (std::fabs(p[j]) <= R) {
            out.argmax[j] = -p[j];
            out.value += 0.5 * p[j] * p[j];
        } else {
            out.argmax[j] = p[j] > 0.0 ? -R : R;
            out.value += R * std::fabs(p[j]) - 0.5 * R * R;
        }
    }
    return out;
}

LegendreResult grid_sup_legendre(const LagrangianSpec& L, const TorusPoint& x,
                                 const std::vector<double>& p) {
    const std::size_t d = L.dim;
    auto score = [&](const std::vector<double>& a) { return -L.eval(x, a) - dot(p, a); };

    std::vector<double> center(d, 0.0), best(d, 0.0);
    double best_val = score(best);
    double w = L.radius;
    std::vector<std::size_t> digit(d);
    std::vector<double> a(d);
    while (w > 2.5e-7) {
        std::fill(digit.begin(), digit.end(), 0);
        while (true) {
            for (std::size_t j = 0; j < d; ++j)
                a[j] = center[j] + w * (double(digit[j]) - 4.0) / 4.0;
            std::vector<double> cand = L.project(a);
            double v = score(cand);
            if (v > best_val) {
                best_val = v;
                best = cand;
            }
            std::size_t j = 0;
            while (j < d && ++digit[j] == 9) digit[j++] = 0;
            if (j == d) break;
        }
        center = best;
        w *= 0.5;
    }
    return LegendreResult{best_val, best};
}

}  // namespace

LegendreResult legendre(const LagrangianSpec& L, const TorusPoint& x,
                        const std::vector<double>& p) {
    if (!L.eval) throw std::invalid_argument("Lagrangian missing evaluator");
    if (p.size() != L.dim) throw std::invalid_argument("momentum dimension mismatch");
    require_finite(p);
    if (L.quadratic) return quadratic_legendre(L, x, p);
    return grid_sup_legendre(L, x, p);
}

HamiltonianSpec hamiltonian_from(const LagrangianSpec& L) {
    if (!L.eval) throw std::invalid_argument("Lagrangian missing evaluator");
    HamiltonianSpec H;
    H.eval = [L](const TorusPoint& x, const std::vector<double>& p) {
        return legendre(L, x, p).value;
    };
    H.argmax = [L](const TorusPoint& x, const std::vector<double>& p) {
        return legendre(L, x, p).argmax;
    };
    H.lipschitz_p = L.set_kind == LagrangianSpec::SetKind::ball
                        ? L.radius
                        : L.radius * std::sqrt(double(L.dim));
    H.name = "legendre[" + L.name + "]";
    return H;
}

FeedbackPolicy zero_policy(std::size_t dim, double truncation_eps) {
    FeedbackPolicy pol;
    pol.eval = [dim](double, const AtomicMeasure&, std::size_t, const TorusPoint&) {
        return std::vector<double>(dim, 0.0);
    };
    pol.truncation_eps = truncation_eps;
    pol.bound = 0.0;
    pol.name = "zero";
    return pol;
}

FeedbackPolicy constant_policy(std::vector<double> a0, double truncation_eps,
                               std::string name) {
    if (!(truncation_eps > 0.0)) throw std::invalid_argument("truncation level must be positive");
    FeedbackPolicy pol;
    pol.bound = l2_norm(a0);
    pol.truncation_eps = truncation_eps;
    pol.name = std::move(name);
    pol.eval = [a0 = std::move(a0), truncation_eps](double, const AtomicMeasure& mu,
                                                    std::size_t i, const TorusPoint&) {
        if (i >= truncation_index(truncation_eps, mu.weights))
            return std::vector<double>(a0.size(), 0.0);
        return a0;
    };
    return pol;
}

FeedbackPolicy scale_policy(const FeedbackPolicy& base, double factor, std::string name) {
    if (!base.eval) throw std::invalid_argument("policy missing evaluator");
    FeedbackPolicy pol;
    pol.truncation_eps = base.truncation_eps;
    pol.bound = std::fabs(factor) * base.bound;
    pol.name = std::move(name);
    pol.eval = [inner = base.eval, factor](double t, const AtomicMeasure& mu, std::size_t i,
                                           const TorusPoint& x) {
        std::vector<double> a = inner(t, mu, i, x);
        for (double& c : a) c *= factor;
        return a;
    };
    return pol;
}

namespace {

struct GradientTable {
    std::vector<double> times;
    // grads[slice][i * d + j]: d/dx_i^j of the solution, per stored time
    std::vector<std::vector<GridFunction>> grads;
    WeightSequence weights;
    std::size_t n = 0, d = 0;
    double eps = 0.0;
};

std::size_t nearest_time(const std::vector<double>& times, double t) {
    auto it = std::lower_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return 0;
    if (it == times.end()) return times.size() - 1;
    std::size_t hi = std::size_t(it - times.begin());
    return (t - times[hi - 1]) <= (times[hi] - t) ? hi - 1 : hi;
}

}  // namespace

FeedbackPolicy optimal_feedback(const SolveResult& h, const WeightSequence& weights,
                                const HamiltonianSpec& H, double truncation_eps) {
    if (h.slices.empty()) throw std::invalid_argument("empty solution");
    if (!H.argmax) throw std::invalid_argument("Hamiltonian missing maximizer");
    std::size_t n = truncation_index(truncation_eps, weights);
    if (n == 0) throw std::invalid_argument("no retained particles at this truncation level");
    if (n != h.grid.n_particles)
        throw std::invalid_argument("fiber mismatch between the solution and the weights");

    auto table = std::make_shared<GradientTable>();
    table->times = h.times;
    table->weights = weights;
    table->n = n;
    table->d = h.grid.d;
    table->eps = truncation_eps;
    table->grads.resize(h.slices.size());
    for (std::size_t s = 0; s < h.slices.size(); ++s) {
        table->grads[s].reserve(n * table->d);
        for (std::size_t i = 0; i < n; ++i)
            for (auto& gf : extract_gradient(h.slices[s], i))
                table->grads[s].push_back(std::move(gf));
    }

    FeedbackPolicy pol;
    pol.truncation_eps = truncation_eps;
    pol.bound = H.lipschitz_p;
    pol.name = "optimal";
    pol.eval = [table, H](double t, const AtomicMeasure& mu, std::size_t i,
                          const TorusPoint& x) {
        std::size_t n_mu = truncation_index(table->eps, mu.weights);
        std::size_t upto = std::min(n_mu, table->n);
        for (std::size_t k = 0; k < upto; ++k)
            if (std::fabs(mu.weights.w[k] - table->weights.w[k]) > 1e-9)
                throw std::invalid_argument("measure sits on a different fiber");
        if (n_mu != table->n) throw std::invalid_argument("measure sits on a different fiber");
        std::size_t d = table->d;
        if (i >= n_mu) return std::vector<double>(d, 0.0);

        std::size_t slice = nearest_time(table->times, t);
        std::vector<double> coords(table->n * d);
        for (std::size_t k = 0; k < table->n; ++k)
            for (std::size_t j = 0; j < d; ++j) coords[k * d + j] = mu.atoms[k][j];
        for (std::size_t j = 0; j < d; ++j) coords[i * d + j] = x[j];

        std::vector<double> p(d);
        for (std::size_t j = 0; j < d; ++j)
            p[j] = multilinear(table->grads[slice][i * d + j], coords) / table->weights.w[i];
        return H.argmax(x, p);
    };
    return pol;
}

MonteCarloStat evaluate_cost(const FeedbackPolicy& policy, const LagrangianSpec& L,
                             const CylinderFunction* F, const CylinderFunction& G,
                             const ParticleEnsemble& init, const SimulationParams& params) {
    params.validate();
    init.validate();
    if (std::fabs(init.time - params.t0) > 1e-9)
        throw std::invalid_argument("params start differs from ensemble clock");
    if (!L.eval) throw std::invalid_argument("Lagrangian missing evaluator");
    if (L.dim != init.dim()) throw std::invalid_argument("control dimension mismatch");
    if (!policy.eval) throw std::invalid_argument("policy missing evaluator");
    if (policy.truncation_eps + 1e-12 < params.truncation_eps)
        throw std::invalid_argument("policy reads atoms below the simulated truncation");
    if (G.support_threshold() < params.truncation_eps)
        throw std::invalid_argument("terminal cost would read atoms below the truncation level");
    if (F && F->support_threshold() < params.truncation_eps)
        throw std::invalid_argument("running cost would read atoms below the truncation level");

    std::size_t n_ret = truncation_index(params.truncation_eps, init.weights);
    std::size_t steps = params.n_steps();
    std::size_t d = init.dim();
    double dt = params.dt, sqdt = std::sqrt(dt);

    std::vector<double> vals(params.n_paths);
    parallel_for_paths(params.n_paths, params.workers, [&](std::size_t pth) {
        RNGStream rng(params.seed, pth);
        ParticleEnsemble state = init;
        std::vector<double> sigma(state.size());
        for (std::size_t i = 0; i < state.size(); ++i)
            sigma[i] = std::sqrt(2.0 / state.weights.w[i]) * sqdt;
        std::vector<std::vector<double>> ctl(n_ret);
        double acc = 0.0;
        for (std::size_t k = 0; k < steps; ++k) {
            double t = params.t0 + double(k) * dt;
            if (n_ret > 0) {
                std::vector<TorusPoint> xs;
                xs.reserve(n_ret);
                for (std::size_t i = 0; i < n_ret; ++i) xs.push_back(state.projected(i));
                AtomicMeasure nu = em_N(state.weights, xs);
                double rate = F ? F->evaluate(nu) : 0.0;
                for (std::size_t i = 0; i < n_ret; ++i) {
                    ctl[i] = policy.eval(t, nu, i, xs[i]);
                    if (!L.contains(ctl[i]))
                        throw std::logic_error("policy left the control set");
                    rate += state.weights.w[i] * L.eval(xs[i], ctl[i]);
                }
                acc += dt * rate;
                for (std::size_t i = 0; i < n_ret; ++i)
                    for (std::size_t j = 0; j < d; ++j)
                        state.positions[i][j] += ctl[i][j] * dt + sigma[i] * rng.normal();
            } else if (F) {
                acc += dt * F->evaluate(state.measure());
            }
            if (params.evolve_tail_free)
                for (std::size_t i = n_ret; i < state.size(); ++i)
                    for (double& c : state.positions[i]) c += sigma[i] * rng.normal();
            state.time = params.t0 + double(k + 1) * dt;
        }
        vals[pth] = acc + G.evaluate(state.measure());
    });
    return mc_stat(vals);
}

VerificationReport verification_experiment(const LagrangianSpec& L, const CylinderFunction* F,
                                           const CylinderFunction& G, const AtomicMeasure& init,
                                           const VerificationConfig& cfg,
                                           const std::vector<FeedbackPolicy>& extra) {
    init.validate();
    std::size_t n = truncation_index(cfg.truncation_eps, init.weights);
    if (n == 0) throw std::invalid_argument("no retained atoms at this truncation level");
    std::size_t d = init.atoms.front().dim();
    if (L.dim != d) throw std::invalid_argument("control dimension mismatch");

    HamiltonianSpec H = hamiltonian_from(L);

    FiberProblem prob;
    prob.weights = init.weights;
    prob.grid = TensorGrid{d, n, cfg.n_g};
    prob.t0 = cfg.t0;
    prob.horizon = cfg.horizon;
    const WeightSequence w = init.weights;
    prob.terminal = [&G, w](const std::vector<TorusPoint>& xs) {
        return G.evaluate(em_N(w, xs));
    };
    if (F) {
        const CylinderFunction Fv = *F;
        prob.source = [Fv, w](const std::vector<TorusPoint>& xs) {
            return Fv.evaluate(em_N(w, xs));
        };
    }
    prob.has_hamiltonian = true;
    prob.hamiltonian = H;
    prob.lax_friedrichs = cfg.lax_friedrichs;
    prob.node_budget = cfg.node_budget;
    prob.max_total_dim = cfg.max_total_dim;
    SolveResult sol = solve_hjb(prob, cfg.dt_pde, cfg.stride);

    VerificationReport report;
    report.weights = init.weights;
    report.coords.resize(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) report.coords[i * d + j] = init.atoms[i][j];
    report.v_pde = multilinear(sol.initial(), report.coords);
    report.budget = cfg.solver_budget;

    FeedbackPolicy opt = optimal_feedback(sol, init.weights, H, cfg.truncation_eps);
    std::vector<double> half_e1(d, 0.0);
    half_e1[0] = 0.5 * L.radius;
    std::vector<double> neg_e1(d, 0.0);
    neg_e1[0] = -0.5 * L.radius;
    std::vector<FeedbackPolicy> battery;
    battery.push_back(zero_policy(d, cfg.truncation_eps));
    battery.push_back(constant_policy(half_e1, cfg.truncation_eps, "constant +R/2 e1"));
    battery.push_back(constant_policy(neg_e1, cfg.truncation_eps, "constant -R/2 e1"));
    report.optimal_index = battery.size();
    battery.push_back(opt);
    battery.push_back(scale_policy(opt, 0.5, "optimal scaled 0.5"));
    battery.push_back(scale_policy(opt, -1.0, "optimal sign-flipped"));
    for (const auto& pol : extra) battery.push_back(pol);

    ParticleEnsemble ens = ensemble_from_measure(init, cfg.t0);
    SimulationParams sim;
    sim.t0 = cfg.t0;
    sim.horizon = cfg.horizon;
    sim.dt = cfg.dt_mc;
    sim.truncation_eps = cfg.truncation_eps;
    sim.n_paths = cfg.n_paths;
    sim.workers = cfg.workers;

    report.all_above = true;
    for (std::size_t idx = 0; idx < battery.size(); ++idx) {
        sim.seed = cfg.seed + 7919 * (idx + 1);
        MonteCarloStat stat = evaluate_cost(battery[idx], L, F, G, ens, sim);
        CandidateCost cand;
        cand.name = battery[idx].name;
        cand.cost = stat.mean;
        cand.se = stat.se;
        cand.optimal = idx == report.optimal_index;
        cand.pass_lower =
            stat.mean >= report.v_pde - 3.0 * stat.se - cfg.solver_budget;
        report.all_above = report.all_above && cand.pass_lower;
        if (cand.optimal)
            report.optimal_matches =
                std::fabs(stat.mean - report.v_pde) <= 3.0 * stat.se + cfg.solver_budget;
        report.candidates.push_back(std::move(cand));
    }
    return report;
}

}  // namespace dflab
