#include "dflab/particles.hpp"

#include <cmath>
#include <limits>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <thread>

#include "dflab/parallel.hpp"

namespace dflab {

std::size_t time_step_count(double t0, double horizon, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
    if (!(t0 >= 0.0) || !(horizon > t0))
        throw std::invalid_argument("need 0 <= t0 < horizon");
    double span = horizon - t0;
    auto steps = static_cast<std::size_t>(std::llround(span / dt));
    if (steps < 1 || std::fabs(steps * dt - span) > 1e-8 * span)
        throw std::invalid_argument("dt must divide horizon - t0");
    return steps;
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void require_clock(const ParticleEnsemble& init, double t0) {
    if (std::fabs(init.time - t0) > 1e-9)
        throw std::invalid_argument("params start differs from ensemble clock");
}

std::vector<TorusPoint> wrapped_prefix(const ParticleEnsemble& e, std::size_t n) {
    std::vector<TorusPoint> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(e.projected(i));
    return out;
}

}  // namespace

void ParticleEnsemble::validate() const {
    weights.validate();
    if (positions.size() != weights.w.size())
        throw std::invalid_argument("one position per stored weight required");
    std::size_t d = dim();
    if (d == 0) throw std::invalid_argument("empty ensemble");
    for (const auto& p : positions) {
        if (p.size() != d) throw std::invalid_argument("mixed position dimensions");
        for (double c : p)
            if (!std::isfinite(c)) throw std::invalid_argument("non-finite position");
    }
    if (!std::isfinite(time) || time < 0.0) throw std::invalid_argument("bad clock");
}

TorusPoint ParticleEnsemble::projected(std::size_t i) const {
    return TorusPoint(wrap(positions.at(i)));
}

AtomicMeasure ParticleEnsemble::measure() const {
    AtomicMeasure mu;
    mu.weights = weights;
    mu.atoms.reserve(positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i) mu.atoms.push_back(projected(i));
    return mu;
}

ParticleEnsemble ensemble_from_measure(const AtomicMeasure& mu, double t0) {
    ParticleEnsemble e;
    e.weights = mu.weights;
    e.positions.reserve(mu.size());
    for (const auto& a : mu.atoms) e.positions.push_back(a.c);
    e.time = t0;
    return e;
}

DriftField DriftField::zero(std::size_t d) {
    DriftField b;
    b.eval = [d](double, const AtomicMeasure&, const TorusPoint&) {
        return std::vector<double>(d, 0.0);
    };
    b.bound = 0.0;
    b.compat_eps = std::numeric_limits<double>::infinity();
    b.name = "zero";
    return b;
}

DriftField DriftField::constant(std::vector<double> c) {
    double norm2 = 0.0;
    for (double v : c) norm2 += v * v;
    DriftField b;
    b.eval = [c](double, const AtomicMeasure&, const TorusPoint&) { return c; };
    b.bound = std::sqrt(norm2);
    b.compat_eps = std::numeric_limits<double>::infinity();
    b.name = "constant";
    return b;
}

DriftField DriftField::mode_force(double amp, FourierMode k, double phase) {
    double ksq = 0.0;
    for (int kj : k.k) ksq += double(kj) * kj;
    DriftField b;
    b.eval = [amp, k, phase](double, const AtomicMeasure&, const TorusPoint& x) {
        double s = amp * std::sin(kTwoPi * k.dot(x) + phase);
        std::vector<double> out(x.dim());
        for (std::size_t j = 0; j < x.dim(); ++j) out[j] = s * k.k.at(j);
        return out;
    };
    b.bound = std::fabs(amp) * std::sqrt(ksq);
    b.compat_eps = std::numeric_limits<double>::infinity();
    b.name = "mode_force";
    return b;
}

DriftField DriftField::mean_attraction(double amp, double compat_eps) {
    if (!(compat_eps > 0.0)) throw std::invalid_argument("mean_attraction needs compat_eps > 0");
    DriftField b;
    b.eval = [amp, compat_eps](double, const AtomicMeasure& mu, const TorusPoint& x) {
        std::vector<double> out(x.dim());
        for (std::size_t j = 0; j < x.dim(); ++j) {
            double c = 0.0, s = 0.0;
            for (std::size_t i = 0; i < mu.size(); ++i) {
                double w = mu.weights.w[i];
                if (w < compat_eps) break;  // weights ranked
                c += w * std::cos(kTwoPi * mu.atoms[i][j]);
                s += w * std::sin(kTwoPi * mu.atoms[i][j]);
            }
            double mean = std::atan2(s, c) / kTwoPi;
            out[j] = amp * std::sin(kTwoPi * (mean - x[j]));
        }
        return out;
    };
    b.bound = std::fabs(amp);  // componentwise; scale by sqrt(d) for the L2 bound
    b.compat_eps = compat_eps;
    b.name = "mean_attraction";
    return b;
}

void SimulationParams::validate() const {
    time_step_count(t0, horizon, dt);
    if (n_paths < 1) throw std::invalid_argument("n_paths must be positive");
    if (workers < 1) throw std::invalid_argument("workers must be positive");
    if (truncation_eps < 0.0) throw std::invalid_argument("negative truncation");
}

std::size_t SimulationParams::n_steps() const { return time_step_count(t0, horizon, dt); }

void parallel_for_paths(std::size_t n, std::size_t workers,
                        const std::function<void(std::size_t)>& body) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    if (workers > n) workers = n;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::exception_ptr first_error;
    std::mutex error_mu;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

ParticleEnsemble simulate_free(const ParticleEnsemble& init, double t_end, RNGStream& rng) {
    if (t_end < init.time) throw std::invalid_argument("t_end before current time");
    ParticleEnsemble out = init;
    if (t_end == init.time) return out;
    double span = t_end - init.time;
    for (std::size_t i = 0; i < out.size(); ++i) {
        double sigma = std::sqrt(2.0 / out.weights.w[i] * span);
        for (double& c : out.positions[i]) c += sigma * rng.normal();
    }
    out.time = t_end;
    return out;
}

ParticleEnsemble simulate_drifted(const ParticleEnsemble& init, const DriftField& drift,
                                  const SimulationParams& params, RNGStream& rng,
                                  const std::function<void(const ParticleEnsemble&)>& observer) {
    params.validate();
    require_clock(init, params.t0);
    if (drift.compat_eps < params.truncation_eps)
        throw std::invalid_argument("drift would read atoms below the truncation level");
    std::size_t n_ret = truncation_index(params.truncation_eps, init.weights);
    std::size_t steps = params.n_steps();
    double dt = params.dt, sqdt = std::sqrt(dt);

    ParticleEnsemble state = init;
    std::vector<double> sigma(state.size());
    for (std::size_t i = 0; i < state.size(); ++i)
        sigma[i] = std::sqrt(2.0 / state.weights.w[i]) * sqdt;

    if (observer) observer(state);
    for (std::size_t k = 0; k < steps; ++k) {
        double t = params.t0 + double(k) * dt;
        if (n_ret > 0) {
            auto xs = wrapped_prefix(state, n_ret);
            AtomicMeasure nu = em_N(state.weights, xs);
            for (std::size_t i = 0; i < n_ret; ++i) {
                auto b = drift.eval(t, nu, xs[i]);
                for (std::size_t j = 0; j < state.dim(); ++j)
                    state.positions[i][j] += b[j] * dt + sigma[i] * rng.normal();
            }
        }
        if (params.evolve_tail_free)
            for (std::size_t i = n_ret; i < state.size(); ++i)
                for (double& c : state.positions[i]) c += sigma[i] * rng.normal();
        state.time = params.t0 + double(k + 1) * dt;
        if (observer) observer(state);
    }
    return state;
}

FreeTrajectory simulate_free_path(const ParticleEnsemble& init, const SimulationParams& params,
                                  RNGStream& rng) {
    params.validate();
    require_clock(init, params.t0);
    FreeTrajectory traj;
    traj.initial = init;
    traj.dt = params.dt;
    traj.n_steps = params.n_steps();
    traj.truncation_eps = params.truncation_eps;
    traj.n_retained = params.truncation_eps > 0.0
                          ? truncation_index(params.truncation_eps, init.weights)
                          : init.size();

    std::size_t d = init.dim(), m = init.size();
    double sqdt = std::sqrt(params.dt);
    std::vector<double> sigma(m);
    for (std::size_t i = 0; i < m; ++i) sigma[i] = std::sqrt(2.0 / init.weights.w[i]) * sqdt;

    ParticleEnsemble state = init;
    traj.states.reserve(traj.n_steps);
    traj.increments.reserve(traj.n_steps);
    for (std::size_t k = 0; k < traj.n_steps; ++k) {
        std::vector<double> flat(m * d);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) flat[i * d + j] = state.positions[i][j];
        traj.states.push_back(std::move(flat));
        std::vector<double> xi(m * d);
        for (double& v : xi) v = rng.normal();
        traj.increments.push_back(xi);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) state.positions[i][j] += sigma[i] * xi[i * d + j];
        state.time = params.t0 + double(k + 1) * params.dt;
    }
    traj.terminal = std::move(state);
    return traj;
}

double girsanov_inverse_weight(const FreeTrajectory& traj, const DriftField& drift) {
    std::size_t m = traj.initial.size(), d = traj.initial.dim();
    if (traj.n_steps == 0 || traj.states.size() != traj.n_steps ||
        traj.increments.size() != traj.n_steps)
        throw std::invalid_argument("trajectory lacks stored increments");
    for (std::size_t k = 0; k < traj.n_steps; ++k)
        if (traj.states[k].size() != m * d || traj.increments[k].size() != m * d)
            throw std::invalid_argument("trajectory lacks stored increments");
    if (!(traj.truncation_eps > 0.0))
        throw std::invalid_argument("trajectory carries no truncation level");
    if (drift.compat_eps < traj.truncation_eps)
        throw std::invalid_argument("drift would read atoms below the truncation level");

    const WeightSequence& w = traj.initial.weights;
    std::size_t n_ret = traj.n_retained;
    if (n_ret == 0) return 1.0;
    double dt = traj.dt, sqdt = std::sqrt(dt);
    double expo = 0.0;
    std::vector<TorusPoint> xs(n_ret, TorusPoint(std::vector<double>(d)));
    for (std::size_t k = 0; k < traj.n_steps; ++k) {
        const auto& st = traj.states[k];
        for (std::size_t i = 0; i < n_ret; ++i) {
            std::vector<double> p(st.begin() + i * d, st.begin() + (i + 1) * d);
            xs[i] = TorusPoint(wrap(p));
        }
        AtomicMeasure nu = em_N(w, xs);
        double t = traj.initial.time + double(k) * dt;
        for (std::size_t i = 0; i < n_ret; ++i) {
            auto b = drift.eval(t, nu, xs[i]);
            double dot = 0.0, bsq = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                dot += b[j] * traj.increments[k][i * d + j];
                bsq += b[j] * b[j];
            }
            expo += std::sqrt(w.w[i] / 2.0) * dot * sqdt - 0.25 * w.w[i] * bsq * dt;
        }
    }
    return std::exp(expo);
}

namespace {

MonteCarloStat mc_over_paths(const SimulationParams& params,
                             const std::function<double(RNGStream&)>& one_path) {
    std::vector<double> vals(params.n_paths);
    parallel_for_paths(params.n_paths, params.workers, [&](std::size_t p) {
        RNGStream rng(params.seed, p);
        vals[p] = one_path(rng);
    });
    return mc_stat(vals);
}

}  // namespace

MonteCarloStat estimate_terminal_fn(const std::function<double(const AtomicMeasure&)>& g,
                                    double g_compat_eps, const ParticleEnsemble& init,
                                    const DriftField& drift, const SimulationParams& params) {
    params.validate();
    if (g_compat_eps < params.truncation_eps)
        throw std::invalid_argument("observable would read atoms below the truncation level");
    return mc_over_paths(params, [&](RNGStream& rng) {
        return g(simulate_drifted(init, drift, params, rng).measure());
    });
}

MonteCarloStat estimate_terminal(const CylinderFunction& g, const ParticleEnsemble& init,
                                 const DriftField& drift, const SimulationParams& params) {
    return estimate_terminal_fn([&](const AtomicMeasure& mu) { return g.evaluate(mu); },
                                g.support_threshold(), init, drift, params);
}

MonteCarloStat importance_sampled_terminal_fn(
    const std::function<double(const AtomicMeasure&)>& g, double g_compat_eps,
    const ParticleEnsemble& init, const DriftField& drift, const SimulationParams& params) {
    params.validate();
    if (g_compat_eps < params.truncation_eps)
        throw std::invalid_argument("observable would read atoms below the truncation level");
    if (drift.compat_eps < params.truncation_eps)
        throw std::invalid_argument("drift would read atoms below the truncation level");
    return mc_over_paths(params, [&](RNGStream& rng) {
        FreeTrajectory traj = simulate_free_path(init, params, rng);
        return girsanov_inverse_weight(traj, drift) * g(traj.terminal.measure());
    });
}

MonteCarloStat importance_sampled_terminal(const CylinderFunction& g,
                                           const ParticleEnsemble& init, const DriftField& drift,
                                           const SimulationParams& params) {
    return importance_sampled_terminal_fn([&](const AtomicMeasure& mu) { return g.evaluate(mu); },
                                          g.support_threshold(), init, drift, params);
}

std::vector<InvarianceReport> invariance_test(const std::vector<CylinderFunction>& test_fns,
                                              double t, std::size_t n, std::size_t d,
                                              RNGStream master, double mass_tol) {
    if (!(t > 0.0)) throw std::invalid_argument("evolution time must be positive");
    if (n < 100) throw std::invalid_argument("need at least 100 samples");
    std::size_t m = test_fns.size();
    std::vector<std::vector<double>> before(m, std::vector<double>(n));
    std::vector<std::vector<double>> after(m, std::vector<double>(n));
    for (std::size_t p = 0; p < n; ++p) {
        RNGStream ra = master.substream(2 * p), rb = master.substream(2 * p + 1);
        AtomicMeasure mu0 = sample_dirichlet_ferguson(ra, d, mass_tol);
        for (std::size_t f = 0; f < m; ++f) before[f][p] = test_fns[f].evaluate(mu0);
        ParticleEnsemble e = ensemble_from_measure(sample_dirichlet_ferguson(rb, d, mass_tol));
        AtomicMeasure mu_t = simulate_free(e, t, rb).measure();
        for (std::size_t f = 0; f < m; ++f) after[f][p] = test_fns[f].evaluate(mu_t);
    }
    std::vector<InvarianceReport> out(m);
    for (std::size_t f = 0; f < m; ++f) {
        out[f].before = mc_stat(before[f]);
        out[f].after = mc_stat(after[f]);
        out[f].var_before = variance_stat(before[f]);
        out[f].var_after = variance_stat(after[f]);
        double se_mean = std::hypot(out[f].before.se, out[f].after.se);
        double se_var = std::hypot(out[f].var_before.se, out[f].var_after.se);
        out[f].mean_ok = std::fabs(out[f].before.mean - out[f].after.mean) <= 3.0 * se_mean;
        out[f].var_ok = std::fabs(out[f].var_before.var - out[f].var_after.var) <= 3.0 * se_var;
    }
    return out;
}

ItoReport ito_residual(const CylinderFunction& u, const ParticleEnsemble& init, double t_end,
                       std::size_t n, RNGStream master, double dt) {
    if (!(u.support_threshold() > 0.0))
        throw std::invalid_argument("functional must resolve only finitely many atoms");
    std::size_t steps = time_step_count(init.time, t_end, dt);
    AtomicMeasure mu0 = init.measure();
    double u0 = u.evaluate(mu0);

    std::vector<double> term(n), integral(n), resid(n);
    std::size_t m = init.size(), d = init.dim();
    std::vector<double> sigma(m);
    for (std::size_t i = 0; i < m; ++i)
        sigma[i] = std::sqrt(2.0 / init.weights.w[i] * dt);

    for (std::size_t p = 0; p < n; ++p) {
        RNGStream rng = master.substream(p);
        std::vector<std::vector<double>> pos = init.positions;
        AtomicMeasure mu = mu0;
        double acc = 0.0;
        for (std::size_t k = 0; k < steps; ++k) {
            acc += u.generator(mu) * dt;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < d; ++j) {
                    pos[i][j] += sigma[i] * rng.normal();
                    mu.atoms[i][j] = wrap1(pos[i][j]);
                }
        }
        term[p] = u.evaluate(mu);
        integral[p] = acc;
        resid[p] = term[p] - u0 - acc;
    }
    ItoReport rep;
    rep.u0 = u0;
    rep.terminal = mc_stat(term);
    rep.time_integral = mc_stat(integral);
    rep.residual = mc_stat(resid);
    return rep;
}

}  // namespace dflab
