#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dflab/cylinder.hpp"
#include "dflab/measures.hpp"
#include "dflab/rng.hpp"
#include "dflab/stats.hpp"
#include "dflab/torus.hpp"

namespace dflab {

// State of the massive particle system. Weights are frozen for the whole
// trajectory; only positions move. Positions live in lifted coordinates
// (unwrapped reals), the measure projects them back to the torus.
struct ParticleEnsemble {
    WeightSequence weights;
    std::vector<std::vector<double>> positions;  // one lifted point per stored weight
    double time = 0.0;

    std::size_t size() const { return positions.size(); }
    std::size_t dim() const { return positions.empty() ? 0 : positions.front().size(); }
    void validate() const;

    TorusPoint projected(std::size_t i) const;
    AtomicMeasure measure() const;  // frozen weights, projected atoms, tail intact
};

ParticleEnsemble ensemble_from_measure(const AtomicMeasure& mu, double t0 = 0.0);

// Number of uniform steps covering [t0, horizon]; throws unless dt > 0
// divides the span within rounding and 0 <= t0 < horizon.
std::size_t time_step_count(double t0, double horizon, double dt);

// Bounded drift b(t, mu, x). compat_eps > 0 promises the value reads mu only
// through atoms of mass >= compat_eps; 0 means full dependence on mu.
struct DriftField {
    std::function<std::vector<double>(double, const AtomicMeasure&, const TorusPoint&)> eval;
    double bound = 0.0;
    double compat_eps = 0.0;
    bool time_dependent = false;  // autonomous fields let solvers cache velocities
    std::string name;

    static DriftField zero(std::size_t d);
    static DriftField constant(std::vector<double> c);
    // gradient force of the potential -amp/(2*pi) * cos(2*pi k.x + phase)
    static DriftField mode_force(double amp, FourierMode k, double phase = 0.0);
    // relaxation towards the circular mean of mu, componentwise:
    //   b_j = amp * sin(2*pi*(mean_j(mu) - x_j))
    // where mean_j is computed from atoms of mass >= compat_eps.
    static DriftField mean_attraction(double amp, double compat_eps);
};

struct SimulationParams {
    double t0 = 0.0;
    double horizon = 1.0;
    double dt = 1e-3;
    double truncation_eps = 0.0;
    std::size_t n_paths = 1;
    std::uint64_t seed = 0;
    std::size_t workers = 1;  // never changes any output, only the schedule
    bool evolve_tail_free = false;

    void validate() const;
    std::size_t n_steps() const;  // (horizon - t0) / dt, exact within rounding
};

// One exact Gaussian increment per particle; the free dynamics has constant
// diffusion 2/s_i so there is no stepping error at any horizon.
ParticleEnsemble simulate_free(const ParticleEnsemble& init, double t_end, RNGStream& rng);

// Euler-Maruyama on the retained particles (mass >= truncation_eps). The
// measure seen by the drift is rebuilt via em_N from the retained positions
// at the start of every step. Tail particles stay put unless
// evolve_tail_free is set. The observer, when given, sees the state after
// every step (initial state included).
ParticleEnsemble simulate_drifted(const ParticleEnsemble& init, const DriftField& drift,
                                  const SimulationParams& params, RNGStream& rng,
                                  const std::function<void(const ParticleEnsemble&)>& observer = {});

// Free path sampled on the step grid with the driving standard normals kept
// for reweighting. states[k] holds the lifted positions at the start of step
// k, flattened particle-major; increments[k] the matching normal draws.
struct FreeTrajectory {
    ParticleEnsemble initial;
    ParticleEnsemble terminal;
    double dt = 0.0;
    std::size_t n_steps = 0;
    std::size_t n_retained = 0;
    double truncation_eps = 0.0;
    std::vector<std::vector<double>> states;
    std::vector<std::vector<double>> increments;
};

FreeTrajectory simulate_free_path(const ParticleEnsemble& init, const SimulationParams& params,
                                  RNGStream& rng);

// Discrete exponential martingale 1/z_T along a free path: left-endpoint
// sums of sqrt(s_i/2) b . dbeta^i and (s_i/2)|b|^2 dr over the retained
// particles. With this discretization the weight is the exact likelihood
// ratio between the drifted and free Euler chains.
double girsanov_inverse_weight(const FreeTrajectory& traj, const DriftField& drift);

// Monte Carlo estimate of E[g(mu_T)] under the drifted dynamics, one
// substream per path. g must not read atoms below the truncation level.
MonteCarloStat estimate_terminal_fn(const std::function<double(const AtomicMeasure&)>& g,
                                    double g_compat_eps, const ParticleEnsemble& init,
                                    const DriftField& drift, const SimulationParams& params);
MonteCarloStat estimate_terminal(const CylinderFunction& g, const ParticleEnsemble& init,
                                 const DriftField& drift, const SimulationParams& params);

// Same expectation, estimated on free paths weighted by 1/z_T.
MonteCarloStat importance_sampled_terminal_fn(const std::function<double(const AtomicMeasure&)>& g,
                                              double g_compat_eps, const ParticleEnsemble& init,
                                              const DriftField& drift,
                                              const SimulationParams& params);
MonteCarloStat importance_sampled_terminal(const CylinderFunction& g, const ParticleEnsemble& init,
                                           const DriftField& drift,
                                           const SimulationParams& params);

// Two-sample comparison of u(mu_0), mu_0 ~ D, against u(mu_t) under the free
// dynamics started from fresh D samples.
struct InvarianceReport {
    MonteCarloStat before, after;
    VarianceStat var_before, var_after;
    bool mean_ok = false;
    bool var_ok = false;
};

std::vector<InvarianceReport> invariance_test(const std::vector<CylinderFunction>& test_fns,
                                              double t, std::size_t n, std::size_t d,
                                              RNGStream master, double mass_tol = kDefaultMassTol);

// Residual of the martingale decomposition under the free dynamics:
//   E[u(mu_T)] - u(mu_0) - E[ sum_k L u(mu_{t_k}) dt ].
struct ItoReport {
    double u0 = 0.0;
    MonteCarloStat terminal;       // E[u(mu_T)]
    MonteCarloStat time_integral;  // E[sum_k L u(mu_{t_k}) dt]
    MonteCarloStat residual;       // per-path combination
};

ItoReport ito_residual(const CylinderFunction& u, const ParticleEnsemble& init, double t_end,
                       std::size_t n, RNGStream master, double dt = 1e-3);

}  // namespace dflab
