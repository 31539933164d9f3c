#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dflab/hamiltonian.hpp"
#include "dflab/measures.hpp"
#include "dflab/particles.hpp"
#include "dflab/rng.hpp"
#include "dflab/stats.hpp"
#include "dflab/torus.hpp"

namespace dflab {

// Tensor grids are exponential in N*d; these caps keep fiber solves at desk
// scale and oversize fibers are skipped and counted, never attempted.
constexpr std::size_t kDefaultNodeBudget = std::size_t(1) << 22;
constexpr std::size_t kDefaultMaxTotalDim = 4;

// Uniform periodic grid on (T^d)^N, n_g points per axis. Axis a = i*d + j is
// coordinate j of particle i; flat storage is row-major with the last axis
// fastest.
struct TensorGrid {
    std::size_t d = 1;
    std::size_t n_particles = 1;
    std::size_t n_g = 16;

    std::size_t total_dim() const { return d * n_particles; }
    std::size_t n_nodes() const;
    double h() const { return 1.0 / double(n_g); }
    void validate(std::size_t node_budget = kDefaultNodeBudget,
                  std::size_t max_total_dim = kDefaultMaxTotalDim) const;

    std::size_t axis_stride(std::size_t axis) const;
    // positions of one flat node as N torus points
    std::vector<TorusPoint> node_points(std::size_t flat) const;
};

struct GridFunction {
    TensorGrid grid;
    std::vector<double> values;

    void validate() const;  // sizes match, all values finite
};

// Multilinear interpolation with periodic wrap; coords has one entry per
// grid axis (particle-major), each taken mod 1.
double multilinear(const GridFunction& f, const std::vector<double>& coords);

// One fiber of the lifted equation: the first n_active particles of a full
// weight sequence live on the grid, the rest enter only through the
// completion map when the drift asks for a measure.
struct FiberProblem {
    WeightSequence weights;    // full sequence; non-increasing positive masses
    TensorGrid grid;           // grid.n_particles = number of active particles
    double t0 = 0.0;
    double horizon = 1.0;
    std::function<double(const std::vector<TorusPoint>&)> terminal;  // required
    std::function<double(const std::vector<TorusPoint>&)> source;    // empty = 0

    DriftField drift;  // linear mode when has_drift
    bool has_drift = false;
    HamiltonianSpec hamiltonian;  // HJB mode when has_hamiltonian
    bool has_hamiltonian = false;

    bool lax_friedrichs = false;  // monotone Hamiltonian fallback
    bool central_drift = false;   // accuracy studies only; default is upwind

    std::size_t node_budget = kDefaultNodeBudget;
    std::size_t max_total_dim = kDefaultMaxTotalDim;

    void validate() const;
};

// Backward-in-time solution slices, ascending in time, t0 always first and
// the terminal slice always last.
struct SolveResult {
    TensorGrid grid;
    std::vector<double> times;
    std::vector<GridFunction> slices;
    double dt = 0.0;
    std::size_t stride = 1;

    const GridFunction& at_time(double t) const;  // exact lookup within 1e-9
    const GridFunction& initial() const { return slices.front(); }
};

// Linear backward equation on the fiber:
//   dh/dt + sum_i (1/s_i) Lap_i h + sum_i b(t, em(s,x), x_i) . grad_i h + f = 0
// Implicit axis-split diffusion (cyclic tridiagonal sweeps), explicit
// first-order upwind drift under the CFL bound dt <= h / (sqrt(d) M).
SolveResult solve_linear_backward(const FiberProblem& p, double dt, std::size_t stride = 1);

// Semilinear fiber equation:
//   dk/dt + sum_i (1/s_i) Lap_i k - sum_i s_i H(x_i, grad_i k / s_i) + f = 0
// IMEX: the Hamiltonian is evaluated explicitly from central differences of
// the previous level (optional Lax-Friedrichs dissipation scaled by the
// p-Lipschitz constant), diffusion implicitly as in the linear solver.
SolveResult solve_hjb(const FiberProblem& p, double dt, std::size_t stride = 1);

// Central-difference gradient along the d axes of one particle block. The
// caller divides by s_i to obtain the measure-level derivative at atom i.
std::vector<GridFunction> extract_gradient(const GridFunction& h, std::size_t particle);

// Exact semigroup factor of sum_i (1/s_i) Lap_i on a product of plane waves:
// exp(-4 pi^2 sum_i |k_i|^2 dt / s_i).
double fourier_heat_oracle(const std::vector<FourierMode>& modes, const std::vector<double>& s,
                           double dt);

// One sampled fiber: the value of the solved PDE at the sampled atoms, or a
// skip when the fiber exceeds the grid budget.
struct FiberEvaluation {
    double value = 0.0;
    bool skipped = false;
};

struct HNormResult {
    double estimate = 0.0;  // mean of squared fiber values
    double se = 0.0;
    std::size_t solved = 0;
    std::size_t skipped = 0;
};

// Samples mu ~ D and averages evaluate(mu)^2 over the fibers that fit the
// budget; estimates |u_{t0}|_H^2 when evaluate returns u_{t0}(mu).
HNormResult h_norm_aggregate(const std::function<FiberEvaluation(const AtomicMeasure&)>& evaluate,
                             std::size_t n_fibers, std::size_t d, RNGStream master,
                             double mass_tol = kDefaultMassTol);

// Heat- or drift-mode value u_{t0}(mu) of the truncation-eps fiber of mu:
// solves the PDE with terminal g at the fiber of mu's weights and reads the
// solution off at mu's atoms (multilinear). g must be eps-compatible.
struct FiberValueConfig {
    double eps = 0.2;
    std::size_t n_g = 16;
    double dt = 1e-3;
    double t0 = 0.0;
    double horizon = 0.1;
    DriftField drift;
    bool has_drift = false;
    std::size_t node_budget = kDefaultNodeBudget;
    std::size_t max_total_dim = kDefaultMaxTotalDim;
};

FiberEvaluation evaluate_fiber_value(const std::function<double(const AtomicMeasure&)>& g,
                                     const FiberValueConfig& cfg, const AtomicMeasure& mu);

// Flat binary snapshot (header: d, N, n_g as u64, time as f64, then values
// row-major) plus a JSON metadata sidecar.
void save_snapshot(const GridFunction& f, double time, const std::string& bin_path,
                   const std::string& json_path);
GridFunction load_snapshot(const std::string& bin_path, double* time_out = nullptr);

}  // namespace dflab
