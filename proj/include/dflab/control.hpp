#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dflab/hamiltonian.hpp"
#include "dflab/pde.hpp"

namespace dflab {

// Reference family L(x, a) = |a|^2/2 + c(x) on a ball (or box) of radius R.
// c_bound must dominate |c| so the declared bound on |inf_a L| is honest.
LagrangianSpec quadratic_ball_lagrangian(double radius, std::size_t dim,
                                         std::function<double(const TorusPoint&)> c = {},
                                         double c_bound = 0.0);
LagrangianSpec quadratic_box_lagrangian(double radius, std::size_t dim,
                                        std::function<double(const TorusPoint&)> c = {},
                                        double c_bound = 0.0);

struct LegendreResult {
    double value = 0.0;
    std::vector<double> argmax;
};

// H(x, p) = sup_a { -L(x, a) - p . a }. Closed form for the quadratic family;
// otherwise a shrinking grid search over the control set, argmax located to
// about 1e-7 (well inside the documented 1e-6).
LegendreResult legendre(const LagrangianSpec& L, const TorusPoint& x,
                        const std::vector<double>& p);

HamiltonianSpec hamiltonian_from(const LagrangianSpec& L);

// Per-particle feedback control. eval(t, mu, i, x) is the control applied to
// particle i at position x when the system sits at mu; it must vanish for i at
// or beyond the truncation index of mu at truncation_eps.
struct FeedbackPolicy {
    std::function<std::vector<double>(double, const AtomicMeasure&, std::size_t,
                                      const TorusPoint&)>
        eval;
    double truncation_eps = 0.0;
    double bound = 0.0;  // cap on |eval|_2
    std::string name;
};

FeedbackPolicy zero_policy(std::size_t dim, double truncation_eps);
FeedbackPolicy constant_policy(std::vector<double> a0, double truncation_eps,
                               std::string name = "constant");
// pointwise rescale; |factor| <= 1 keeps values inside any symmetric convex set
FeedbackPolicy scale_policy(const FeedbackPolicy& base, double factor, std::string name);

// Feedback synthesized from a backward HJB solution h on the fiber of weights:
// alpha^i = argmax at (x_i, grad_i h / s_i), gradient multilinearly
// interpolated on the nearest stored time slice, zero beyond the truncation
// index. The solution must carry exactly the retained particles of weights.
FeedbackPolicy optimal_feedback(const SolveResult& h, const WeightSequence& weights,
                                const HamiltonianSpec& H, double truncation_eps);

// Expected cost of running the controlled system from init to the horizon:
// left-endpoint quadrature of F(mu_t) + sum_{retained} s_i L(X^i_t, alpha^i_t)
// plus terminal G(mu_T). F may be null. Every policy evaluation is checked
// against the control set of L.
MonteCarloStat evaluate_cost(const FeedbackPolicy& policy, const LagrangianSpec& L,
                             const CylinderFunction* F, const CylinderFunction& G,
                             const ParticleEnsemble& init, const SimulationParams& params);

struct VerificationConfig {
    double t0 = 0.0;
    double horizon = 0.1;
    double truncation_eps = 0.2;
    std::size_t n_g = 32;
    double dt_pde = 1e-3;
    std::size_t stride = 1;
    double dt_mc = 1e-3;
    std::size_t n_paths = 10000;
    std::uint64_t seed = 1;
    std::size_t workers = 1;
    double solver_budget = 5e-3;  // declared PDE + interpolation error allowance
    bool lax_friedrichs = false;
    std::size_t node_budget = kDefaultNodeBudget;
    std::size_t max_total_dim = kDefaultMaxTotalDim;
};

struct CandidateCost {
    std::string name;
    double cost = 0.0;
    double se = 0.0;
    bool pass_lower = false;  // cost >= v_pde - 3 se - budget
    bool optimal = false;
};

struct VerificationReport {
    WeightSequence weights;
    std::vector<double> coords;  // retained initial atoms, flattened
    double v_pde = 0.0;
    double budget = 0.0;
    std::vector<CandidateCost> candidates;
    std::size_t optimal_index = 0;
    bool optimal_matches = false;  // |cost(optimal) - v_pde| <= 3 se + budget
    bool all_above = false;
};

// Solves the HJB equation on the fiber of init, synthesizes the optimal
// feedback, and races it against the standard candidate battery (zero,
// constant +-R/2 e1, half-scaled, sign-flipped) plus any extras. Candidates
// draw from independent seed streams.
VerificationReport verification_experiment(const LagrangianSpec& L, const CylinderFunction* F,
                                           const CylinderFunction& G, const AtomicMeasure& init,
                                           const VerificationConfig& cfg,
                                           const std::vector<FeedbackPolicy>& extra = {});

}  // namespace dflab
