#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "dflab/rng.hpp"
#include "dflab/stats.hpp"
#include "dflab/torus.hpp"

namespace dflab {

inline constexpr double kDefaultMassTol = 1e-8;

// Ranked atom masses: strictly decreasing, each in (0,1], plus the
// unresolved remainder. Invariants: sum(w) + tail == 1 within 1e-12 and
// tail < w.back(), so no unresolved atom can outweigh a stored one.
struct WeightSequence {
    std::vector<double> w;
    double tail = 0.0;

    std::size_t size() const { return w.size(); }
    void validate() const;  // throws std::invalid_argument on violation
    double mass_below(double eps) const;  // sum of stored w_i < eps, plus tail
};

// One pass of stick breaking with uniform fractions; emits sticks until the
// unassigned remainder drops below mass_tol. Returns the raw (unsorted)
// weights; the remainder is implied as 1 - sum.
std::vector<double> sample_gem(RNGStream& rng, double mass_tol = kDefaultMassTol);

// Same recursion with an arbitrary fraction source (test hook).
std::vector<double> sample_gem_from(const std::function<double()>& uniform_draw,
                                    double mass_tol);

// Descending sort (stable, so ties keep original order); weights that do not
// exceed the running tail are folded into it so the ranked invariants hold.
WeightSequence reorder(std::vector<double> raw);

WeightSequence sample_weights(RNGStream& rng, double mass_tol = kDefaultMassTol);

// Number of stored weights >= eps; at most ceil(1/eps). Requires eps > tail,
// otherwise membership of unresolved atoms is undecidable.
std::size_t truncation_index(double eps, const WeightSequence& s);

// Purely atomic probability measure on the torus: ranked weights paired with
// pairwise-distinct atom positions.
struct AtomicMeasure {
    WeightSequence weights;
    std::vector<TorusPoint> atoms;

    std::size_t size() const { return atoms.size(); }
    std::size_t dim() const { return atoms.empty() ? 0 : atoms[0].dim(); }
    void validate() const;
    double mass_at(const TorusPoint& x) const;  // exact-position lookup
};

// Weights from stick breaking, atom positions i.i.d. uniform on the torus,
// independent of the weights.
AtomicMeasure sample_dirichlet_ferguson(RNGStream& rng, std::size_t d,
                                        double mass_tol = kDefaultMassTol);

// Deterministic completion: appends `extra` points x_1 + 2^{-j} e_1 * rho,
// j = N+1, ..., N+extra, where rho = 1 if all inputs coincide and otherwise
// a third of the smallest distance from x_1 to a distinct input. Appended
// points are distinct from each other and from every input.
std::vector<TorusPoint> complete_positions(const std::vector<TorusPoint>& x, std::size_t extra);

// Measure whose first N atoms are x (weights s_1..s_N) and whose remaining
// stored weights sit at completed positions. Requires 1 <= N <= s.size().
AtomicMeasure em_N(const WeightSequence& s, const std::vector<TorusPoint>& x);

// Ad-hoc construction from unranked data; sorts and folds to restore the
// ranked invariants. Exact duplicate positions are merged first.
AtomicMeasure make_measure(std::vector<double> weights, std::vector<TorusPoint> atoms,
                           double tail = 0.0);

// (1-r) mu + r delta_x.
AtomicMeasure convex_with_dirac(const AtomicMeasure& mu, const TorusPoint& x, double r);

// Conditional law given an atom mass above eps: atoms with mass > eps,
// renormalized; Dirac at the origin when no atom qualifies.
AtomicMeasure conditional_truncate(const AtomicMeasure& mu, double eps);

// 4 * (mass not retained by conditional_truncate at eps); dominates the
// total variation distance between mu and its truncation.
double tv_tail_bound(const AtomicMeasure& mu, double eps);

// Total variation as measures (mass of the symmetric difference); exact for
// the stored atoms, tails counted as disjoint worst case.
double total_variation(const AtomicMeasure& a, const AtomicMeasure& b);

struct SizeBiasedPick {
    std::size_t index = 0;  // position in the stored list; past-the-end when from the tail
    double mass = 0.0;
    bool from_tail = false;
};

// P(index = i) = w_i; a hit in the tail extends the stick recursively and
// reports the synthesized atom's mass.
SizeBiasedPick size_biased_pick(RNGStream& rng, const WeightSequence& s);

// Test functional u(mu, x, mass-of-x-in-mu) for the restriction identity.
using MeckeFunctional = std::function<double(const AtomicMeasure&, const TorusPoint&, double)>;

struct MeckeResult {
    MonteCarloStat lhs;  // E integral u(mu, x, mu_x) dmu(x)
    MonteCarloStat rhs;  // E integral_T integral_0^1 u((1-r)mu + r delta_x, x, r) dr dx
    double residual() const { return lhs.mean - rhs.mean; }
    double combined_se() const;
};

// Both sides by Monte Carlo on independent streams. Requires n >= 100.
MeckeResult mecke_check(const MeckeFunctional& u, std::size_t n, std::size_t d,
                        RNGStream lhs_rng, RNGStream rhs_rng,
                        double mass_tol = kDefaultMassTol);

}  // namespace dflab
