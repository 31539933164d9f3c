#pragma once

#include <cstddef>
#include <vector>

#include "dflab/measures.hpp"
#include "dflab/torus.hpp"

namespace dflab {

// Quintic smoothstep mass cutoff: 0 on [0, eps], 1 on [2 eps, 1], C^2 ramp
// in between. Keeps functionals blind to atoms at or below mass eps.
double mass_cutoff(double eps, double r);

// Inner coordinate f(r, x) of a cylinder functional; closed-form library so
// gradients and Laplacians in x are exact.
class InnerFunction {
  public:
    // amp * chi_eps(r) * cos(2 pi k.x + phase)
    static InnerFunction smooth_mode(double eps, FourierMode k, double phase = 0.0,
                                     double amp = 1.0);
    // amp * chi_eps(r)
    static InnerFunction mass_only(double eps, double amp = 1.0);
    // r itself; support threshold 0, so admissible for averages but not for
    // the generator
    static InnerFunction linear_mass();

    double eval(double r, const TorusPoint& x) const;
    std::vector<double> grad_x(double r, const TorusPoint& x) const;
    double lap_x(double r, const TorusPoint& x) const;
    double support_threshold() const { return eps_; }

  private:
    enum class Kind { SmoothMode, MassOnly, LinearMass };
    Kind kind_;
    double eps_ = 0.0;
    double amp_ = 1.0;
    double phase_ = 0.0;
    FourierMode k_{std::vector<int>{}};

    InnerFunction(Kind kind) : kind_(kind) {}
};

// Smooth outer map F: R^m -> R with exact gradient and Hessian.
class OuterFunction {
  public:
    static OuterFunction linear(std::vector<double> a, double c = 0.0);
    static OuterFunction quadratic(std::vector<double> a, std::vector<std::vector<double>> q,
                                   double c = 0.0);
    static OuterFunction expo(std::vector<double> a, double amp = 1.0);

    std::size_t arity() const { return a_.size(); }
    double eval(const std::vector<double>& y) const;
    std::vector<double> grad(const std::vector<double>& y) const;
    std::vector<std::vector<double>> hessian(const std::vector<double>& y) const;

  private:
    enum class Kind { Quadratic, Exp };
    Kind kind_ = Kind::Quadratic;
    double c_ = 0.0, amp_ = 1.0;
    std::vector<double> a_;
    std::vector<std::vector<double>> q_;  // symmetric; empty means zero
};

// u(mu) = F(f_1*(mu), ..., f_m*(mu)) with f_l*(mu) = sum_i s_i f_l(s_i, x_i).
class CylinderFunction {
  public:
    CylinderFunction(OuterFunction outer, std::vector<InnerFunction> inner);

    double support_threshold() const { return threshold_; }

    std::vector<double> hat_star(const AtomicMeasure& mu) const;
    double evaluate(const AtomicMeasure& mu) const;

    // Intrinsic gradient at atom i: sum_l d_l F(f*(mu)) grad_x f_l(s_i, x_i).
    // Vanishes identically for atoms at or below the support threshold.
    std::vector<double> intrinsic_gradient(const AtomicMeasure& mu, std::size_t i) const;

    // sum_i [ sum_l d_l F lap f_l(s_i, x_i)
    //         + s_i sum_{l,m} d_lm F grad f_l . grad f_m ].
    // Requires a strictly positive support threshold above the tail.
    double generator(const AtomicMeasure& mu) const;

    // sum_i s_i |intrinsic gradient at atom i|^2; squared pointwise slope.
    double pre_cheeger(const AtomicMeasure& mu) const;

    const OuterFunction& outer() const { return outer_; }
    const std::vector<InnerFunction>& inner() const { return inner_; }

  private:
    void check_compat(const AtomicMeasure& mu) const;
    OuterFunction outer_;
    std::vector<InnerFunction> inner_;
    double threshold_;
};

// Monte Carlo of sum_i s_i grad u . grad v under the random-measure law on
// the d-torus.
MonteCarloStat dirichlet_form_mc(const CylinderFunction& u, const CylinderFunction& v,
                                 std::size_t n, std::size_t d, RNGStream rng,
                                 double mass_tol = kDefaultMassTol);

// Per-sample sum_i s_i grad u . grad v + u * L v, same measure stream for
// both terms; mean is zero under the integration-by-parts identity.
MonteCarloStat ibp_residual(const CylinderFunction& u, const CylinderFunction& v, std::size_t n,
                            std::size_t d, RNGStream rng, double mass_tol = kDefaultMassTol);

}  // namespace dflab
