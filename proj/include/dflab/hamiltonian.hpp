#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dflab/torus.hpp"

namespace dflab {

// Running cost rate L(x, a) over a compact convex control set containing 0.
struct LagrangianSpec {
    enum class SetKind { ball, box };

    std::function<double(const TorusPoint&, const std::vector<double>&)> eval;
    SetKind set_kind = SetKind::ball;
    double radius = 1.0;  // ball radius, or box half-width per coordinate
    std::size_t dim = 1;
    double inf_bound = 0.0;  // declared bound on |inf_a L(x, a)|
    std::string name;

    // set when L(x, a) = |a|^2/2 + state_cost(x); unlocks the closed-form
    // Legendre transform (state_cost may stay empty, meaning zero)
    bool quadratic = false;
    std::function<double(const TorusPoint&)> state_cost;

    bool contains(const std::vector<double>& a) const;
    // clamp onto the control set (radial for balls, componentwise for boxes)
    std::vector<double> project(const std::vector<double>& a) const;
};

// H(x, p) = sup_a { -L(x, a) - p . a } together with its maximizer.
struct HamiltonianSpec {
    std::function<double(const TorusPoint&, const std::vector<double>&)> eval;
    std::function<std::vector<double>(const TorusPoint&, const std::vector<double>&)> argmax;
    double lipschitz_p = 0.0;  // bound on |grad_p H|
    std::string name;
};

}  // namespace dflab
