#include "dflab/torus.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dflab {

double wrap1(double y) {
    if (!std::isfinite(y)) throw std::domain_error("wrap: non-finite coordinate");
    double r = y - std::floor(y);
    // floor can leave r == 1.0 when y is a tiny negative number.
    if (r >= 1.0) r -= 1.0;
    return r;
}

TorusPoint wrap(const std::vector<double>& y) {
    TorusPoint p;
    p.c.reserve(y.size());
    for (double v : y) p.c.push_back(wrap1(v));
    return p;
}

double torus_distance(const TorusPoint& x, const TorusPoint& y) {
    if (x.dim() != y.dim()) throw std::invalid_argument("torus_distance: dimension mismatch");
    double s = 0.0;
    for (std::size_t j = 0; j < x.dim(); ++j) {
        double d = std::fabs(wrap1(x[j]) - wrap1(y[j]));
        d = std::min(d, 1.0 - d);
        s += d * d;
    }
    return std::sqrt(s);
}

double FourierMode::eigenvalue_factor() const {
    double s = 0.0;
    for (int kj : k) s += static_cast<double>(kj) * kj;
    return 4.0 * std::numbers::pi * std::numbers::pi * s;
}

double FourierMode::dot(const TorusPoint& x) const {
    if (x.dim() != k.size()) throw std::invalid_argument("FourierMode::dot: dimension mismatch");
    double s = 0.0;
    for (std::size_t j = 0; j < k.size(); ++j) s += k[j] * x[j];
    return s;
}

TorusPoint torus_origin(std::size_t d) { return TorusPoint(std::vector<double>(d, 0.0)); }

}  // namespace dflab
