#pragma once

#include <vector>

namespace dflab {

// Point on the unit flat torus, one coordinate per dimension, each in [0,1).
struct TorusPoint {
    std::vector<double> c;

    TorusPoint() = default;
    explicit TorusPoint(std::vector<double> coords) : c(std::move(coords)) {}
    std::size_t dim() const { return c.size(); }
    double operator[](std::size_t j) const { return c[j]; }
    double& operator[](std::size_t j) { return c[j]; }
    bool operator==(const TorusPoint&) const = default;
};

// Integer frequency vector k; the Laplacian eigenvalue of x -> cos(2 pi k.x)
// is -4 pi^2 |k|^2.
struct FourierMode {
    std::vector<int> k;

    explicit FourierMode(std::vector<int> freq) : k(std::move(freq)) {}
    std::size_t dim() const { return k.size(); }
    double eigenvalue_factor() const;  // 4 pi^2 sum_j k_j^2
    double dot(const TorusPoint& x) const;
};

// Componentwise reduction of R^d to [0,1)^d. Rejects non-finite input.
TorusPoint wrap(const std::vector<double>& y);
double wrap1(double y);

// Length of the shortest representative of x - y; never exceeds sqrt(d)/2.
double torus_distance(const TorusPoint& x, const TorusPoint& y);

TorusPoint torus_origin(std::size_t d);

}  // namespace dflab
