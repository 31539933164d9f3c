#include "dflab/cylinder.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dflab {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

double mass_cutoff(double eps, double r) {
    if (!(eps > 0.0)) throw std::invalid_argument("mass_cutoff: eps must be positive");
    if (r <= eps) return 0.0;
    if (r >= 2.0 * eps) return 1.0;
    double t = (r - eps) / eps;
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
}

InnerFunction InnerFunction::smooth_mode(double eps, FourierMode k, double phase, double amp) {
    if (!(eps > 0.0)) throw std::invalid_argument("smooth_mode: eps must be positive");
    InnerFunction f(Kind::SmoothMode);
    f.eps_ = eps;
    f.k_ = std::move(k);
    f.phase_ = phase;
    f.amp_ = amp;
    return f;
}

InnerFunction InnerFunction::mass_only(double eps, double amp) {
    if (!(eps > 0.0)) throw std::invalid_argument("mass_only: eps must be positive");
    InnerFunction f(Kind::MassOnly);
    f.eps_ = eps;
    f.amp_ = amp;
    return f;
}

InnerFunction InnerFunction::linear_mass() { return InnerFunction(Kind::LinearMass); }

double InnerFunction::eval(double r, const TorusPoint& x) const {
    switch (kind_) {
        case Kind::SmoothMode:
            return amp_ * mass_cutoff(eps_, r) * std::cos(kTwoPi * k_.dot(x) + phase_);
        case Kind::MassOnly:
            return amp_ * mass_cutoff(eps_, r);
        case Kind::LinearMass:
            return r;
    }
    return 0.0;
}

std::vector<double> InnerFunction::grad_x(double r, const TorusPoint& x) const {
    std::vector<double> g(x.dim(), 0.0);
    if (kind_ == Kind::SmoothMode) {
        double chi = mass_cutoff(eps_, r);
        if (chi != 0.0) {
            double s = -amp_ * chi * kTwoPi * std::sin(kTwoPi * k_.dot(x) + phase_);
            for (std::size_t j = 0; j < x.dim(); ++j) g[j] = s * k_.k[j];
        }
    }
    return g;
}

double InnerFunction::lap_x(double r, const TorusPoint& x) const {
    if (kind_ != Kind::SmoothMode) return 0.0;
    return -k_.eigenvalue_factor() * eval(r, x);
}

OuterFunction OuterFunction::linear(std::vector<double> a, double c) {
    OuterFunction f;
    f.kind_ = Kind::Quadratic;
    f.a_ = std::move(a);
    f.c_ = c;
    return f;
}

OuterFunction OuterFunction::quadratic(std::vector<double> a, std::vector<std::vector<double>> q,
                                       double c) {
    OuterFunction f;
    f.kind_ = Kind::Quadratic;
    f.c_ = c;
    std::size_t m = a.size();
    if (q.size() != m) throw std::invalid_argument("quadratic: Q/a size mismatch");
    for (auto& row : q)
        if (row.size() != m) throw std::invalid_argument("quadratic: Q not square");
    // symmetrize so the Hessian is well defined
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) {
            double s = 0.5 * (q[i][j] + q[j][i]);
            q[i][j] = q[j][i] = s;
        }
    f.a_ = std::move(a);
    f.q_ = std::move(q);
    return f;
}

OuterFunction OuterFunction::expo(std::vector<double> a, double amp) {
    OuterFunction f;
    f.kind_ = Kind::Exp;
    f.a_ = std::move(a);
    f.amp_ = amp;
    return f;
}

double OuterFunction::eval(const std::vector<double>& y) const {
    if (y.size() != a_.size()) throw std::invalid_argument("OuterFunction: arity mismatch");
    double ay = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) ay += a_[i] * y[i];
    if (kind_ == Kind::Exp) return amp_ * std::exp(ay);
    double v = c_ + ay;
    if (!q_.empty()) {
        double qf = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i)
            for (std::size_t j = 0; j < y.size(); ++j) qf += y[i] * q_[i][j] * y[j];
        v += 0.5 * qf;
    }
    return v;
}

std::vector<double> OuterFunction::grad(const std::vector<double>& y) const {
    if (y.size() != a_.size()) throw std::invalid_argument("OuterFunction: arity mismatch");
    std::vector<double> g(a_);
    if (kind_ == Kind::Exp) {
        double v = eval(y);
        for (auto& gi : g) gi *= v;
        return g;
    }
    if (!q_.empty())
        for (std::size_t i = 0; i < y.size(); ++i)
            for (std::size_t j = 0; j < y.size(); ++j) g[i] += q_[i][j] * y[j];
    return g;
}

std::vector<std::vector<double>> OuterFunction::hessian(const std::vector<double>& y) const {
    std::size_t m = a_.size();
    std::vector<std::vector<double>> h(m, std::vector<double>(m, 0.0));
    if (kind_ == Kind::Exp) {
        double v = eval(y);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) h[i][j] = a_[i] * a_[j] * v;
        return h;
    }
    if (!q_.empty()) h = q_;
    return h;
}

CylinderFunction::CylinderFunction(OuterFunction outer, std::vector<InnerFunction> inner)
    : outer_(std::move(outer)), inner_(std::move(inner)) {
    if (inner_.size() != outer_.arity())
        throw std::invalid_argument("CylinderFunction: inner count must match outer arity");
    if (inner_.empty()) throw std::invalid_argument("CylinderFunction: no inner functions");
    threshold_ = inner_[0].support_threshold();
    for (const auto& f : inner_) threshold_ = std::min(threshold_, f.support_threshold());
}

void CylinderFunction::check_compat(const AtomicMeasure& mu) const {
    if (mu.weights.tail > 0.0 && threshold_ <= mu.weights.tail)
        throw std::invalid_argument(
            "CylinderFunction: support threshold below the measure's tail resolution");
}

std::vector<double> CylinderFunction::hat_star(const AtomicMeasure& mu) const {
    check_compat(mu);
    std::vector<double> y(inner_.size(), 0.0);
    for (std::size_t l = 0; l < inner_.size(); ++l) {
        double th = inner_[l].support_threshold();
        double acc = 0.0;
        for (std::size_t i = 0; i < mu.size(); ++i) {
            double s = mu.weights.w[i];
            if (th > 0.0 && s <= th) break;  // ranked: the rest vanish too
            acc += s * inner_[l].eval(s, mu.atoms[i]);
        }
        y[l] = acc;
    }
    return y;
}

double CylinderFunction::evaluate(const AtomicMeasure& mu) const { return outer_.eval(hat_star(mu)); }

std::vector<double> CylinderFunction::intrinsic_gradient(const AtomicMeasure& mu,
                                                         std::size_t i) const {
    if (i >= mu.size()) throw std::out_of_range("intrinsic_gradient: atom index");
    std::vector<double> g = outer_.grad(hat_star(mu));
    std::vector<double> out(mu.dim(), 0.0);
    double s = mu.weights.w[i];
    for (std::size_t l = 0; l < inner_.size(); ++l) {
        auto gl = inner_[l].grad_x(s, mu.atoms[i]);
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += g[l] * gl[j];
    }
    return out;
}

double CylinderFunction::generator(const AtomicMeasure& mu) const {
    if (!(threshold_ > 0.0))
        throw std::invalid_argument("generator: support threshold must be strictly positive");
    check_compat(mu);
    std::vector<double> y = hat_star(mu);
    std::vector<double> g = outer_.grad(y);
    auto h = outer_.hessian(y);
    std::size_t m = inner_.size();
    double acc = 0.0;
    std::vector<std::vector<double>> grads(m);
    for (std::size_t i = 0; i < mu.size(); ++i) {
        double s = mu.weights.w[i];
        if (s <= threshold_) break;  // ranked: nothing below contributes
        for (std::size_t l = 0; l < m; ++l) {
            acc += g[l] * inner_[l].lap_x(s, mu.atoms[i]);
            grads[l] = inner_[l].grad_x(s, mu.atoms[i]);
        }
        for (std::size_t l = 0; l < m; ++l)
            for (std::size_t q = 0; q < m; ++q) {
                double dot = 0.0;
                for (std::size_t j = 0; j < grads[l].size(); ++j) dot += grads[l][j] * grads[q][j];
                acc += s * h[l][q] * dot;
            }
    }
    return acc;
}

double CylinderFunction::pre_cheeger(const AtomicMeasure& mu) const {
    check_compat(mu);
    std::vector<double> g = outer_.grad(hat_star(mu));
    double acc = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        double s = mu.weights.w[i];
        if (s <= threshold_) break;
        std::vector<double> gi(mu.dim(), 0.0);
        for (std::size_t l = 0; l < inner_.size(); ++l) {
            auto gl = inner_[l].grad_x(s, mu.atoms[i]);
            for (std::size_t j = 0; j < gi.size(); ++j) gi[j] += g[l] * gl[j];
        }
        double nrm2 = 0.0;
        for (double v : gi) nrm2 += v * v;
        acc += s * nrm2;
    }
    return acc;
}

MonteCarloStat dirichlet_form_mc(const CylinderFunction& u, const CylinderFunction& v,
                                 std::size_t n, std::size_t d, RNGStream rng, double mass_tol) {
    if (n < 100) throw std::invalid_argument("dirichlet_form_mc: need at least 100 samples");
    std::vector<double> vals(n);
    for (std::size_t j = 0; j < n; ++j) {
        AtomicMeasure mu = sample_dirichlet_ferguson(rng, d, mass_tol);
        double acc = 0.0;
        for (std::size_t i = 0; i < mu.size(); ++i) {
            auto gu = u.intrinsic_gradient(mu, i);
            auto gv = v.intrinsic_gradient(mu, i);
            double dot = 0.0;
            for (std::size_t jj = 0; jj < gu.size(); ++jj) dot += gu[jj] * gv[jj];
            acc += mu.weights.w[i] * dot;
        }
        vals[j] = acc;
    }
    return mc_stat(vals);
}

MonteCarloStat ibp_residual(const CylinderFunction& u, const CylinderFunction& v, std::size_t n,
                            std::size_t d, RNGStream rng, double mass_tol) {
    if (n < 100) throw std::invalid_argument("ibp_residual: need at least 100 samples");
    std::vector<double> vals(n);
    for (std::size_t j = 0; j < n; ++j) {
        AtomicMeasure mu = sample_dirichlet_ferguson(rng, d, mass_tol);
        double energy = 0.0;
        for (std::size_t i = 0; i < mu.size(); ++i) {
            auto gu = u.intrinsic_gradient(mu, i);
            auto gv = v.intrinsic_gradient(mu, i);
            double dot = 0.0;
            for (std::size_t jj = 0; jj < gu.size(); ++jj) dot += gu[jj] * gv[jj];
            energy += mu.weights.w[i] * dot;
        }
        vals[j] = energy + u.evaluate(mu) * v.generator(mu);
    }
    return mc_stat(vals);
}

}  // namespace dflab
