#include "dflab/measures.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace dflab {

void WeightSequence::validate() const {
    if (w.empty()) throw std::invalid_argument("WeightSequence: no stored weights");
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (!(w[i] > 0.0 && w[i] <= 1.0))
            throw std::invalid_argument("WeightSequence: weight outside (0,1]");
        if (i > 0 && !(w[i] < w[i - 1]))
            throw std::invalid_argument("WeightSequence: weights not strictly decreasing");
    }
    if (tail < 0.0) throw std::invalid_argument("WeightSequence: negative tail");
    double total = pairwise_sum(w) + tail;
    if (std::fabs(total - 1.0) > 1e-12)
        throw std::invalid_argument("WeightSequence: mass does not sum to 1");
    if (!(tail < w.back()))
        throw std::invalid_argument("WeightSequence: tail not below last stored weight");
}

double WeightSequence::mass_below(double eps) const {
    double s = tail;
    for (std::size_t i = w.size(); i-- > 0;) {
        if (w[i] < eps) s += w[i];
        else break;  // ranked, so everything earlier is >= eps too
    }
    return s;
}

std::vector<double> sample_gem_from(const std::function<double()>& uniform_draw,
                                    double mass_tol) {
    if (!(mass_tol > 0.0 && mass_tol < 1.0))
        throw std::invalid_argument("sample_gem: mass_tol must lie in (0,1)");
    std::vector<double> w;
    double remainder = 1.0;
    while (remainder >= mass_tol) {
        double y = uniform_draw();
        w.push_back(y * remainder);
        remainder *= (1.0 - y);
    }
    return w;
}

std::vector<double> sample_gem(RNGStream& rng, double mass_tol) {
    return sample_gem_from([&rng] { return rng.uniform01(); }, mass_tol);
}

WeightSequence reorder(std::vector<double> raw) {
    if (raw.empty()) throw std::invalid_argument("reorder: empty weight list");
    for (double v : raw)
        if (!(v >= 0.0)) throw std::invalid_argument("reorder: negative weight");
    std::stable_sort(raw.begin(), raw.end(), std::greater<double>());
    WeightSequence s;
    s.w = std::move(raw);
    s.tail = std::max(0.0, 1.0 - pairwise_sum(s.w));
    // Weights not exceeding the unresolved remainder cannot be ranked against
    // it; fold them in until the last stored weight dominates the tail.
    while (!s.w.empty() && s.w.back() <= s.tail) {
        s.tail += s.w.back();
        s.w.pop_back();
    }
    if (s.w.empty()) throw std::invalid_argument("reorder: all mass below the tail threshold");
    return s;
}

WeightSequence sample_weights(RNGStream& rng, double mass_tol) {
    return reorder(sample_gem(rng, mass_tol));
}

std::size_t truncation_index(double eps, const WeightSequence& s) {
    if (!(eps > s.tail))
        throw std::invalid_argument("truncation_index: eps does not exceed the tail threshold");
    std::size_t n = 0;
    while (n < s.w.size() && s.w[n] >= eps) ++n;
    return n;
}

void AtomicMeasure::validate() const {
    weights.validate();
    if (atoms.size() != weights.size())
        throw std::invalid_argument("AtomicMeasure: atom/weight count mismatch");
    std::size_t d = dim();
    for (const auto& a : atoms)
        if (a.dim() != d) throw std::invalid_argument("AtomicMeasure: mixed dimensions");
    for (std::size_t i = 0; i < atoms.size(); ++i)
        for (std::size_t j = i + 1; j < atoms.size(); ++j)
            if (atoms[i].c == atoms[j].c)
                throw std::invalid_argument("AtomicMeasure: atoms not pairwise distinct");
}

double AtomicMeasure::mass_at(const TorusPoint& x) const {
    for (std::size_t i = 0; i < atoms.size(); ++i)
        if (atoms[i].c == x.c) return weights.w[i];
    return 0.0;
}

AtomicMeasure sample_dirichlet_ferguson(RNGStream& rng, std::size_t d, double mass_tol) {
    if (d == 0) throw std::invalid_argument("sample_dirichlet_ferguson: d must be positive");
    AtomicMeasure mu;
    mu.weights = sample_weights(rng, mass_tol);
    mu.atoms.reserve(mu.weights.size());
    for (std::size_t i = 0; i < mu.weights.size(); ++i) {
        std::vector<double> p(d);
        for (std::size_t j = 0; j < d; ++j) p[j] = rng.uniform01();
        mu.atoms.emplace_back(std::move(p));
    }
    return mu;
}

std::vector<TorusPoint> complete_positions(const std::vector<TorusPoint>& x, std::size_t extra) {
    if (x.empty()) throw std::invalid_argument("complete_positions: need at least one position");
    std::vector<TorusPoint> out;
    if (extra == 0) return out;
    double min_dist = 0.0;
    bool any_distinct = false;
    for (std::size_t i = 1; i < x.size(); ++i) {
        double d = torus_distance(x[0], x[i]);
        if (d > 0.0) {
            min_dist = any_distinct ? std::min(min_dist, d) : d;
            any_distinct = true;
        }
    }
    double rho = any_distinct ? min_dist / 3.0 : 1.0;
    std::size_t n = x.size();
    out.reserve(extra);
    for (std::size_t j = n + 1; j <= n + extra; ++j) {
        std::vector<double> p = x[0].c;
        p[0] += std::ldexp(rho, -static_cast<int>(j));
        out.push_back(wrap(p));
    }
    return out;
}

AtomicMeasure em_N(const WeightSequence& s, const std::vector<TorusPoint>& x) {
    if (x.empty()) throw std::invalid_argument("em_N: need at least one position");
    if (x.size() > s.size())
        throw std::invalid_argument("em_N: more positions than stored weights");
    AtomicMeasure mu;
    mu.weights = s;
    mu.atoms = x;
    auto completed = complete_positions(x, s.size() - x.size());
    mu.atoms.insert(mu.atoms.end(), completed.begin(), completed.end());
    return mu;
}

AtomicMeasure make_measure(std::vector<double> weights, std::vector<TorusPoint> atoms,
                           double tail) {
    if (weights.size() != atoms.size())
        throw std::invalid_argument("make_measure: weight/atom count mismatch");
    // Merge exact duplicates, then rank by mass (stable: ties keep order).
    std::vector<std::size_t> idx(weights.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<bool> dead(weights.size(), false);
    for (std::size_t i = 0; i < atoms.size(); ++i) {
        if (dead[i]) continue;
        for (std::size_t j = i + 1; j < atoms.size(); ++j) {
            if (!dead[j] && atoms[i].c == atoms[j].c) {
                weights[i] += weights[j];
                dead[j] = true;
            }
        }
    }
    std::vector<std::pair<double, TorusPoint>> pairs;
    for (std::size_t i = 0; i < weights.size(); ++i)
        if (!dead[i] && weights[i] > 0.0) pairs.emplace_back(weights[i], atoms[i]);
    std::stable_sort(pairs.begin(), pairs.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    AtomicMeasure mu;
    mu.weights.tail = tail;
    while (!pairs.empty() && pairs.back().first <= mu.weights.tail) {
        mu.weights.tail += pairs.back().first;
        pairs.pop_back();
    }
    if (pairs.empty()) throw std::invalid_argument("make_measure: all mass below the tail");
    for (auto& pr : pairs) {
        mu.weights.w.push_back(pr.first);
        mu.atoms.push_back(std::move(pr.second));
    }
    return mu;
}

AtomicMeasure convex_with_dirac(const AtomicMeasure& mu, const TorusPoint& x, double r) {
    if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("convex_with_dirac: r outside [0,1]");
    std::vector<double> w;
    std::vector<TorusPoint> a;
    w.reserve(mu.size() + 1);
    a.reserve(mu.size() + 1);
    for (std::size_t i = 0; i < mu.size(); ++i) {
        w.push_back((1.0 - r) * mu.weights.w[i]);
        a.push_back(mu.atoms[i]);
    }
    w.push_back(r);
    a.push_back(x);
    return make_measure(std::move(w), std::move(a), (1.0 - r) * mu.weights.tail);
}

AtomicMeasure conditional_truncate(const AtomicMeasure& mu, double eps) {
    std::size_t n = 0;
    while (n < mu.size() && mu.weights.w[n] > eps) ++n;
    if (n == 0) {
        AtomicMeasure dirac;
        dirac.weights.w = {1.0};
        dirac.weights.tail = 0.0;
        dirac.atoms = {torus_origin(std::max<std::size_t>(mu.dim(), 1))};
        return dirac;
    }
    double kept = pairwise_sum(mu.weights.w.data(), n);
    AtomicMeasure out;
    out.weights.w.reserve(n);
    out.atoms.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.weights.w.push_back(mu.weights.w[i] / kept);
        out.atoms.push_back(mu.atoms[i]);
    }
    out.weights.tail = 0.0;
    return out;
}

double tv_tail_bound(const AtomicMeasure& mu, double eps) {
    double dropped = mu.weights.tail;
    for (std::size_t i = mu.size(); i-- > 0;) {
        if (mu.weights.w[i] <= eps) dropped += mu.weights.w[i];
        else break;
    }
    return 4.0 * dropped;
}

double total_variation(const AtomicMeasure& a, const AtomicMeasure& b) {
    std::map<std::vector<double>, double> diff;
    for (std::size_t i = 0; i < a.size(); ++i) diff[a.atoms[i].c] += a.weights.w[i];
    for (std::size_t i = 0; i < b.size(); ++i) diff[b.atoms[i].c] -= b.weights.w[i];
    double tv = a.weights.tail + b.weights.tail;
    for (const auto& [pos, d] : diff) tv += std::fabs(d);
    return tv;
}

SizeBiasedPick size_biased_pick(RNGStream& rng, const WeightSequence& s) {
    double u = rng.uniform01();
    double cum = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        cum += s.w[i];
        if (u < cum) return {i, s.w[i], false};
    }
    // Landed in the tail: break the remainder until the target is covered.
    double remainder = s.tail;
    std::size_t ext = 0;
    while (ext < 512) {
        double y = rng.uniform01();
        double piece = y * remainder;
        if (u < cum + piece || remainder <= 0.0) return {s.size() + ext, piece, true};
        cum += piece;
        remainder -= piece;
        ++ext;
    }
    return {s.size() + ext, remainder, true};
}

double MeckeResult::combined_se() const {
    return std::sqrt(lhs.se * lhs.se + rhs.se * rhs.se);
}

MeckeResult mecke_check(const MeckeFunctional& u, std::size_t n, std::size_t d,
                        RNGStream lhs_rng, RNGStream rhs_rng, double mass_tol) {
    if (n < 100) throw std::invalid_argument("mecke_check: need at least 100 samples");
    if (d == 0) throw std::invalid_argument("mecke_check: d must be positive");
    std::vector<double> lhs_vals(n), rhs_vals(n);
    for (std::size_t j = 0; j < n; ++j) {
        AtomicMeasure mu = sample_dirichlet_ferguson(lhs_rng, d, mass_tol);
        double v = 0.0;
        for (std::size_t i = 0; i < mu.size(); ++i)
            v += mu.weights.w[i] * u(mu, mu.atoms[i], mu.weights.w[i]);
        lhs_vals[j] = v;
    }
    for (std::size_t j = 0; j < n; ++j) {
        AtomicMeasure mu = sample_dirichlet_ferguson(rhs_rng, d, mass_tol);
        std::vector<double> p(d);
        for (std::size_t jj = 0; jj < d; ++jj) p[jj] = rhs_rng.uniform01();
        TorusPoint x(std::move(p));
        double r = rhs_rng.uniform01();
        AtomicMeasure nu = convex_with_dirac(mu, x, r);
        rhs_vals[j] = u(nu, x, r);
    }
    MeckeResult res;
    res.lhs = mc_stat(lhs_vals);
    res.rhs = mc_stat(rhs_vals);
    return res;
}

}  // namespace dflab
