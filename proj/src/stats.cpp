#include "dflab/stats.hpp"

#include <cmath>
#include <stdexcept>

namespace dflab {

double pairwise_sum(const double* p, std::size_t n) {
    if (n == 0) return 0.0;
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += p[i];
        return s;
    }
    std::size_t half = n / 2;
    return pairwise_sum(p, half) + pairwise_sum(p + half, n - half);
}

double pairwise_sum(const std::vector<double>& xs) { return pairwise_sum(xs.data(), xs.size()); }

MonteCarloStat mc_stat(const std::vector<double>& xs) {
    MonteCarloStat st;
    st.n = xs.size();
    if (st.n == 0) return st;
    st.mean = pairwise_sum(xs) / static_cast<double>(st.n);
    if (st.n == 1) return st;
    std::vector<double> dev2(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double d = xs[i] - st.mean;
        dev2[i] = d * d;
    }
    double s2 = pairwise_sum(dev2) / static_cast<double>(st.n - 1);
    st.se = std::sqrt(s2 / static_cast<double>(st.n));
    return st;
}

VarianceStat variance_stat(const std::vector<double>& xs) {
    if (xs.size() < 2) throw std::invalid_argument("variance_stat: need at least 2 samples");
    std::size_t n = xs.size();
    double mean = pairwise_sum(xs) / static_cast<double>(n);
    std::vector<double> d2(n), d4(n);
    for (std::size_t i = 0; i < n; ++i) {
        double d = xs[i] - mean;
        d2[i] = d * d;
        d4[i] = d2[i] * d2[i];
    }
    double m2 = pairwise_sum(d2) / static_cast<double>(n);
    double m4 = pairwise_sum(d4) / static_cast<double>(n);
    VarianceStat vs;
    vs.var = m2 * static_cast<double>(n) / static_cast<double>(n - 1);
    double asy = m4 - m2 * m2;
    vs.se = asy > 0.0 ? std::sqrt(asy / static_cast<double>(n)) : 0.0;
    return vs;
}

}  // namespace dflab
