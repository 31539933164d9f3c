#pragma once

#include <cstddef>
#include <vector>

namespace dflab {

// Pairwise (cascade) summation: the reduction tree depends only on n, so
// totals are independent of how work was split across workers.
double pairwise_sum(const double* p, std::size_t n);
double pairwise_sum(const std::vector<double>& xs);

struct MonteCarloStat {
    double mean = 0.0;
    double se = 0.0;  // standard error of the mean
    std::size_t n = 0;
};

MonteCarloStat mc_stat(const std::vector<double>& xs);

struct VarianceStat {
    double var = 0.0;
    double se = 0.0;  // asymptotic standard error of the sample variance
};

VarianceStat variance_stat(const std::vector<double>& xs);

}  // namespace dflab
