#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dflab {

struct CriterionOutcome {
    std::string name;
    bool pass = false;
    double seconds = 0.0;
    std::string detail;  // measured values, targets, tolerances
};

// Criteria in execution order; every name is a valid subset argument.
const std::vector<std::string>& acceptance_names();

// Runs one pinned-seed criterion; throws std::invalid_argument on an unknown
// name.
CriterionOutcome run_acceptance_criterion(const std::string& name);

// Runs the named criteria ("all", or empty, means every one) and prints one
// table row each. Returns 0 when all pass, 2 when any fails, 1 on an unknown
// name.
int acceptance_cli(const std::vector<std::string>& subset, std::ostream& out);

}  // namespace dflab
