#pragma once

#include <string>
#include <vector>

#include "ivrl/harness.hpp"

namespace ivrl::selftest {

struct CriterionResult {
    int id = 0;
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

struct Options {
    std::string scratch_dir;  // artifacts of the figure/determinism checks
    int figure_n = 200;
    int figure_t = 100;
    int figure_seeds = 5;
    bool skip_slow = false;  // drop the two benchmark-scale criteria (CLI convenience)
};

CriterionResult simplex_identities();
CriterionResult identification_suite();
CriterionResult kidney_compliance();
CriterionResult inner_max_closed_form();
CriterionResult mle_rate();
CriterionResult weak_duality();
CriterionResult pessimism_validity();
CriterionResult empirical_rate();
CriterionResult figure_reproduction(const Options& opt);
CriterionResult benchmark_determinism(const Options& opt);

std::vector<CriterionResult> run_all(const Options& opt);

// prints one pass/fail line per criterion; returns the failure count
int report(const std::vector<CriterionResult>& results);

}  // namespace ivrl::selftest
