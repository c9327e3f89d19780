#pragma once

#include <string>
#include <vector>

namespace dlcfm {

struct CheckItem {
    std::string name;
    bool pass = false;
    double measured = 0.0;
    double threshold = 0.0;
    std::string detail;
};

// Fast numerical health checks: gradient fidelity, KL vs Monte Carlo,
// correlation calibration, Sinkhorn vs brute force, solver orders, path
// consistency, Adam. `inject_fault` names a check whose measured quantity
// is deliberately corrupted, for testing the harness itself.
std::vector<CheckItem> run_selfcheck(const std::string& inject_fault = "");

}  // namespace dlcfm
