#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace cmla {

struct SuiteResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

struct SelftestOptions {
    /// Debug hook: zero the analytic gradient at this flat parameter index in
    /// the grad_check suite.
    std::optional<std::size_t> sabotage_grad_index;
};

/// Oracle suites: OT against a grid search, Sinkhorn marginals, metrics
/// against a brute-force reference, gradient checks, NCLR invariants and
/// scalar/SIMD agreement. Each suite runs even if an earlier one failed.
std::vector<SuiteResult> run_selftest(const SelftestOptions& options = {});

}  // namespace cmla
