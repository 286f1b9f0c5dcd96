// Self-verification suite run by the `verify` tool verb: gradient checks for
// every op and for the whole network, optics identities, metric hand values,
// fusion reductions, and a checkpoint round trip. Each check reports its own
// wall time. A deliberately corrupted adjoint acts as a negative control for
// the gradient checker itself.
#pragma once

#include <string>
#include <vector>

namespace fsd {

struct CheckResult {
    std::string name;
    bool pass = false;
    double seconds = 0.0;
    std::string detail;
};

// quick skips the whole-network gradient check, the slowest entry.
std::vector<CheckResult> run_verification(bool quick = false);

// Prints one line per result and returns the number of failures.
int report_verification(const std::vector<CheckResult>& results);

} // namespace fsd
