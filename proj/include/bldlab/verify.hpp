#pragma once

#include <string>
#include <vector>

namespace bldlab {

struct VerifyCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

// Self-contained identity and gradient suites: no dataset or checkpoint
// needed. Each check reports one pass/fail line worth of detail.
std::vector<VerifyCheck> run_verify_suites();

}  // namespace bldlab
