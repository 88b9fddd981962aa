#pragma once

#include <string>
#include <vector>

namespace dier {

struct SuiteResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

// Built-in verification suites: autodiff grad checks, schedule moment
// checks, sampler roundtrips, IDX roundtrip.
std::vector<SuiteResult> run_selfcheck(std::uint64_t seed, const std::string& scratch_dir);

}  // namespace dier
