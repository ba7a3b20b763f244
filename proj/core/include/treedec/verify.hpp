#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace treedec::verify {

struct Options {
    std::uint64_t seed = 12345;
    int grid = 1;              // case-count multiplier
    bool inject_fault = false; // negative control: perturbs and swaps one combiner
};

struct SuiteResult {
    std::string name;
    bool passed = false;
    int cases = 0;
    std::string detail; // failing case parameters, empty on success
};

// Runs every property suite (numeric identities, kernel equivalences,
// gradient identities, schedule equivalences, counter/formula equality, ...)
// deterministically from Options::seed.
std::vector<SuiteResult> run_all_suites(const Options& opts);

// Prints one pass/fail line per suite plus a summary; returns 0 iff all
// suites passed. Output is a pure function of `opts`.
int run_and_print(const Options& opts, std::ostream& os);

} // namespace treedec::verify
