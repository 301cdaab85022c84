#pragma once

#include <vector>

#include "idrt/gradcheck.hpp"

namespace idrt {

// Finite-difference checks for every layer type: plain and mapping-aware
// convolutions (including gradients through the weight vector), linear
// layers, activations, and all three loss terms. Shared by the `gradcheck`
// CLI subcommand and the test suites.
std::vector<GradCheckReport> run_gradcheck_suite(uint64_t seed = 11);

}  // namespace idrt
