#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "maunet/gradcheck.hpp"

namespace maunet {

// Named gradient checks over seeded inputs, one per differentiable kernel and
// attention block plus the assembled model (depth 1). Shared by the CLI
// `gradcheck` subcommand and the acceptance suite.
struct BlockCheck {
    std::string name;
    double tol = 1e-4;
    GradCheckReport report;
};

// All registered check names, kernels first.
std::vector<std::string> gradcheck_names();

// Runs one named check. Throws UsageError for unknown names.
BlockCheck run_gradcheck(const std::string& name, std::uint64_t seed);

// Runs every registered check.
std::vector<BlockCheck> run_all_gradchecks(std::uint64_t seed);

}  // namespace maunet
