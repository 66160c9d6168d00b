#pragma once

#include "genrank/model.hpp"

#include <string>
#include <vector>

namespace genrank {

struct ProbeResult {
    std::string name;
    bool pass = false;
    double max_violation = 0.0;
    std::string detail;
};

std::vector<std::string> probe_names();

// Executes one named invariant probe on randomized, seeded inputs against the
// checkpoint's parameters. Unknown names raise ConfigError.
ProbeResult run_probe(const std::string& name, const LoadedCheckpoint& ckpt, std::uint64_t seed);

// Analytic vs. central-difference gradients (fp64, h = 1e-5) on a 2-block,
// dim-16, 2-head model; returns the max relative error over all parameter
// tensors.
double gradcheck_max_rel_error(BiasMode bias_mode, std::uint64_t seed);

}  // namespace genrank
