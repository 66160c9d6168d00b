#pragma once

#include "genrank/cost.hpp"
#include "genrank/model.hpp"

#include <string>
#include <vector>

namespace genrank {

struct BenchVariant {
    std::string name;
    OrganizationKind organization;
    BiasMode bias_mode;
};

struct VariantTiming {
    BenchVariant variant;
    CostReport cost;
    double median_ms = 0.0;
    double p99_ms = 0.0;
    double mean_ms = 0.0;
};

struct BenchReport {
    int n = 0, c = 0, batch = 0, reps = 0;
    std::vector<VariantTiming> variants;       // [0] is the baseline
    std::vector<double> speedup_pct;           // vs baseline, per variant
    std::vector<std::string> warnings;
    std::string to_json() const;
    std::string to_markdown() const;
};

// The four organization x bias variants, baseline first.
std::vector<BenchVariant> table_variants();

// Reported alongside measurements for context; never asserted.
double reference_speedup_pct(const std::string& variant_name);

// Interleaved-repetition forward+backward timing of the four variants on one
// synthetic workload. Cost reports are exact; wall times machine-relative.
BenchReport bench_compare(const ModelConfig& base_config, int n, int c, int batch, int reps,
                          std::uint64_t seed);

}  // namespace genrank
