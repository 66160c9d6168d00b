#pragma once

#include "genrank/model.hpp"
#include "genrank/seqbuild.hpp"

namespace genrank {

// Exact closed-form counts; pure integer arithmetic, identical on every
// platform.
struct CostReport {
    long long attention_flops = 0;   // blocks * 2 L^2 d   (QK^T and AV)
    long long projection_flops = 0;  // blocks * 4 L d^2   (Q, K, V, O)
    long long ffn_flops = 0;         // blocks * 2 L d f
    long long bias_io_elements = 0;  // heads * L^2 for learnable-relative, 0 otherwise
    long long param_count = 0;
};

long long sequence_length(OrganizationKind org, long long n, long long c);

CostReport count_cost(const ModelConfig& cfg, long long n, long long c, OrganizationKind org);

}  // namespace genrank
