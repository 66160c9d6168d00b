#include "genrank/cost.hpp"

namespace genrank {

long long sequence_length(OrganizationKind org, long long n, long long c) {
    return org == OrganizationKind::kActionOriented ? n + c : 2 * n + c;
}

CostReport count_cost(const ModelConfig& cfg, long long n, long long c, OrganizationKind org) {
    const long long L = sequence_length(org, n, c);
    const long long d = cfg.hidden_dim;
    const long long f = cfg.ffn_dim();
    const long long blocks = cfg.num_blocks;
    CostReport r;
    r.attention_flops = blocks * 2 * L * L * d;
    r.projection_flops = blocks * 4 * L * d * d;
    r.ffn_flops = blocks * 2 * L * d * f;
    r.bias_io_elements =
        cfg.bias_mode == BiasMode::kLearnableRelative ? static_cast<long long>(cfg.num_heads) * L * L
                                                      : 0;
    r.param_count = param_count(cfg);
    return r;
}

}  // namespace genrank
