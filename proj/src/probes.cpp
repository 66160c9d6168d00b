#include "genrank/probes.hpp"

#include "genrank/kv_cache.hpp"
#include "genrank/network.hpp"
#include "genrank/randomseq.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace genrank {

std::vector<std::string> probe_names() {
    return {"causality",   "candidate-isolation", "label-leakage", "kv-equivalence",
            "gradcheck",   "alibi-monotone",      "length-law"};
}

namespace {

template <class S>
TokenizedSequence random_serving_sequence(const ModelConfig& cfg, int n, int c,
                                          std::mt19937_64& rng) {
    auto history = synthetic_history(n, cfg.item_vocab, cfg.tasks, rng);
    auto candidates = synthetic_candidates(c, cfg.item_vocab, rng);
    const std::int64_t now = history.empty() ? 1600000000 : history.back().ts + 120;
    BuildOptions opts;
    opts.max_len = cfg.max_len;
    return build_sequence(history, candidates, now, OrganizationKind::kActionOriented, cfg.tasks,
                          opts);
}

template <class S>
ProbeResult probe_causality(const ModelConfig& cfg, const ModelParams<S>& params,
                            std::uint64_t seed) {
    auto rng = make_rng(seed, 0xCA05);
    ProbeResult res{"causality", true, 0.0, ""};
    for (int trial = 0; trial < 4; ++trial) {
        auto history = synthetic_history(16, cfg.item_vocab, cfg.tasks, rng);
        auto candidates = synthetic_candidates(4, cfg.item_vocab, rng);
        BuildOptions opts;
        opts.max_len = cfg.max_len;
        const auto org = trial % 2 == 0 ? OrganizationKind::kActionOriented
                                        : OrganizationKind::kItemInterleaved;
        TokenizedSequence seq = build_sequence(history, candidates, history.back().ts + 60, org,
                                               cfg.tasks, opts);
        ForwardTrace<S> base_trace;
        forward<S>(cfg, params, seq, nullptr, &base_trace);
        for (int j = 0; j < seq.length(); ++j) {
            TokenizedSequence mut = seq;
            Token& tok = mut.tokens[static_cast<std::size_t>(j)];
            if (tok.item >= 0) {
                tok.item = (tok.item + 1) % cfg.item_vocab;
            } else {
                tok.action_bits ^= 1u;
            }
            ForwardTrace<S> mut_trace;
            forward<S>(cfg, params, mut, nullptr, &mut_trace);
            const int rows_unchanged_until = j;  // rows < j must be bit-identical
            for (int r = 0; r < rows_unchanged_until; ++r) {
                const double diff =
                    static_cast<double>((base_trace.z.row(r) - mut_trace.z.row(r))
                                            .template cast<double>()
                                            .cwiseAbs()
                                            .maxCoeff());
                res.max_violation = std::max(res.max_violation, diff);
            }
            if (j >= seq.history_tokens) {
                // perturbing one candidate must leave every other row unchanged
                for (int r = 0; r < seq.length(); ++r) {
                    if (r == j) continue;
                    const double diff =
                        static_cast<double>((base_trace.z.row(r) - mut_trace.z.row(r))
                                                .template cast<double>()
                                                .cwiseAbs()
                                                .maxCoeff());
                    res.max_violation = std::max(res.max_violation, diff);
                }
            }
        }
    }
    res.pass = res.max_violation == 0.0;
    res.detail = "max |delta hidden| over protected rows";
    return res;
}

template <class S>
ProbeResult probe_candidate_isolation(const ModelConfig& cfg, const ModelParams<S>& params,
                                      std::uint64_t seed) {
    auto rng = make_rng(seed, 0x150A);
    ProbeResult res{"candidate-isolation", true, 0.0, ""};
    const int c = std::min(32, std::max(1, cfg.max_len - 1));
    // keep the history inside the joint budget so solo and joint sequences see
    // the identical kept window
    const int n = std::max(1, std::min(40, cfg.max_len - c));
    auto history = synthetic_history(n, cfg.item_vocab, cfg.tasks, rng);
    auto candidates = synthetic_candidates(c, cfg.item_vocab, rng);
    const std::int64_t now = history.back().ts + 90;
    BuildOptions opts;
    opts.max_len = cfg.max_len;
    TokenizedSequence joint = build_sequence(history, candidates, now,
                                             OrganizationKind::kActionOriented, cfg.tasks, opts);
    MatX<S> joint_scores = forward<S>(cfg, params, joint, nullptr, nullptr);
    for (std::size_t j = 0; j < candidates.size(); ++j) {
        std::vector<std::int64_t> one{candidates[j]};
        TokenizedSequence solo = build_sequence(history, one, now,
                                                OrganizationKind::kActionOriented, cfg.tasks, opts);
        MatX<S> solo_scores = forward<S>(cfg, params, solo, nullptr, nullptr);
        const double diff = static_cast<double>(
            (joint_scores.row(static_cast<Eigen::Index>(j)) - solo_scores.row(0))
                .template cast<double>()
                .cwiseAbs()
                .maxCoeff());
        res.max_violation = std::max(res.max_violation, diff);
    }
    res.pass = res.max_violation == 0.0;
    res.detail = "max |joint - solo| over 32 candidates";
    return res;
}

template <class S>
ProbeResult probe_label_leakage(const ModelConfig& cfg, const ModelParams<S>& params,
                                std::uint64_t seed) {
    auto rng = make_rng(seed, 0x1EA4);
    ProbeResult res{"label-leakage", true, 0.0, ""};
    auto history = synthetic_history(24, cfg.item_vocab, cfg.tasks, rng);
    auto request = synthetic_history(6, cfg.item_vocab, cfg.tasks, rng);
    for (auto& log : request) {
        log.request_id = 1 << 20;
        log.ts = history.back().ts + 60;
    }
    BuildOptions opts;
    opts.max_len = cfg.max_len;
    TokenizedSequence seq = build_training_sequence(history, request,
                                                    OrganizationKind::kActionOriented, cfg.tasks,
                                                    opts);
    MatX<S> base = forward<S>(cfg, params, seq, nullptr, nullptr);
    TokenizedSequence flipped = seq;
    const std::uint32_t all = (cfg.num_tasks() >= 32) ? ~0u : ((1u << cfg.num_tasks()) - 1u);
    for (auto& bits : flipped.loss_labels) bits ^= all;
    MatX<S> after = forward<S>(cfg, params, flipped, nullptr, nullptr);
    res.max_violation =
        static_cast<double>((base - after).template cast<double>().cwiseAbs().maxCoeff());
    res.pass = res.max_violation == 0.0;
    res.detail = "max |delta score| after flipping all candidate labels";
    return res;
}

template <class S>
ProbeResult probe_kv_equivalence(const ModelConfig& cfg, const ModelParams<S>& params,
                                 std::uint64_t seed) {
    auto rng = make_rng(seed, 0x4BCE);
    ProbeResult res{"kv-equivalence", true, 0.0, ""};
    std::uniform_int_distribution<int> n_dist(0, 256);
    std::uniform_int_distribution<int> c_dist(1, 64);
    for (int trial = 0; trial < 100; ++trial) {
        int n = n_dist(rng);
        const int c = c_dist(rng);
        const int budget = std::max(0, cfg.max_len - c);
        n = std::min(n, budget);
        auto history = synthetic_history(n, cfg.item_vocab, cfg.tasks, rng);
        auto candidates = synthetic_candidates(c, cfg.item_vocab, rng);
        const std::int64_t now = history.empty() ? 1600000000 : history.back().ts + 45;
        BuildOptions opts;
        opts.max_len = cfg.max_len;
        TokenizedSequence seq = build_sequence(history, candidates, now,
                                               OrganizationKind::kActionOriented, cfg.tasks, opts);
        MatX<S> full = forward<S>(cfg, params, seq, nullptr, nullptr);
        KvCache<S> cache = build_kv_cache<S>(cfg, params, seq, nullptr);
        MatX<S> inc = score_incremental<S>(cfg, params, cache, seq, nullptr);
        const double diff =
            static_cast<double>((full - inc).template cast<double>().cwiseAbs().maxCoeff());
        res.max_violation = std::max(res.max_violation, diff);
    }
    const double tol = std::is_same_v<S, double> ? 0.0 : 1e-5;
    res.pass = res.max_violation <= tol;
    res.detail = "max |full - incremental| over 100 random histories";
    return res;
}

ProbeResult probe_alibi_monotone(const ModelConfig& cfg) {
    ProbeResult res{"alibi-monotone", true, 0.0, ""};
    const int max_dist = std::min(cfg.max_len, 256);
    for (int h = 0; h < cfg.num_heads; ++h) {
        for (int dist = 0; dist < max_dist; ++dist) {
            const double closer = alibi_bias(h, cfg.num_heads, dist, 0);
            const double farther = alibi_bias(h, cfg.num_heads, dist + 1, 0);
            // strictly decreasing in distance
            const double violation = farther - closer;
            if (violation >= 0.0) {
                res.max_violation = std::max(res.max_violation, violation + 1e-300);
            }
        }
    }
    res.pass = res.max_violation == 0.0;
    res.detail = "bias must strictly decrease with distance for every head";
    return res;
}

ProbeResult probe_length_law(const ModelConfig& cfg, std::uint64_t seed) {
    auto rng = make_rng(seed, 0x11A3);
    ProbeResult res{"length-law", true, 0.0, ""};
    std::uniform_int_distribution<int> n_dist(0, 480);
    std::uniform_int_distribution<int> c_dist(1, 64);
    long violations = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int n = n_dist(rng);
        const int c = c_dist(rng);
        auto history = synthetic_history(n, cfg.item_vocab, cfg.tasks, rng);
        auto candidates = synthetic_candidates(c, cfg.item_vocab, rng);
        const std::int64_t now = history.empty() ? 1600000000 : history.back().ts + 10;
        BuildOptions opts;
        opts.max_len = 2 * 480 + 64;  // no truncation in this probe
        TokenizedSequence ao = build_sequence(history, candidates, now,
                                              OrganizationKind::kActionOriented, cfg.tasks, opts);
        TokenizedSequence il = build_sequence(history, candidates, now,
                                              OrganizationKind::kItemInterleaved, cfg.tasks, opts);
        if (ao.length() != n + c) ++violations;
        if (il.length() != 2 * n + c) ++violations;
    }
    res.max_violation = static_cast<double>(violations);
    res.pass = violations == 0;
    res.detail = "L = N+C (action-oriented) and 2N+C (interleaved) over 100 random (N,C)";
    return res;
}

}  // namespace

double gradcheck_max_rel_error(BiasMode bias_mode, std::uint64_t seed) {
    ModelConfig cfg;
    cfg.num_blocks = 2;
    cfg.num_heads = 2;
    cfg.hidden_dim = 16;
    cfg.ffn_multiplier = 4.0;
    cfg.item_vocab = 23;
    cfg.max_len = 32;
    cfg.time_buckets = 32;
    cfg.side_dim = 3;
    cfg.bias_mode = bias_mode;
    cfg.precision = Precision::kFloat64;
    cfg.tasks = {"click", "engage"};

    ModelParams<double> params = make_params<double>(cfg);
    init_params(cfg, params, seed);
    auto rng = make_rng(seed, 0x94AD);
    std::normal_distribution<double> gauss(0.0, 0.2);
    for (Eigen::Index i = 0; i < params.head_w.size(); ++i) params.head_w.data()[i] = gauss(rng);
    for (Eigen::Index i = 0; i < params.head_b.size(); ++i) params.head_b.data()[i] = gauss(rng);
    if (params.relpos_bias.size() > 0) {
        for (Eigen::Index i = 0; i < params.relpos_bias.size(); ++i) {
            params.relpos_bias.data()[i] = 0.1 * gauss(rng);
        }
        for (Eigen::Index i = 0; i < params.reltime_bias.size(); ++i) {
            params.reltime_bias.data()[i] = 0.1 * gauss(rng);
        }
    }

    MatXd side(cfg.item_vocab, cfg.side_dim);
    for (Eigen::Index i = 0; i < side.size(); ++i) side.data()[i] = gauss(rng);

    auto history = synthetic_history(6, cfg.item_vocab, cfg.tasks, rng);
    auto request = synthetic_history(3, cfg.item_vocab, cfg.tasks, rng);
    for (auto& log : request) {
        log.request_id = 1 << 20;
        log.ts = history.back().ts + 300;
    }
    BuildOptions opts;
    opts.max_len = cfg.max_len;
    opts.history_loss_fraction = 0.5;  // cover the loss-at-history path
    opts.history_loss_seed = seed;
    TokenizedSequence seq = build_training_sequence(history, request,
                                                    OrganizationKind::kActionOriented, cfg.tasks,
                                                    opts);

    auto mean_loss = [&]() {
        MatXd scores = forward<double>(cfg, params, seq, &side, nullptr);
        BceSum<double> bce = bce_sum<double>(scores, seq);
        return bce.sum / static_cast<double>(bce.count);
    };

    ForwardTrace<double> trace;
    MatXd scores = forward<double>(cfg, params, seq, &side, &trace);
    BceSum<double> bce = bce_sum<double>(scores, seq);
    MatXd dscores = bce.dsum / static_cast<double>(bce.count);
    ModelParams<double> grads = make_params<double>(cfg);
    backward<double>(cfg, params, seq, &side, trace, dscores, grads);

    const double h = 1e-5;
    double max_rel = 0.0;
    auto prefs = tensor_refs(params);
    auto grefs = tensor_refs(grads);
    for (std::size_t t = 0; t < prefs.size(); ++t) {
        for (long i = 0; i < prefs[t].size; ++i) {
            const double orig = prefs[t].data[i];
            prefs[t].data[i] = orig + h;
            const double lp = mean_loss();
            prefs[t].data[i] = orig - h;
            const double lm = mean_loss();
            prefs[t].data[i] = orig;
            const double numeric = (lp - lm) / (2.0 * h);
            const double analytic = grefs[t].data[i];
            const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
            max_rel = std::max(max_rel, std::abs(numeric - analytic) / denom);
        }
    }
    return max_rel;
}

namespace {

template <class S>
ProbeResult run_probe_typed(const std::string& name, const ModelConfig& cfg,
                            const ModelParams<S>& params, std::uint64_t seed) {
    if (name == "causality") return probe_causality<S>(cfg, params, seed);
    if (name == "candidate-isolation") return probe_candidate_isolation<S>(cfg, params, seed);
    if (name == "label-leakage") return probe_label_leakage<S>(cfg, params, seed);
    if (name == "kv-equivalence") return probe_kv_equivalence<S>(cfg, params, seed);
    throw ConfigError("unknown probe: " + name);
}

}  // namespace

ProbeResult run_probe(const std::string& name, const LoadedCheckpoint& ckpt, std::uint64_t seed) {
    const ModelConfig& cfg = ckpt.meta.config;
    if (name == "alibi-monotone") return probe_alibi_monotone(cfg);
    if (name == "length-law") return probe_length_law(cfg, seed);
    if (name == "gradcheck") {
        ProbeResult res{"gradcheck", false, 0.0, ""};
        res.max_violation = gradcheck_max_rel_error(cfg.bias_mode, seed);
        res.pass = res.max_violation <= 1e-4;
        res.detail = "max relative error, analytic vs central differences (fp64, h=1e-5)";
        return res;
    }
    if (cfg.precision == Precision::kFloat32) {
        return run_probe_typed<float>(name, cfg, ckpt.params_f32, seed);
    }
    return run_probe_typed<double>(name, cfg, ckpt.params_f64, seed);
}

}  // namespace genrank
