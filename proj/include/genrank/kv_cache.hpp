#pragma once

#include "genrank/network.hpp"

namespace genrank {

// Per-block keys/values of a history prefix, reusable across candidate sets.
template <class S>
struct KvCache {
    int history_tokens = 0;
    std::vector<MatX<S>> k, v;  // per block: history_tokens x hidden
    std::vector<int> key_pos;
    std::vector<std::int64_t> key_ts;
    std::uint64_t params_revision = 0;
};

template <class S>
KvCache<S> build_kv_cache(const ModelConfig& cfg, const ModelParams<S>& params,
                          const TokenizedSequence& seq, const MatX<S>* side_table = nullptr) {
    KvCache<S> cache;
    cache.history_tokens = seq.history_tokens;
    cache.params_revision = params.revision;
    cache.key_pos.reserve(static_cast<std::size_t>(seq.history_tokens));
    cache.key_ts.reserve(static_cast<std::size_t>(seq.history_tokens));
    for (int i = 0; i < seq.history_tokens; ++i) {
        cache.key_pos.push_back(seq.tokens[static_cast<std::size_t>(i)].position);
        cache.key_ts.push_back(seq.tokens[static_cast<std::size_t>(i)].ts);
    }
    if (seq.history_tokens == 0) {
        cache.k.assign(static_cast<std::size_t>(cfg.num_blocks), MatX<S>(0, cfg.hidden_dim));
        cache.v.assign(static_cast<std::size_t>(cfg.num_blocks), MatX<S>(0, cfg.hidden_dim));
        return cache;
    }

    TokenizedSequence hist = seq;
    hist.tokens.resize(static_cast<std::size_t>(seq.history_tokens));
    hist.candidate_count = 0;
    hist.loss_positions.clear();
    hist.loss_labels.clear();

    ForwardTrace<S> trace;
    forward<S>(cfg, params, hist, side_table, &trace);
    for (int b = 0; b < cfg.num_blocks; ++b) {
        cache.k.push_back(std::move(trace.blocks[static_cast<std::size_t>(b)].k));
        cache.v.push_back(std::move(trace.blocks[static_cast<std::size_t>(b)].v));
    }
    return cache;
}

// Scores each candidate of `seq` as a single token appended to the cached
// history. Matches forward() on the joint sequence bit-for-bit: both paths run
// the same row kernels over the same values in the same order.
template <class S>
MatX<S> score_incremental(const ModelConfig& cfg, const ModelParams<S>& params,
                          const KvCache<S>& cache, const TokenizedSequence& seq,
                          const MatX<S>* side_table = nullptr) {
    if (cache.params_revision != params.revision) {
        throw StalenessError("kv cache: built for params revision " +
                             std::to_string(cache.params_revision) + ", params now at " +
                             std::to_string(params.revision));
    }
    if (cache.history_tokens != seq.history_tokens) {
        throw StalenessError("kv cache: history length mismatch");
    }
    const int d = cfg.hidden_dim;
    const int f = cfg.ffn_dim();
    const int tasks = cfg.num_tasks();
    const Eigen::Index m = cache.history_tokens;

    MatX<S> scores(seq.candidate_count, tasks);
    RowVec<S> x(d), y(d), qr(d), kr(d), vr(d), attn(d), tmp(d), ffn_u(f), ffn_g(f), ffn_o(d), z(d);

    for (int c = 0; c < seq.candidate_count; ++c) {
        const int idx = seq.history_tokens + c;
        const Token& tok = seq.tokens[static_cast<std::size_t>(idx)];
        compose_input_row<S>(cfg, params, tok, side_table, x);
        for (int b = 0; b < cfg.num_blocks; ++b) {
            const auto& blk = params.blocks[static_cast<std::size_t>(b)];
            S mu, inv;
            layer_norm_row<S>(x, blk.ln1_gamma, blk.ln1_beta, y, mu, inv);
            affine_row<S>(y, blk.wq, blk.bq, qr);
            affine_row<S>(y, blk.wk, blk.bk, kr);
            affine_row<S>(y, blk.wv, blk.bv, vr);
            attend_row<S>(cfg, params, qr, cache.k[static_cast<std::size_t>(b)],
                          cache.v[static_cast<std::size_t>(b)], m, kr.data(), vr.data(),
                          tok.position, tok.ts, cache.key_pos.data(), cache.key_ts.data(), attn,
                          nullptr, 0);
            affine_row<S>(attn, blk.wo, blk.bo, tmp);
            x += tmp;
            layer_norm_row<S>(x, blk.ln2_gamma, blk.ln2_beta, tmp, mu, inv);
            affine_row<S>(tmp, blk.w1, blk.b1, ffn_u);
            silu_row<S>(ffn_u, ffn_g);
            affine_row<S>(ffn_g, blk.w2, blk.b2, ffn_o);
            x += ffn_o;
        }
        S mu, inv;
        layer_norm_row<S>(x, params.lnf_gamma, params.lnf_beta, z, mu, inv);
        for (int t = 0; t < tasks; ++t) {
            S acc = params.head_b(t);
            for (int e = 0; e < d; ++e) acc += params.head_w(t, e) * z(e);
            scores(c, t) = acc;
        }
    }
    return scores;
}

}  // namespace genrank
