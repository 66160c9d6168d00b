#pragma once

#include "genrank/model.hpp"
#include "genrank/seqbuild.hpp"

#include <cmath>
#include <vector>

// Row kernels are kept out-of-line so the full-sequence forward and the
// incremental scorer run through one compiled instantiation per scalar type;
// that is what makes their outputs bit-identical, not just close.
#if defined(__GNUC__) || defined(__clang__)
#define GENRANK_NOINLINE __attribute__((noinline))
#else
#define GENRANK_NOINLINE
#endif

namespace genrank {

inline double alibi_slope(int head, int num_heads) {
    return std::exp2(-8.0 * static_cast<double>(head + 1) / static_cast<double>(num_heads));
}

// -slope_h * (q - k); callers pass q >= k (absolute distance under the
// fully-visible ablation).
inline double alibi_bias(int head, int num_heads, long q_pos, long k_pos) {
    return -alibi_slope(head, num_heads) * static_cast<double>(q_pos - k_pos);
}

template <class S>
GENRANK_NOINLINE S attention_bias(const ModelConfig& cfg, const ModelParams<S>& params,
                                  int head, int q_pos, std::int64_t q_ts, int k_pos,
                                  std::int64_t k_ts) {
    switch (cfg.bias_mode) {
        case BiasMode::kALiBi: {
            const long dist = q_pos >= k_pos ? q_pos - k_pos : k_pos - q_pos;
            return static_cast<S>(alibi_bias(head, cfg.num_heads, dist, 0));
        }
        case BiasMode::kLearnableRelative: {
            long dp = static_cast<long>(q_pos) - static_cast<long>(k_pos);
            if (dp > cfg.max_len) dp = cfg.max_len;
            if (dp < -cfg.max_len) dp = -cfg.max_len;
            const int bucket = time_bucket_of_gap(q_ts - k_ts);
            return params.relpos_bias(head, dp + cfg.max_len) + params.reltime_bias(head, bucket);
        }
        case BiasMode::kNone: return S(0);
    }
    return S(0);
}

// e = item + action + position + request-index + pre-request-time embeddings;
// candidates get the MASK action row. `side_row` adds the projected frozen
// side embedding when present.
template <class S>
GENRANK_NOINLINE void compose_input_row(const ModelConfig& cfg, const ModelParams<S>& params,
                                        const Token& tok, const MatX<S>* side_table,
                                        Eigen::Ref<RowVec<S>> out) {
    out.setZero();
    if (tok.item >= 0) {
        out += params.item_table.row(params.item_row(tok.item));
        if (cfg.side_dim > 0 && side_table != nullptr && tok.item < side_table->rows()) {
            const auto side_row = side_table->row(tok.item);
            for (int j = 0; j < cfg.side_dim; ++j) out += side_row(j) * params.side_proj.row(j);
        }
    }
    if (tok.has_action) {
        if (tok.action_masked) {
            out += params.action_table.row(kActionMaskRow);
        } else {
            out += params.action_table.row(kActionObservedRow);
            for (int t = 0; t < cfg.num_tasks(); ++t) {
                if (tok.action_bits & (1u << t)) out += params.action_table.row(kActionTaskRow0 + t);
            }
        }
    }
    out += params.pos_table.row(tok.position);
    out += params.req_table.row(tok.request);
    out += params.time_table.row(tok.time_bucket);
}

template <class S>
MatX<S> compose_input(const ModelConfig& cfg, const ModelParams<S>& params,
                      const TokenizedSequence& seq, const MatX<S>* side_table) {
    MatX<S> x(seq.length(), cfg.hidden_dim);
    for (int i = 0; i < seq.length(); ++i) {
        compose_input_row<S>(cfg, params, seq.tokens[static_cast<std::size_t>(i)], side_table,
                             x.row(i));
    }
    return x;
}

// out = x * w + b, accumulated in ascending input-index order.
template <class S>
GENRANK_NOINLINE void affine_row(Eigen::Ref<const RowVec<S>> x, const MatX<S>& w,
                                 const VecX<S>& b, Eigen::Ref<RowVec<S>> out) {
    out = b.transpose();
    for (Eigen::Index j = 0; j < w.rows(); ++j) out += x(j) * w.row(j);
}

template <class S>
GENRANK_NOINLINE void layer_norm_row(Eigen::Ref<const RowVec<S>> x, const VecX<S>& gamma,
                                     const VecX<S>& beta, Eigen::Ref<RowVec<S>> out, S& mean,
                                     S& inv_std) {
    const Eigen::Index d = x.size();
    S mu = 0;
    for (Eigen::Index j = 0; j < d; ++j) mu += x(j);
    mu /= static_cast<S>(d);
    S var = 0;
    for (Eigen::Index j = 0; j < d; ++j) {
        const S c = x(j) - mu;
        var += c * c;
    }
    var /= static_cast<S>(d);
    const S inv = S(1) / std::sqrt(var + S(1e-5));
    for (Eigen::Index j = 0; j < d; ++j) out(j) = gamma(j) * ((x(j) - mu) * inv) + beta(j);
    mean = mu;
    inv_std = inv;
}

// One query row of masked multi-head attention: keys/values are the first
// `m` rows of k_rows/v_rows, optionally followed by a self key/value.
// probs_out, when given, receives the m (+1) attention weights per head,
// strided by prob_stride across heads.
template <class S>
GENRANK_NOINLINE void attend_row(const ModelConfig& cfg, const ModelParams<S>& params,
                                 Eigen::Ref<const RowVec<S>> q, const MatX<S>& k_rows,
                                 const MatX<S>& v_rows, Eigen::Index m, const S* k_self,
                                 const S* v_self, int q_pos, std::int64_t q_ts,
                                 const int* key_pos, const std::int64_t* key_ts,
                                 Eigen::Ref<RowVec<S>> out, S* probs_out,
                                 std::size_t prob_stride) {
    const int heads = cfg.num_heads;
    const int dh = cfg.head_dim();
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
    const Eigen::Index total = m + (k_self != nullptr ? 1 : 0);
    thread_local std::vector<S> sbuf;
    if (static_cast<Eigen::Index>(sbuf.size()) < total) sbuf.resize(static_cast<std::size_t>(total));

    for (int h = 0; h < heads; ++h) {
        const int off = h * dh;
        S mx = std::numeric_limits<S>::lowest();
        for (Eigen::Index j = 0; j < m; ++j) {
            S dot = 0;
            const S* kp = k_rows.data() + j * k_rows.cols() + off;
            for (int e = 0; e < dh; ++e) dot += q(off + e) * kp[e];
            const S s = dot * scale +
                        attention_bias<S>(cfg, params, h, q_pos, q_ts, key_pos[j], key_ts[j]);
            sbuf[static_cast<std::size_t>(j)] = s;
            if (s > mx) mx = s;
        }
        if (k_self != nullptr) {
            S dot = 0;
            for (int e = 0; e < dh; ++e) dot += q(off + e) * k_self[off + e];
            const S s = dot * scale + attention_bias<S>(cfg, params, h, q_pos, q_ts, q_pos, q_ts);
            sbuf[static_cast<std::size_t>(m)] = s;
            if (s > mx) mx = s;
        }
        S denom = 0;
        for (Eigen::Index j = 0; j < total; ++j) {
            const S e = std::exp(sbuf[static_cast<std::size_t>(j)] - mx);
            sbuf[static_cast<std::size_t>(j)] = e;
            denom += e;
        }
        for (Eigen::Index j = 0; j < total; ++j) sbuf[static_cast<std::size_t>(j)] /= denom;

        for (int e = 0; e < dh; ++e) out(off + e) = 0;
        for (Eigen::Index j = 0; j < m; ++j) {
            const S p = sbuf[static_cast<std::size_t>(j)];
            const S* vp = v_rows.data() + j * v_rows.cols() + off;
            for (int e = 0; e < dh; ++e) out(off + e) += p * vp[e];
        }
        if (v_self != nullptr) {
            const S p = sbuf[static_cast<std::size_t>(m)];
            for (int e = 0; e < dh; ++e) out(off + e) += p * v_self[off + e];
        }
        if (probs_out != nullptr) {
            for (Eigen::Index j = 0; j < total; ++j) {
                probs_out[static_cast<std::size_t>(h) * prob_stride + static_cast<std::size_t>(j)] =
                    sbuf[static_cast<std::size_t>(j)];
            }
        }
    }
}

template <class S>
GENRANK_NOINLINE void silu_row(Eigen::Ref<const RowVec<S>> u, Eigen::Ref<RowVec<S>> out) {
    for (Eigen::Index j = 0; j < u.size(); ++j) {
        const S sig = S(1) / (S(1) + std::exp(-u(j)));
        out(j) = u(j) * sig;
    }
}

template <class S>
struct BlockTrace {
    MatX<S> x_in, y, q, k, v, attn, x_mid, y2, u, g;
    VecX<S> ln1_mean, ln1_inv, ln2_mean, ln2_inv;
    std::vector<MatX<S>> probs;  // per head, L x L, zero where masked
};

template <class S>
struct ForwardTrace {
    MatX<S> x0;
    std::vector<BlockTrace<S>> blocks;
    MatX<S> x_final, z;
    VecX<S> lnf_mean, lnf_inv;
};

namespace detail {

// (prefix length, self row index or -1) for one attention row.
inline std::pair<Eigen::Index, int> row_key_span(const TokenizedSequence& seq, int row) {
    if (row < seq.history_tokens) {
        return {seq.fully_visible_history ? seq.history_tokens : row + 1, -1};
    }
    return {seq.history_tokens, row};
}

}  // namespace detail

// Scores (pre-sigmoid) at the sequence's loss positions, one column per task.
// Forward never reads labels; flipping them cannot change scores.
template <class S>
MatX<S> forward(const ModelConfig& cfg, const ModelParams<S>& params,
                const TokenizedSequence& seq, const MatX<S>* side_table = nullptr,
                ForwardTrace<S>* trace = nullptr) {
    cfg.validate();
    const int length = seq.length();
    const int d = cfg.hidden_dim;
    const int f = cfg.ffn_dim();
    if (length == 0) throw ConfigError("forward: empty sequence");

    std::vector<int> key_pos(static_cast<std::size_t>(length));
    std::vector<std::int64_t> key_ts(static_cast<std::size_t>(length));
    for (int i = 0; i < length; ++i) {
        key_pos[static_cast<std::size_t>(i)] = seq.tokens[static_cast<std::size_t>(i)].position;
        key_ts[static_cast<std::size_t>(i)] = seq.tokens[static_cast<std::size_t>(i)].ts;
    }

    MatX<S> x = compose_input<S>(cfg, params, seq, side_table);
    if (trace) {
        trace->x0 = x;
        trace->blocks.assign(static_cast<std::size_t>(cfg.num_blocks), BlockTrace<S>{});
    }

    MatX<S> y(length, d), q(length, d), k(length, d), v(length, d), attn(length, d);
    RowVec<S> tmp(d), ffn_u(f), ffn_g(f), ffn_o(d);

    for (int b = 0; b < cfg.num_blocks; ++b) {
        const auto& blk = params.blocks[static_cast<std::size_t>(b)];
        BlockTrace<S>* bt = trace ? &trace->blocks[static_cast<std::size_t>(b)] : nullptr;
        if (bt) {
            bt->x_in = x;
            bt->ln1_mean.resize(length);
            bt->ln1_inv.resize(length);
            bt->probs.assign(static_cast<std::size_t>(cfg.num_heads), MatX<S>::Zero(length, length));
        }
        VecX<S> mean_buf(length), inv_buf(length);
        for (int i = 0; i < length; ++i) {
            S mu, inv;
            layer_norm_row<S>(x.row(i), blk.ln1_gamma, blk.ln1_beta, y.row(i), mu, inv);
            if (bt) {
                bt->ln1_mean(i) = mu;
                bt->ln1_inv(i) = inv;
            }
            affine_row<S>(y.row(i), blk.wq, blk.bq, q.row(i));
            affine_row<S>(y.row(i), blk.wk, blk.bk, k.row(i));
            affine_row<S>(y.row(i), blk.wv, blk.bv, v.row(i));
        }
        thread_local std::vector<S> prow;
        for (int i = 0; i < length; ++i) {
            const auto [m, self] = detail::row_key_span(seq, i);
            S* probs_out = nullptr;
            std::size_t stride = 0;
            const std::size_t want = static_cast<std::size_t>(cfg.num_heads) *
                                     static_cast<std::size_t>(m + (self >= 0 ? 1 : 0));
            if (bt) {
                if (prow.size() < want) prow.resize(want);
                probs_out = prow.data();
                stride = static_cast<std::size_t>(m + (self >= 0 ? 1 : 0));
            }
            attend_row<S>(cfg, params, q.row(i), k, v, m,
                          self >= 0 ? k.data() + static_cast<std::size_t>(self) * k.cols() : nullptr,
                          self >= 0 ? v.data() + static_cast<std::size_t>(self) * v.cols() : nullptr,
                          seq.tokens[static_cast<std::size_t>(i)].position,
                          seq.tokens[static_cast<std::size_t>(i)].ts, key_pos.data(), key_ts.data(),
                          attn.row(i), probs_out, stride);
            if (bt) {
                for (int h = 0; h < cfg.num_heads; ++h) {
                    auto& pm = bt->probs[static_cast<std::size_t>(h)];
                    for (Eigen::Index j = 0; j < m; ++j) {
                        pm(i, j) = prow[static_cast<std::size_t>(h) * stride + static_cast<std::size_t>(j)];
                    }
                    if (self >= 0) {
                        pm(i, self) = prow[static_cast<std::size_t>(h) * stride + static_cast<std::size_t>(m)];
                    }
                }
            }
        }
        if (bt) {
            bt->y = y;
            bt->q = q;
            bt->k = k;
            bt->v = v;
            bt->attn = attn;
        }
        for (int i = 0; i < length; ++i) {
            affine_row<S>(attn.row(i), blk.wo, blk.bo, tmp);
            x.row(i) += tmp;
        }
        if (bt) {
            bt->x_mid = x;
            bt->ln2_mean.resize(length);
            bt->ln2_inv.resize(length);
            bt->y2.resize(length, d);
            bt->u.resize(length, f);
            bt->g.resize(length, f);
        }
        for (int i = 0; i < length; ++i) {
            S mu, inv;
            layer_norm_row<S>(x.row(i), blk.ln2_gamma, blk.ln2_beta, tmp, mu, inv);
            affine_row<S>(tmp, blk.w1, blk.b1, ffn_u);
            silu_row<S>(ffn_u, ffn_g);
            affine_row<S>(ffn_g, blk.w2, blk.b2, ffn_o);
            if (bt) {
                bt->ln2_mean(i) = mu;
                bt->ln2_inv(i) = inv;
                bt->y2.row(i) = tmp;
                bt->u.row(i) = ffn_u;
                bt->g.row(i) = ffn_g;
            }
            x.row(i) += ffn_o;
        }
    }

    MatX<S> z(length, d);
    VecX<S> lnf_mean(length), lnf_inv(length);
    for (int i = 0; i < length; ++i) {
        S mu, inv;
        layer_norm_row<S>(x.row(i), params.lnf_gamma, params.lnf_beta, z.row(i), mu, inv);
        lnf_mean(i) = mu;
        lnf_inv(i) = inv;
    }
    if (trace) {
        trace->x_final = x;
        trace->z = z;
        trace->lnf_mean = lnf_mean;
        trace->lnf_inv = lnf_inv;
    }

    const int tasks = cfg.num_tasks();
    MatX<S> scores(static_cast<Eigen::Index>(seq.loss_positions.size()), tasks);
    for (std::size_t pi = 0; pi < seq.loss_positions.size(); ++pi) {
        const int pos = seq.loss_positions[pi];
        for (int t = 0; t < tasks; ++t) {
            S acc = params.head_b(t);
            for (int e = 0; e < d; ++e) acc += params.head_w(t, e) * z(pos, e);
            scores(static_cast<Eigen::Index>(pi), t) = acc;
        }
    }
    return scores;
}

// Binary cross-entropy over the sequence's loss positions x tasks, with
// pre-sigmoid clamping at +-30. Returns the element sum and d(sum)/dscores so
// callers can normalize across a batch.
template <class S>
struct BceSum {
    double sum = 0.0;
    long count = 0;
    MatX<S> dsum;
};

template <class S>
BceSum<S> bce_sum(const MatX<S>& scores, const TokenizedSequence& seq) {
    if (scores.rows() != static_cast<Eigen::Index>(seq.loss_positions.size())) {
        throw ValidationError("bce: scores rows do not match loss positions");
    }
    BceSum<S> out;
    out.dsum = MatX<S>::Zero(scores.rows(), scores.cols());
    for (Eigen::Index p = 0; p < scores.rows(); ++p) {
        const std::uint32_t bits = seq.loss_labels[static_cast<std::size_t>(p)];
        for (Eigen::Index t = 0; t < scores.cols(); ++t) {
            const double y = (bits & (1u << t)) ? 1.0 : 0.0;
            double z = static_cast<double>(scores(p, t));
            const bool clipped = z > 30.0 || z < -30.0;
            if (z > 30.0) z = 30.0;
            if (z < -30.0) z = -30.0;
            const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
            out.sum += softplus - z * y;
            const double sig = 1.0 / (1.0 + std::exp(-z));
            out.dsum(p, t) = clipped ? S(0) : static_cast<S>(sig - y);
            ++out.count;
        }
    }
    return out;
}

namespace detail {

template <class S>
GENRANK_NOINLINE void layer_norm_backward_row(Eigen::Ref<const RowVec<S>> x, const VecX<S>& gamma,
                                              S mean, S inv_std, Eigen::Ref<const RowVec<S>> dy,
                                              Eigen::Ref<RowVec<S>> dx_add, VecX<S>& dgamma,
                                              VecX<S>& dbeta) {
    const Eigen::Index d = x.size();
    S mean_dxhat = 0, mean_dxhat_xhat = 0;
    thread_local std::vector<S> xhat_buf, dxhat_buf;
    if (static_cast<Eigen::Index>(xhat_buf.size()) < d) {
        xhat_buf.resize(static_cast<std::size_t>(d));
        dxhat_buf.resize(static_cast<std::size_t>(d));
    }
    for (Eigen::Index j = 0; j < d; ++j) {
        const S xhat = (x(j) - mean) * inv_std;
        const S dxhat = dy(j) * gamma(j);
        xhat_buf[static_cast<std::size_t>(j)] = xhat;
        dxhat_buf[static_cast<std::size_t>(j)] = dxhat;
        dgamma(j) += dy(j) * xhat;
        dbeta(j) += dy(j);
        mean_dxhat += dxhat;
        mean_dxhat_xhat += dxhat * xhat;
    }
    mean_dxhat /= static_cast<S>(d);
    mean_dxhat_xhat /= static_cast<S>(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        dx_add(j) += inv_std * (dxhat_buf[static_cast<std::size_t>(j)] - mean_dxhat -
                                xhat_buf[static_cast<std::size_t>(j)] * mean_dxhat_xhat);
    }
}

}  // namespace detail

// Reverse-mode gradients for every parameter tensor, accumulated into `grads`
// (same shapes as `params`). `dscores` is the gradient of the objective with
// respect to the forward() output.
template <class S>
void backward(const ModelConfig& cfg, const ModelParams<S>& params, const TokenizedSequence& seq,
              const MatX<S>* side_table, const ForwardTrace<S>& trace, const MatX<S>& dscores,
              ModelParams<S>& grads) {
    const int length = seq.length();
    const int d = cfg.hidden_dim;
    const int heads = cfg.num_heads;
    const int dh = cfg.head_dim();
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));

    // heads
    MatX<S> dz = MatX<S>::Zero(length, d);
    for (std::size_t pi = 0; pi < seq.loss_positions.size(); ++pi) {
        const int pos = seq.loss_positions[pi];
        for (int t = 0; t < cfg.num_tasks(); ++t) {
            const S g = dscores(static_cast<Eigen::Index>(pi), t);
            if (g == S(0)) continue;
            dz.row(pos) += g * params.head_w.row(t);
            grads.head_w.row(t) += g * trace.z.row(pos);
            grads.head_b(t) += g;
        }
    }

    // final layer norm
    MatX<S> dx = MatX<S>::Zero(length, d);
    for (int i = 0; i < length; ++i) {
        detail::layer_norm_backward_row<S>(trace.x_final.row(i), params.lnf_gamma,
                                           trace.lnf_mean(i), trace.lnf_inv(i), dz.row(i),
                                           dx.row(i), grads.lnf_gamma, grads.lnf_beta);
    }

    for (int b = cfg.num_blocks - 1; b >= 0; --b) {
        const auto& blk = params.blocks[static_cast<std::size_t>(b)];
        auto& gblk = grads.blocks[static_cast<std::size_t>(b)];
        const auto& bt = trace.blocks[static_cast<std::size_t>(b)];

        // FFN: x_out = x_mid + silu(ln2(x_mid) w1 + b1) w2 + b2
        const MatX<S>& df = dx;  // gradient w.r.t. x_out, also the residual path
        gblk.w2.noalias() += bt.g.transpose() * df;
        gblk.b2 += df.colwise().sum().transpose();
        MatX<S> dg = df * blk.w2.transpose();
        MatX<S> du(length, bt.u.cols());
        for (Eigen::Index i = 0; i < du.rows(); ++i) {
            for (Eigen::Index j = 0; j < du.cols(); ++j) {
                const S u = bt.u(i, j);
                const S sig = S(1) / (S(1) + std::exp(-u));
                du(i, j) = dg(i, j) * sig * (S(1) + u * (S(1) - sig));
            }
        }
        gblk.w1.noalias() += bt.y2.transpose() * du;
        gblk.b1 += du.colwise().sum().transpose();
        MatX<S> dy2 = du * blk.w1.transpose();
        MatX<S> dx_mid = dx;  // residual
        for (int i = 0; i < length; ++i) {
            detail::layer_norm_backward_row<S>(bt.x_mid.row(i), blk.ln2_gamma, bt.ln2_mean(i),
                                               bt.ln2_inv(i), dy2.row(i), dx_mid.row(i),
                                               gblk.ln2_gamma, gblk.ln2_beta);
        }

        // attention out: x_mid = x_in + attn wo + bo
        gblk.wo.noalias() += bt.attn.transpose() * dx_mid;
        gblk.bo += dx_mid.colwise().sum().transpose();
        MatX<S> dattn = dx_mid * blk.wo.transpose();

        MatX<S> dq = MatX<S>::Zero(length, d);
        MatX<S> dk = MatX<S>::Zero(length, d);
        MatX<S> dv = MatX<S>::Zero(length, d);
        for (int i = 0; i < length; ++i) {
            const auto [m, self] = detail::row_key_span(seq, i);
            const int qp = seq.tokens[static_cast<std::size_t>(i)].position;
            const std::int64_t qt = seq.tokens[static_cast<std::size_t>(i)].ts;
            for (int h = 0; h < heads; ++h) {
                const int off = h * dh;
                const auto& pm = bt.probs[static_cast<std::size_t>(h)];
                // dp_j = dattn . v_j ; ds_j = p_j (dp_j - sum_k p_k dp_k)
                S dot_pd = 0;
                thread_local std::vector<S> dp_buf;
                const Eigen::Index total = m + (self >= 0 ? 1 : 0);
                if (static_cast<Eigen::Index>(dp_buf.size()) < total) {
                    dp_buf.resize(static_cast<std::size_t>(total));
                }
                for (Eigen::Index jj = 0; jj < total; ++jj) {
                    const int col = jj < m ? static_cast<int>(jj) : self;
                    S dp = 0;
                    for (int e = 0; e < dh; ++e) dp += dattn(i, off + e) * bt.v(col, off + e);
                    dp_buf[static_cast<std::size_t>(jj)] = dp;
                    dot_pd += pm(i, col) * dp;
                    // dv_j += p_j * dattn
                    const S p = pm(i, col);
                    for (int e = 0; e < dh; ++e) dv(col, off + e) += p * dattn(i, off + e);
                }
                for (Eigen::Index jj = 0; jj < total; ++jj) {
                    const int col = jj < m ? static_cast<int>(jj) : self;
                    const S p = pm(i, col);
                    const S ds = p * (dp_buf[static_cast<std::size_t>(jj)] - dot_pd);
                    if (ds == S(0)) continue;
                    for (int e = 0; e < dh; ++e) {
                        dq(i, off + e) += ds * bt.k(col, off + e) * scale;
                        dk(col, off + e) += ds * bt.q(i, off + e) * scale;
                    }
                    if (cfg.bias_mode == BiasMode::kLearnableRelative) {
                        const int kp = seq.tokens[static_cast<std::size_t>(col)].position;
                        const std::int64_t kt = seq.tokens[static_cast<std::size_t>(col)].ts;
                        long dpos = static_cast<long>(qp) - static_cast<long>(kp);
                        if (dpos > cfg.max_len) dpos = cfg.max_len;
                        if (dpos < -cfg.max_len) dpos = -cfg.max_len;
                        grads.relpos_bias(h, dpos + cfg.max_len) += ds;
                        grads.reltime_bias(h, time_bucket_of_gap(qt - kt)) += ds;
                    }
                }
            }
        }

        gblk.wq.noalias() += bt.y.transpose() * dq;
        gblk.bq += dq.colwise().sum().transpose();
        gblk.wk.noalias() += bt.y.transpose() * dk;
        gblk.bk += dk.colwise().sum().transpose();
        gblk.wv.noalias() += bt.y.transpose() * dv;
        gblk.bv += dv.colwise().sum().transpose();
        MatX<S> dy = dq * blk.wq.transpose();
        dy.noalias() += dk * blk.wk.transpose();
        dy.noalias() += dv * blk.wv.transpose();

        MatX<S> dx_in = dx_mid;  // residual
        for (int i = 0; i < length; ++i) {
            detail::layer_norm_backward_row<S>(bt.x_in.row(i), blk.ln1_gamma, bt.ln1_mean(i),
                                               bt.ln1_inv(i), dy.row(i), dx_in.row(i),
                                               gblk.ln1_gamma, gblk.ln1_beta);
        }
        dx = std::move(dx_in);
    }

    // embeddings
    for (int i = 0; i < length; ++i) {
        const Token& tok = seq.tokens[static_cast<std::size_t>(i)];
        const auto g0 = dx.row(i);
        if (tok.item >= 0) {
            grads.item_table.row(params.item_row(tok.item)) += g0;
            if (cfg.side_dim > 0 && side_table != nullptr && tok.item < side_table->rows()) {
                const auto side_row = side_table->row(tok.item);
                for (int j = 0; j < cfg.side_dim; ++j) grads.side_proj.row(j) += side_row(j) * g0;
            }
        }
        if (tok.has_action) {
            if (tok.action_masked) {
                grads.action_table.row(kActionMaskRow) += g0;
            } else {
                grads.action_table.row(kActionObservedRow) += g0;
                for (int t = 0; t < cfg.num_tasks(); ++t) {
                    if (tok.action_bits & (1u << t)) {
                        grads.action_table.row(kActionTaskRow0 + t) += g0;
                    }
                }
            }
        }
        grads.pos_table.row(tok.position) += g0;
        grads.req_table.row(tok.request) += g0;
        grads.time_table.row(tok.time_bucket) += g0;
    }
}

}  // namespace genrank
