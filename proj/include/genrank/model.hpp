#pragma once

#include "genrank/common.hpp"
#include "genrank/seqbuild.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace genrank {

enum class BiasMode { kALiBi, kLearnableRelative, kNone };
enum class Precision { kFloat32, kFloat64 };

std::string to_string(BiasMode m);
BiasMode bias_mode_from_string(const std::string& s);
std::string to_string(Precision p);
Precision precision_from_string(const std::string& s);

// Action-table row layout. Multi-label history actions compose additively:
// observed base row plus one row per positive task. Candidates use the MASK row.
inline constexpr int kActionMaskRow = 0;
inline constexpr int kActionObservedRow = 1;
inline constexpr int kActionTaskRow0 = 2;

struct ModelConfig {
    int num_blocks = 2;       // desk default; paper-scale reference is 3 blocks,
    int num_heads = 4;        // 8 heads, hidden 768
    int hidden_dim = 64;
    double ffn_multiplier = 4.0;
    long item_vocab = 0;      // real ids in [0, item_vocab); one extra OOV row
    int max_len = 480;
    int time_buckets = 32;
    int side_dim = 0;         // frozen side-embedding width, 0 = disabled
    BiasMode bias_mode = BiasMode::kALiBi;
    Precision precision = Precision::kFloat32;
    std::vector<std::string> tasks = {"click", "engage"};

    int num_tasks() const { return static_cast<int>(tasks.size()); }
    int ffn_dim() const { return static_cast<int>(std::lround(ffn_multiplier * hidden_dim)); }
    int head_dim() const { return hidden_dim / num_heads; }
    void validate() const;
    static ModelConfig from_kv(const KvMap& kv);
};

template <class S>
struct BlockParams {
    VecX<S> ln1_gamma, ln1_beta;
    MatX<S> wq, wk, wv, wo;   // hidden x hidden
    VecX<S> bq, bk, bv, bo;
    VecX<S> ln2_gamma, ln2_beta;
    MatX<S> w1;               // hidden x ffn
    VecX<S> b1;
    MatX<S> w2;               // ffn x hidden
    VecX<S> b2;
};

template <class S>
struct ModelParams {
    MatX<S> item_table;    // (item_vocab + 1) x hidden, last row = OOV
    MatX<S> action_table;  // (2 + tasks) x hidden
    MatX<S> pos_table;     // (max_len + 1) x hidden
    MatX<S> req_table;     // (max_len + 2) x hidden
    MatX<S> time_table;    // time_buckets x hidden
    MatX<S> side_proj;     // side_dim x hidden (0x0 when disabled)
    std::vector<BlockParams<S>> blocks;
    VecX<S> lnf_gamma, lnf_beta;
    MatX<S> head_w;        // tasks x hidden
    VecX<S> head_b;        // tasks
    MatX<S> relpos_bias;   // heads x (2*max_len + 1), LearnableRelative only
    MatX<S> reltime_bias;  // heads x time_buckets, LearnableRelative only

    // bumped by the trainer after each parameter update; lets KV caches detect
    // staleness
    std::uint64_t revision = 0;

    long item_row(std::int64_t item) const {
        return (item >= 0 && item < item_table.rows() - 1) ? static_cast<long>(item)
                                                           : static_cast<long>(item_table.rows() - 1);
    }
};

template <class S>
struct TensorRef {
    std::string name;
    S* data;
    std::vector<long> dims;
    long size;
};

// All learnable tensors in a fixed order (checkpoint, optimizer and gradcheck
// all index by this order).
template <class S>
std::vector<TensorRef<S>> tensor_refs(ModelParams<S>& params);

// Allocates all tensors at the configured shapes, zero-filled.
template <class S>
ModelParams<S> make_params(const ModelConfig& config);

// Embeddings ~ N(0, 0.02^2); attention/FFN weights orthogonal columns/rows
// (Householder QR of a Gaussian); LN gains 1; heads and bias tables zero so a
// fresh model scores exactly 0 everywhere.
template <class S>
void init_params(const ModelConfig& config, ModelParams<S>& params, std::uint64_t seed);

template <class S>
long param_count(const ModelParams<S>& params);

// Closed-form parameter count; matches param_count(make_params(config)).
long param_count(const ModelConfig& config);

struct CheckpointMeta {
    ModelConfig config;
    OrganizationKind organization = OrganizationKind::kActionOriented;
    bool fully_visible_history = false;
};

// Checkpoint file: magic "GRNK", u32 version, config block, per-tensor records
// (name, dtype, rank, dims, little-endian row-major data), trailing CRC32.
template <class S>
void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     ModelParams<S>& params);

CheckpointMeta peek_checkpoint(const std::string& path);

template <class S>
ModelParams<S> load_checkpoint(const std::string& path, CheckpointMeta* meta_out = nullptr);

struct LoadedCheckpoint {
    CheckpointMeta meta;
    ModelParams<float> params_f32;   // populated per meta.config.precision
    ModelParams<double> params_f64;
};
LoadedCheckpoint load_checkpoint_any(const std::string& path);

}  // namespace genrank
