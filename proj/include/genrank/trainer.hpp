#pragma once

#include "genrank/datagen.hpp"
#include "genrank/model.hpp"
#include "genrank/seqbuild.hpp"

#include <string>
#include <vector>

namespace genrank {

enum class SampleGrouping { kGroupedByUser, kPointwiseShuffled };
enum class LossScope { kCandidatesOnly, kIncludeHistory };
enum class HistoryMask { kCausal, kFullyVisible };

std::string to_string(SampleGrouping g);
std::string to_string(LossScope s);
std::string to_string(HistoryMask m);

struct TrainConfig {
    OrganizationKind organization = OrganizationKind::kActionOriented;
    SampleGrouping grouping = SampleGrouping::kGroupedByUser;
    LossScope loss_scope = LossScope::kCandidatesOnly;
    double history_loss_fraction = 1.0;  // only read when loss_scope = IncludeHistory
    HistoryMask history_mask = HistoryMask::kCausal;
    int batch_size = 8;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    int epochs = 1;
    std::uint64_t seed = 1;
    int max_len = 480;
    bool deterministic = true;

    void validate() const;
    static TrainConfig from_kv(const KvMap& kv);
};

struct TrainReport {
    std::vector<double> loss_trace;  // one entry per optimizer step
    std::string checkpoint_path;
    double tokens_per_sec = 0.0;
    std::vector<double> step_ms;
    long steps = 0;
    long sequences = 0;
    double final_loss = 0.0;
};

// Thrown when the loss goes non-finite.
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

struct RequestSpan {
    std::size_t begin = 0, end = 0;  // half-open indices into UserLogs::logs
};

struct UserLogs {
    std::int64_t user = 0;
    std::vector<ExposureLog> logs;       // chronological
    std::vector<RequestSpan> requests;   // consecutive same-request groups
};

std::vector<UserLogs> group_by_user(const std::vector<ExposureLog>& logs);

// Sliding-window samples: per user, one sequence per request; that request's
// items are the candidates and everything earlier is the history.
// GroupedByUser emits them user by user in time order; PointwiseShuffled emits
// the identical multiset in a globally shuffled request order.
std::vector<TokenizedSequence> build_training_samples(const std::vector<ExposureLog>& logs,
                                                      const TrainConfig& config,
                                                      const std::vector<std::string>& tasks);

template <class S>
struct AdamState {
    ModelParams<S> m, v;
    long step = 0;
};

// Decoupled-weight-decay adaptive-moment update. A zero-gradient step with
// zero weight decay is an exact no-op.
template <class S>
void adamw_step(ModelParams<S>& params, ModelParams<S>& grads, AdamState<S>& state,
                const TrainConfig& tc);

// One-pass (by default) mini-batch training; writes the checkpoint and a
// key=value manifest of every resolved config value beside it.
TrainReport train(const std::vector<ExposureLog>& logs, const TrainConfig& tc,
                  const ModelConfig& mc, const std::string& checkpoint_path,
                  const MatXf* side_catalog = nullptr);

std::string train_manifest_text(const TrainConfig& tc, const ModelConfig& mc,
                                const TrainReport& report);

}  // namespace genrank
