#pragma once

#include "genrank/common.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace genrank {

// One (user, request, item) interaction record; the atomic unit of training data.
struct ExposureLog {
    std::int64_t user_id = 0;
    std::int64_t request_id = 0;
    std::int64_t ts = 0;  // seconds since epoch
    std::int64_t item_id = 0;
    std::map<std::string, int> labels;  // task -> {0,1}
};

// Per-log ground-truth label probabilities. Written to a sidecar file and never
// consumed by the trainer.
struct TruthRecord {
    std::int64_t user_id = 0;
    std::int64_t request_id = 0;
    std::int64_t item_id = 0;
    std::map<std::string, double> probs;
};

struct ItemCatalog {
    MatXd latents;  // num_items x latent_dim, unit rows
    MatXf side;     // num_items x side_dim, empty when side_dim == 0
};

struct GeneratorConfig {
    long num_users = 100;
    long num_items = 1000;
    int latent_dim = 8;
    int requests_per_user = 50;
    int items_per_request = 4;
    double gap_mu = 5.7;     // lognormal(mu, sigma) inter-request gap, seconds
    double gap_sigma = 1.0;
    std::vector<std::string> tasks = {"click", "engage"};
    double drift_rate = 0.02;
    std::uint64_t seed = 1;

    // Behavior-model policy knobs (not part of the interaction schema).
    int num_clusters = 40;
    double cluster_noise = 0.35;
    double global_dir_weight = 0.0;  // shared item-latent direction; u.g acts as a
                                     // per-user engagement level
    double affinity_gain = 2.5;
    std::vector<double> task_bias = {-0.4, -1.2};
    double recency_beta = 1.5;
    double recency_threshold = 0.8;
    int side_dim = 0;
    double side_noise = 0.5;

    void validate() const;
    static GeneratorConfig from_kv(const KvMap& kv);
};

struct GeneratedData {
    std::vector<ExposureLog> logs;    // ordered by user_id, then time
    std::vector<TruthRecord> truth;   // parallel to logs
    ItemCatalog catalog;
};

// Synthesizes exposure logs from a drifting-latent user model. Deterministic:
// identical config (including seed) gives identical output. Per-user RNG
// substreams, so user u's logs do not depend on num_users.
GeneratedData generate_logs(const GeneratorConfig& config);

// AUC of the ground-truth probabilities against the sampled labels for one task.
// Upper-bounds any model trained on the logs. nullopt when labels are single-class.
std::optional<double> bayes_optimal_auc(const std::vector<ExposureLog>& logs,
                                        const std::vector<TruthRecord>& truth,
                                        const std::string& task);

// JSON-lines exposure-log file, one record per line, fields
// user_id, request_id, ts, item_id, labels. Byte-deterministic.
void write_logs(const std::vector<ExposureLog>& logs, const std::string& path);

// Parses and validates: consistent task set (or `expected_tasks` when given),
// binary labels, per-user non-decreasing timestamps, one timestamp per
// (user, request). Throws ParseError / ValidationError with the line number.
std::vector<ExposureLog> read_logs(const std::string& path,
                                   const std::vector<std::string>& expected_tasks = {});

void write_truth(const std::vector<TruthRecord>& truth, const std::string& path);
std::vector<TruthRecord> read_truth(const std::string& path);

// catalog.bin: magic "GRCT", u32 version, u32 rows, u32 dim, row-major float32,
// little-endian.
void write_catalog(const MatXf& mat, const std::string& path);
MatXf read_catalog(const std::string& path);

// Distinct task names in first-seen order, for consumers that infer the task
// set from a log file.
std::vector<std::string> task_names(const std::vector<ExposureLog>& logs);

}  // namespace genrank
