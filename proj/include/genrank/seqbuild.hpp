#pragma once

#include "genrank/common.hpp"
#include "genrank/datagen.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace genrank {

enum class OrganizationKind {
    kActionOriented,        // one token per item; the action rides on the item token
    kItemInterleaved,       // item and action alternate as separate tokens
};

std::string to_string(OrganizationKind org);
OrganizationKind organization_from_string(const std::string& s);

// One position of a tokenized sequence. An item id < 0 means the token carries
// no item-embedding term (interleaved action tokens). Candidates and masked
// history tokens use the MASK action row instead of observed actions.
struct Token {
    std::int64_t item = -1;
    bool has_action = false;
    bool action_masked = false;
    std::uint32_t action_bits = 0;  // bit t set <=> positive label for task t
    int position = 0;               // item ordinal; all candidates share one value
    int request = 0;                // distinct-timestamp count over the prefix
    int time_bucket = 0;            // log-bucketed gap to the previous request
    std::int64_t ts = 0;
};

struct TokenizedSequence {
    OrganizationKind organization = OrganizationKind::kActionOriented;
    int history_len = 0;       // N, items (post truncation)
    int candidate_count = 0;   // C
    int history_tokens = 0;    // N (action-oriented) or 2N (interleaved)
    bool fully_visible_history = false;
    std::vector<Token> tokens;
    std::vector<int> loss_positions;          // token indices with labels attached
    std::vector<std::uint32_t> loss_labels;   // parallel to loss_positions

    int length() const { return static_cast<int>(tokens.size()); }

    // History rows are causal (or fully visible under the ablation); candidate
    // rows attend all history plus self only.
    bool attention_allowed(int row, int col) const;

    // Materialized L x L mask, true = attend allowed. For probes and tests;
    // kernels use the structural form.
    MatX<bool> mask_matrix() const;
};

// history item i -> i; every candidate -> N.
int position_index(int ordinal, bool is_candidate, int history_len);

// |{t_1, ..., t_i}| over a chronologically sorted prefix.
int request_index(std::span<const std::int64_t> ts_prefix);

// min(floor(log2(1 + delta)) + 1, 31) for delta >= 0; 0 is the sentinel for
// "no prior request" (also used for negative deltas, which only arise under
// the fully-visible ablation).
int time_bucket_of_gap(std::int64_t delta_seconds);

// delta = t_i - max{t_j : t_j < t_i}; sentinel bucket 0 when no prior exists.
// Items sharing a timestamp share the predecessor, hence the bucket.
int pre_request_bucket(std::int64_t ts, std::span<const std::int64_t> prior_ts);

struct BuildOptions {
    int max_len = 480;
    bool fully_visible_history = false;
    // Fraction of history items that also carry loss (0 = candidates only).
    // Under the action-oriented organization such items get the MASK action
    // so their own action never leaks into the token that predicts it.
    double history_loss_fraction = 0.0;
    std::uint64_t history_loss_seed = 0;
};

// Renders a user's chronological history plus a candidate set into one
// sequence. `tasks` fixes the label-bit order. History is truncated to the
// most recent items that fit max_len under the organization's length law.
TokenizedSequence build_sequence(std::span<const ExposureLog> history,
                                 std::span<const std::int64_t> candidates,
                                 std::int64_t now, OrganizationKind org,
                                 const std::vector<std::string>& tasks,
                                 const BuildOptions& opts = {});

// Same, with candidate labels attached at the candidate loss positions.
TokenizedSequence build_training_sequence(std::span<const ExposureLog> history,
                                          std::span<const ExposureLog> request_logs,
                                          OrganizationKind org,
                                          const std::vector<std::string>& tasks,
                                          const BuildOptions& opts = {});

std::uint32_t label_bits(const ExposureLog& log, const std::vector<std::string>& tasks);

}  // namespace genrank
