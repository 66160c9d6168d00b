#include "genrank/seqbuild.hpp"

#include <algorithm>
#include <cmath>

namespace genrank {

std::string to_string(OrganizationKind org) {
    return org == OrganizationKind::kActionOriented ? "action_oriented" : "item_interleaved";
}

OrganizationKind organization_from_string(const std::string& s) {
    if (s == "action_oriented") return OrganizationKind::kActionOriented;
    if (s == "item_interleaved" || s == "interleaved") return OrganizationKind::kItemInterleaved;
    throw ConfigError("unknown organization: " + s);
}

bool TokenizedSequence::attention_allowed(int row, int col) const {
    const int L = length();
    if (row < 0 || col < 0 || row >= L || col >= L) return false;
    if (row < history_tokens) {
        if (fully_visible_history) return col < history_tokens;
        return col <= row;
    }
    // candidate row: all history plus self
    return col < history_tokens || col == row;
}

MatX<bool> TokenizedSequence::mask_matrix() const {
    const int L = length();
    MatX<bool> m(L, L);
    for (int i = 0; i < L; ++i) {
        for (int j = 0; j < L; ++j) m(i, j) = attention_allowed(i, j);
    }
    return m;
}

int position_index(int ordinal, bool is_candidate, int history_len) {
    return is_candidate ? history_len : ordinal;
}

int request_index(std::span<const std::int64_t> ts_prefix) {
    int distinct = 0;
    std::int64_t prev = 0;
    for (std::size_t i = 0; i < ts_prefix.size(); ++i) {
        if (i == 0 || ts_prefix[i] != prev) ++distinct;
        prev = ts_prefix[i];
    }
    return distinct;
}

int time_bucket_of_gap(std::int64_t delta_seconds) {
    if (delta_seconds < 0) return 0;
    int b = 1;
    std::int64_t v = delta_seconds + 1;  // floor(log2(1+delta)) + 1
    while (v > 1 && b < 31) {
        v >>= 1;
        ++b;
    }
    return b;
}

int pre_request_bucket(std::int64_t ts, std::span<const std::int64_t> prior_ts) {
    std::int64_t prev = -1;
    bool found = false;
    for (std::int64_t t : prior_ts) {
        if (t < ts && (!found || t > prev)) {
            prev = t;
            found = true;
        }
    }
    if (!found) return 0;
    return time_bucket_of_gap(ts - prev);
}

std::uint32_t label_bits(const ExposureLog& log, const std::vector<std::string>& tasks) {
    std::uint32_t bits = 0;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        auto it = log.labels.find(tasks[t]);
        if (it == log.labels.end()) {
            throw ValidationError("log record missing label for task '" + tasks[t] + "'");
        }
        if (it->second == 1) bits |= (1u << t);
    }
    return bits;
}

namespace {

TokenizedSequence build_impl(std::span<const ExposureLog> history,
                             std::span<const std::int64_t> candidate_ids,
                             std::span<const std::uint32_t> candidate_bits,
                             std::int64_t now, OrganizationKind org,
                             const std::vector<std::string>& tasks,
                             const BuildOptions& opts) {
    if (candidate_ids.empty()) throw ConfigError("build_sequence: empty candidate set");
    const int c = static_cast<int>(candidate_ids.size());
    const int per_item = org == OrganizationKind::kActionOriented ? 1 : 2;
    if (opts.max_len < per_item + c) {
        // below this not even one history item plus candidates fits; candidates alone still may
        if (opts.max_len < c) throw ConfigError("build_sequence: max_len smaller than candidate count");
    }
    for (std::size_t i = 1; i < history.size(); ++i) {
        if (history[i].ts < history[i - 1].ts) {
            throw ValidationError("build_sequence: history not chronologically sorted");
        }
        if (history[i].user_id != history[i - 1].user_id) {
            throw ValidationError("build_sequence: history spans multiple users");
        }
    }
    if (!history.empty() && now < history.back().ts) {
        throw ValidationError("build_sequence: 'now' precedes last history timestamp");
    }

    const int keep_budget = std::max(0, (opts.max_len - c) / per_item);
    const int n = std::min(static_cast<int>(history.size()), keep_budget);
    const std::size_t start = history.size() - static_cast<std::size_t>(n);

    TokenizedSequence seq;
    seq.organization = org;
    seq.history_len = n;
    seq.candidate_count = c;
    seq.history_tokens = n * per_item;
    seq.fully_visible_history = opts.fully_visible_history;
    seq.tokens.reserve(static_cast<std::size_t>(seq.history_tokens + c));

    std::vector<std::int64_t> kept_ts(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) kept_ts[static_cast<std::size_t>(i)] = history[start + i].ts;

    // which kept history ordinals carry loss under the IncludeHistory ablation
    std::vector<bool> history_loss(static_cast<std::size_t>(n), false);
    if (opts.history_loss_fraction > 0.0) {
        auto rng = make_rng(opts.history_loss_seed, 0x4157u);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        for (int i = 0; i < n; ++i) {
            history_loss[static_cast<std::size_t>(i)] = unif(rng) < opts.history_loss_fraction;
        }
    }

    for (int i = 0; i < n; ++i) {
        const ExposureLog& log = history[start + i];
        const std::uint32_t bits = label_bits(log, tasks);
        const int pos = position_index(i, false, n);
        const int req = request_index(std::span<const std::int64_t>(kept_ts.data(),
                                                                    static_cast<std::size_t>(i + 1)));
        const int bkt = pre_request_bucket(
            log.ts, std::span<const std::int64_t>(kept_ts.data(), static_cast<std::size_t>(i)));
        const bool with_loss = history_loss[static_cast<std::size_t>(i)];

        if (org == OrganizationKind::kActionOriented) {
            Token tok;
            tok.item = log.item_id;
            tok.has_action = true;
            tok.action_masked = with_loss;  // loss-at-history: hide the action being predicted
            tok.action_bits = with_loss ? 0u : bits;
            tok.position = pos;
            tok.request = req;
            tok.time_bucket = bkt;
            tok.ts = log.ts;
            if (with_loss) {
                seq.loss_positions.push_back(static_cast<int>(seq.tokens.size()));
                seq.loss_labels.push_back(bits);
            }
            seq.tokens.push_back(tok);
        } else {
            Token item_tok;
            item_tok.item = log.item_id;
            item_tok.position = pos;
            item_tok.request = req;
            item_tok.time_bucket = bkt;
            item_tok.ts = log.ts;
            if (with_loss) {
                seq.loss_positions.push_back(static_cast<int>(seq.tokens.size()));
                seq.loss_labels.push_back(bits);
            }
            seq.tokens.push_back(item_tok);

            Token act_tok;
            act_tok.has_action = true;
            act_tok.action_bits = bits;
            act_tok.position = pos;
            act_tok.request = req;
            act_tok.time_bucket = bkt;
            act_tok.ts = log.ts;
            seq.tokens.push_back(act_tok);
        }
    }

    const int cand_pos = position_index(0, true, n);
    const int cand_req = request_index(std::span<const std::int64_t>(kept_ts.data(), kept_ts.size())) + 1;
    const int cand_bkt = n == 0 ? 0 : time_bucket_of_gap(now - kept_ts.back());

    for (int j = 0; j < c; ++j) {
        Token tok;
        tok.item = candidate_ids[static_cast<std::size_t>(j)];
        tok.position = cand_pos;
        tok.request = cand_req;
        tok.time_bucket = cand_bkt;
        tok.ts = now;
        if (org == OrganizationKind::kActionOriented) {
            tok.has_action = true;
            tok.action_masked = true;
        }
        seq.loss_positions.push_back(static_cast<int>(seq.tokens.size()));
        seq.loss_labels.push_back(candidate_bits.empty() ? 0u
                                                         : candidate_bits[static_cast<std::size_t>(j)]);
        seq.tokens.push_back(tok);
    }
    return seq;
}

}  // namespace

TokenizedSequence build_sequence(std::span<const ExposureLog> history,
                                 std::span<const std::int64_t> candidates,
                                 std::int64_t now, OrganizationKind org,
                                 const std::vector<std::string>& tasks,
                                 const BuildOptions& opts) {
    return build_impl(history, candidates, {}, now, org, tasks, opts);
}

TokenizedSequence build_training_sequence(std::span<const ExposureLog> history,
                                          std::span<const ExposureLog> request_logs,
                                          OrganizationKind org,
                                          const std::vector<std::string>& tasks,
                                          const BuildOptions& opts) {
    if (request_logs.empty()) throw ConfigError("build_training_sequence: empty request");
    std::vector<std::int64_t> ids;
    std::vector<std::uint32_t> bits;
    ids.reserve(request_logs.size());
    bits.reserve(request_logs.size());
    for (const auto& log : request_logs) {
        ids.push_back(log.item_id);
        bits.push_back(label_bits(log, tasks));
    }
    return build_impl(history, ids, bits, request_logs.front().ts, org, tasks, opts);
}

}  // namespace genrank
