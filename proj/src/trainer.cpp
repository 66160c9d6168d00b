#include "genrank/trainer.hpp"

#include "genrank/network.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

namespace genrank {

std::string to_string(SampleGrouping g) {
    return g == SampleGrouping::kGroupedByUser ? "grouped_by_user" : "pointwise_shuffled";
}
std::string to_string(LossScope s) {
    return s == LossScope::kCandidatesOnly ? "candidates_only" : "include_history";
}
std::string to_string(HistoryMask m) {
    return m == HistoryMask::kCausal ? "causal" : "fully_visible";
}

namespace {

SampleGrouping grouping_from_string(const std::string& s) {
    if (s == "grouped_by_user" || s == "grouped") return SampleGrouping::kGroupedByUser;
    if (s == "pointwise_shuffled" || s == "pointwise") return SampleGrouping::kPointwiseShuffled;
    throw ConfigError("unknown sample_grouping: " + s);
}

LossScope loss_scope_from_string(const std::string& s) {
    if (s == "candidates_only") return LossScope::kCandidatesOnly;
    if (s == "include_history") return LossScope::kIncludeHistory;
    throw ConfigError("unknown loss_scope: " + s);
}

HistoryMask history_mask_from_string(const std::string& s) {
    if (s == "causal") return HistoryMask::kCausal;
    if (s == "fully_visible") return HistoryMask::kFullyVisible;
    throw ConfigError("unknown history_mask: " + s);
}

struct SampleSpec {
    std::size_t user_index = 0;
    std::size_t request_index = 0;
    std::uint64_t loss_seed = 0;
};

std::vector<SampleSpec> make_sample_specs(const std::vector<UserLogs>& users,
                                          const TrainConfig& tc) {
    std::vector<SampleSpec> specs;
    for (std::size_t ui = 0; ui < users.size(); ++ui) {
        for (std::size_t ri = 0; ri < users[ui].requests.size(); ++ri) {
            SampleSpec s;
            s.user_index = ui;
            s.request_index = ri;
            // order-independent per-sample stream so grouped and pointwise runs
            // build identical sequences
            s.loss_seed = splitmix64(tc.seed ^ splitmix64(static_cast<std::uint64_t>(users[ui].user) * 0x9E3779B1u + ri));
            specs.push_back(s);
        }
    }
    return specs;
}

TokenizedSequence build_spec_sequence(const std::vector<UserLogs>& users, const SampleSpec& spec,
                                      const TrainConfig& tc,
                                      const std::vector<std::string>& tasks) {
    const UserLogs& u = users[spec.user_index];
    const RequestSpan& req = u.requests[spec.request_index];
    BuildOptions opts;
    opts.max_len = tc.max_len;
    opts.fully_visible_history = tc.history_mask == HistoryMask::kFullyVisible;
    opts.history_loss_fraction =
        tc.loss_scope == LossScope::kIncludeHistory ? tc.history_loss_fraction : 0.0;
    opts.history_loss_seed = spec.loss_seed;
    std::span<const ExposureLog> history(u.logs.data(), req.begin);
    std::span<const ExposureLog> request_logs(u.logs.data() + req.begin, req.end - req.begin);
    return build_training_sequence(history, request_logs, tc.organization, tasks, opts);
}

}  // namespace

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (lr <= 0) throw ConfigError("train: lr must be > 0");
    if (max_len < 2) throw ConfigError("train: max_len must be >= 2");
    if (history_loss_fraction < 0 || history_loss_fraction > 1) {
        throw ConfigError("train: history_loss_fraction outside [0,1]");
    }
}

TrainConfig TrainConfig::from_kv(const KvMap& kv) {
    TrainConfig c;
    c.organization = organization_from_string(kv_get(kv, "organization", to_string(c.organization)));
    c.grouping = grouping_from_string(kv_get(kv, "sample_grouping", to_string(c.grouping)));
    c.loss_scope = loss_scope_from_string(kv_get(kv, "loss_scope", to_string(c.loss_scope)));
    c.history_loss_fraction = kv_get_double(kv, "history_loss_fraction", c.history_loss_fraction);
    c.history_mask = history_mask_from_string(kv_get(kv, "history_mask", to_string(c.history_mask)));
    c.batch_size = static_cast<int>(kv_get_int(kv, "batch_size", c.batch_size));
    c.lr = kv_get_double(kv, "lr", c.lr);
    c.beta1 = kv_get_double(kv, "beta1", c.beta1);
    c.beta2 = kv_get_double(kv, "beta2", c.beta2);
    c.adam_eps = kv_get_double(kv, "adam_eps", c.adam_eps);
    c.weight_decay = kv_get_double(kv, "weight_decay", c.weight_decay);
    c.epochs = static_cast<int>(kv_get_int(kv, "epochs", c.epochs));
    c.seed = static_cast<std::uint64_t>(kv_get_int(kv, "seed", static_cast<long long>(c.seed)));
    c.max_len = static_cast<int>(kv_get_int(kv, "max_len", c.max_len));
    c.deterministic = kv_get_bool(kv, "deterministic", c.deterministic);
    c.validate();
    return c;
}

std::vector<UserLogs> group_by_user(const std::vector<ExposureLog>& logs) {
    std::map<std::int64_t, std::size_t> index;
    std::vector<UserLogs> users;
    for (const auto& log : logs) {
        auto [it, inserted] = index.try_emplace(log.user_id, users.size());
        if (inserted) {
            users.push_back(UserLogs{});
            users.back().user = log.user_id;
        }
        users[it->second].logs.push_back(log);
    }
    // deterministic user order by id
    std::sort(users.begin(), users.end(),
              [](const UserLogs& a, const UserLogs& b) { return a.user < b.user; });
    for (auto& u : users) {
        std::size_t i = 0;
        while (i < u.logs.size()) {
            std::size_t j = i;
            while (j + 1 < u.logs.size() && u.logs[j + 1].request_id == u.logs[i].request_id) ++j;
            u.requests.push_back({i, j + 1});
            i = j + 1;
        }
    }
    return users;
}

std::vector<TokenizedSequence> build_training_samples(const std::vector<ExposureLog>& logs,
                                                      const TrainConfig& tc,
                                                      const std::vector<std::string>& tasks) {
    tc.validate();
    auto users = group_by_user(logs);
    auto specs = make_sample_specs(users, tc);
    if (tc.grouping == SampleGrouping::kPointwiseShuffled) {
        auto rng = make_rng(tc.seed, 0x0DDE7);
        std::shuffle(specs.begin(), specs.end(), rng);
    }
    std::vector<TokenizedSequence> out;
    out.reserve(specs.size());
    for (const auto& spec : specs) {
        out.push_back(build_spec_sequence(users, spec, tc, tasks));
    }
    return out;
}

template <class S>
void adamw_step(ModelParams<S>& params, ModelParams<S>& grads, AdamState<S>& state,
                const TrainConfig& tc) {
    ++state.step;
    const double bc1 = 1.0 - std::pow(tc.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(tc.beta2, static_cast<double>(state.step));
    auto prefs = tensor_refs(params);
    auto grefs = tensor_refs(grads);
    auto mrefs = tensor_refs(state.m);
    auto vrefs = tensor_refs(state.v);
    for (std::size_t t = 0; t < prefs.size(); ++t) {
        S* p = prefs[t].data;
        const S* g = grefs[t].data;
        S* m = mrefs[t].data;
        S* v = vrefs[t].data;
        const long n = prefs[t].size;
        for (long i = 0; i < n; ++i) {
            m[i] = static_cast<S>(tc.beta1 * m[i] + (1.0 - tc.beta1) * g[i]);
            v[i] = static_cast<S>(tc.beta2 * v[i] + (1.0 - tc.beta2) * g[i] * g[i]);
            const double mh = m[i] / bc1;
            const double vh = v[i] / bc2;
            const double update = mh / (std::sqrt(vh) + tc.adam_eps) + tc.weight_decay * p[i];
            p[i] = static_cast<S>(p[i] - tc.lr * update);
        }
    }
    ++params.revision;
}

template void adamw_step(ModelParams<float>&, ModelParams<float>&, AdamState<float>&,
                         const TrainConfig&);
template void adamw_step(ModelParams<double>&, ModelParams<double>&, AdamState<double>&,
                         const TrainConfig&);

namespace {

template <class S>
TrainReport train_impl(const std::vector<ExposureLog>& logs, const TrainConfig& tc,
                       const ModelConfig& mc, const std::string& checkpoint_path,
                       const MatXf* side_catalog) {
    auto users = group_by_user(logs);
    ModelParams<S> params = make_params<S>(mc);
    init_params(mc, params, tc.seed);
    ModelParams<S> grads = make_params<S>(mc);
    AdamState<S> state{make_params<S>(mc), make_params<S>(mc), 0};

    MatX<S> side;
    const MatX<S>* side_ptr = nullptr;
    if (mc.side_dim > 0) {
        if (side_catalog == nullptr) {
            throw ConfigError("train: model has side_dim > 0 but no side catalog given");
        }
        if (side_catalog->cols() != mc.side_dim) {
            throw ConfigError("train: side catalog width does not match model side_dim");
        }
        side = side_catalog->cast<S>();
        side_ptr = &side;
    }

    TrainReport report;
    long total_tokens = 0;
    const auto t_start = std::chrono::steady_clock::now();

    std::vector<SampleSpec> base_specs = make_sample_specs(users, tc);
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        std::vector<SampleSpec> specs = base_specs;
        if (tc.grouping == SampleGrouping::kPointwiseShuffled) {
            auto rng = make_rng(tc.seed + static_cast<std::uint64_t>(epoch), 0x0DDE7);
            std::shuffle(specs.begin(), specs.end(), rng);
        }
        for (std::size_t batch_start = 0; batch_start < specs.size();
             batch_start += static_cast<std::size_t>(tc.batch_size)) {
            const std::size_t batch_end =
                std::min(specs.size(), batch_start + static_cast<std::size_t>(tc.batch_size));
            const auto t0 = std::chrono::steady_clock::now();

            // first pass: loss element count for flat-mean normalization
            std::vector<TokenizedSequence> seqs;
            seqs.reserve(batch_end - batch_start);
            long batch_elements = 0;
            for (std::size_t s = batch_start; s < batch_end; ++s) {
                seqs.push_back(build_spec_sequence(users, specs[s], tc, mc.tasks));
                batch_elements +=
                    static_cast<long>(seqs.back().loss_positions.size()) * mc.num_tasks();
                total_tokens += seqs.back().length();
            }
            if (batch_elements == 0) continue;

            for (auto& ref : tensor_refs(grads)) std::fill(ref.data, ref.data + ref.size, S(0));
            double loss_sum = 0.0;
            ForwardTrace<S> trace;
            for (const auto& seq : seqs) {
                MatX<S> scores = forward<S>(mc, params, seq, side_ptr, &trace);
                BceSum<S> bce = bce_sum<S>(scores, seq);
                loss_sum += bce.sum;
                MatX<S> dscores = bce.dsum / static_cast<S>(batch_elements);
                backward<S>(mc, params, seq, side_ptr, trace, dscores, grads);
            }
            const double loss = loss_sum / static_cast<double>(batch_elements);
            if (!std::isfinite(loss)) {
                throw DivergenceError("training diverged at step " +
                                      std::to_string(report.steps) + ": loss=" +
                                      std::to_string(loss));
            }
            adamw_step(params, grads, state, tc);

            const auto t1 = std::chrono::steady_clock::now();
            report.loss_trace.push_back(loss);
            report.step_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
            ++report.steps;
            report.sequences += static_cast<long>(seqs.size());
        }
    }

    const auto t_end = std::chrono::steady_clock::now();
    const double secs = std::chrono::duration<double>(t_end - t_start).count();
    report.tokens_per_sec = secs > 0 ? static_cast<double>(total_tokens) / secs : 0.0;
    report.final_loss = report.loss_trace.empty() ? 0.0 : report.loss_trace.back();

    CheckpointMeta meta;
    meta.config = mc;
    meta.organization = tc.organization;
    meta.fully_visible_history = tc.history_mask == HistoryMask::kFullyVisible;
    save_checkpoint(checkpoint_path, meta, params);
    report.checkpoint_path = checkpoint_path;
    return report;
}

}  // namespace

TrainReport train(const std::vector<ExposureLog>& logs, const TrainConfig& tc,
                  const ModelConfig& mc, const std::string& checkpoint_path,
                  const MatXf* side_catalog) {
    tc.validate();
    mc.validate();
    if (mc.precision == Precision::kFloat64) {
        return train_impl<double>(logs, tc, mc, checkpoint_path, side_catalog);
    }
    return train_impl<float>(logs, tc, mc, checkpoint_path, side_catalog);
}

std::string train_manifest_text(const TrainConfig& tc, const ModelConfig& mc,
                                const TrainReport& report) {
    std::ostringstream out;
    out << "organization=" << to_string(tc.organization) << "\n";
    out << "sample_grouping=" << to_string(tc.grouping) << "\n";
    out << "loss_scope=" << to_string(tc.loss_scope) << "\n";
    out << "history_loss_fraction=" << tc.history_loss_fraction << "\n";
    out << "history_mask=" << to_string(tc.history_mask) << "\n";
    out << "batch_size=" << tc.batch_size << "\n";
    out << "lr=" << tc.lr << "\n";
    out << "beta1=" << tc.beta1 << "\n";
    out << "beta2=" << tc.beta2 << "\n";
    out << "adam_eps=" << tc.adam_eps << "\n";
    out << "weight_decay=" << tc.weight_decay << "\n";
    out << "epochs=" << tc.epochs << "\n";
    out << "seed=" << tc.seed << "\n";
    out << "max_len=" << tc.max_len << "\n";
    out << "deterministic=" << (tc.deterministic ? "true" : "false") << "\n";
    out << "num_blocks=" << mc.num_blocks << "\n";
    out << "num_heads=" << mc.num_heads << "\n";
    out << "hidden_dim=" << mc.hidden_dim << "\n";
    out << "ffn_multiplier=" << mc.ffn_multiplier << "\n";
    out << "item_vocab=" << mc.item_vocab << "\n";
    out << "model_max_len=" << mc.max_len << "\n";
    out << "time_buckets=" << mc.time_buckets << "\n";
    out << "side_dim=" << mc.side_dim << "\n";
    out << "bias_mode=" << to_string(mc.bias_mode) << "\n";
    out << "precision=" << to_string(mc.precision) << "\n";
    std::string tasks;
    for (const auto& t : mc.tasks) {
        if (!tasks.empty()) tasks += ",";
        tasks += t;
    }
    out << "tasks=" << tasks << "\n";
    out << "steps=" << report.steps << "\n";
    out << "sequences=" << report.sequences << "\n";
    out << "final_loss=" << report.final_loss << "\n";
    return out.str();
}

}  // namespace genrank
