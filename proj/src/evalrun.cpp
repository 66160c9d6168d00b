#include "genrank/evalrun.hpp"

#include "genrank/network.hpp"
#include "genrank/trainer.hpp"

namespace genrank {

namespace {

template <class S>
std::vector<ScoredRecord> score_impl(const CheckpointMeta& meta, const ModelParams<S>& params,
                                     const std::vector<ExposureLog>& logs,
                                     const EvalOptions& opts, const MatXf* side_catalog,
                                     long* skipped_out) {
    const ModelConfig& mc = meta.config;
    MatX<S> side;
    const MatX<S>* side_ptr = nullptr;
    if (mc.side_dim > 0) {
        if (side_catalog == nullptr) {
            throw ConfigError("eval: model has side_dim > 0 but no side catalog given");
        }
        side = side_catalog->cast<S>();
        side_ptr = &side;
    }

    BuildOptions bopts;
    bopts.max_len = mc.max_len;
    bopts.fully_visible_history = meta.fully_visible_history;

    std::vector<ScoredRecord> records;
    long skipped = 0;
    for (const auto& user : group_by_user(logs)) {
        for (const auto& req : user.requests) {
            if (static_cast<int>(req.begin) < opts.min_history) {
                skipped += static_cast<long>(req.end - req.begin);
                continue;
            }
            std::span<const ExposureLog> history(user.logs.data(), req.begin);
            std::span<const ExposureLog> request_logs(user.logs.data() + req.begin,
                                                      req.end - req.begin);
            TokenizedSequence seq = build_training_sequence(history, request_logs,
                                                            meta.organization, mc.tasks, bopts);
            MatX<S> scores = forward<S>(mc, params, seq, side_ptr, nullptr);
            for (Eigen::Index c = 0; c < scores.rows(); ++c) {
                ScoredRecord rec;
                rec.user = user.user;
                rec.request = request_logs[static_cast<std::size_t>(c)].request_id;
                rec.item = request_logs[static_cast<std::size_t>(c)].item_id;
                rec.label_bits = seq.loss_labels[static_cast<std::size_t>(c)];
                rec.scores.resize(static_cast<std::size_t>(scores.cols()));
                for (Eigen::Index t = 0; t < scores.cols(); ++t) {
                    rec.scores[static_cast<std::size_t>(t)] = static_cast<double>(scores(c, t));
                }
                records.push_back(std::move(rec));
            }
        }
    }
    if (skipped_out) *skipped_out = skipped;
    return records;
}

}  // namespace

std::vector<ScoredRecord> score_logs(const LoadedCheckpoint& ckpt,
                                     const std::vector<ExposureLog>& logs,
                                     const EvalOptions& opts, const MatXf* side_catalog) {
    long skipped = 0;
    if (ckpt.meta.config.precision == Precision::kFloat32) {
        return score_impl<float>(ckpt.meta, ckpt.params_f32, logs, opts, side_catalog, &skipped);
    }
    return score_impl<double>(ckpt.meta, ckpt.params_f64, logs, opts, side_catalog, &skipped);
}

MetricReport metrics_from_records(const std::vector<ScoredRecord>& records,
                                  const std::vector<std::string>& tasks, long skipped) {
    MetricReport report;
    report.evaluated_records = static_cast<long>(records.size());
    report.skipped_records = skipped;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        std::vector<double> scores;
        std::vector<int> labels;
        std::vector<std::int64_t> users;
        scores.reserve(records.size());
        for (const auto& rec : records) {
            scores.push_back(rec.scores[t]);
            const int y = (rec.label_bits & (1u << t)) ? 1 : 0;
            labels.push_back(y);
            users.push_back(rec.user);
        }
        TaskMetrics tm;
        tm.auc = auc(scores, labels);
        tm.gauc = gauc(scores, labels, users);
        tm.total = static_cast<long>(labels.size());
        for (int y : labels) tm.positives += y;
        report.tasks[tasks[t]] = std::move(tm);
    }
    return report;
}

MetricReport evaluate_checkpoint(const LoadedCheckpoint& ckpt,
                                 const std::vector<ExposureLog>& logs, const EvalOptions& opts,
                                 const MatXf* side_catalog) {
    long skipped = 0;
    std::vector<ScoredRecord> records;
    if (ckpt.meta.config.precision == Precision::kFloat32) {
        records = score_impl<float>(ckpt.meta, ckpt.params_f32, logs, opts, side_catalog, &skipped);
    } else {
        records = score_impl<double>(ckpt.meta, ckpt.params_f64, logs, opts, side_catalog, &skipped);
    }
    return metrics_from_records(records, ckpt.meta.config.tasks, skipped);
}

}  // namespace genrank
