#pragma once

#include "genrank/datagen.hpp"
#include "genrank/metrics.hpp"
#include "genrank/model.hpp"

#include <string>
#include <vector>

namespace genrank {

struct EvalOptions {
    int min_history = 0;  // skip requests with fewer prior history items
};

struct ScoredRecord {
    std::int64_t user = 0;
    std::int64_t request = 0;
    std::int64_t item = 0;
    std::vector<double> scores;  // per task, pre-sigmoid
    std::uint32_t label_bits = 0;
};

// Replays each user's request stream through the model: history = all prior
// exposures, candidates = the request's items.
std::vector<ScoredRecord> score_logs(const LoadedCheckpoint& ckpt,
                                     const std::vector<ExposureLog>& logs,
                                     const EvalOptions& opts = {},
                                     const MatXf* side_catalog = nullptr);

MetricReport metrics_from_records(const std::vector<ScoredRecord>& records,
                                  const std::vector<std::string>& tasks, long skipped);

MetricReport evaluate_checkpoint(const LoadedCheckpoint& ckpt,
                                 const std::vector<ExposureLog>& logs,
                                 const EvalOptions& opts = {},
                                 const MatXf* side_catalog = nullptr);

}  // namespace genrank
