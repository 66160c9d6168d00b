#pragma once

#include "genrank/datagen.hpp"

#include <random>
#include <vector>

namespace genrank {

// Random single-user history for probes, benchmarks and tests: requests of
// 1..4 items at random gaps, random labels.
inline std::vector<ExposureLog> synthetic_history(int n, long vocab,
                                                  const std::vector<std::string>& tasks,
                                                  std::mt19937_64& rng,
                                                  std::int64_t base_ts = 1600000000) {
    std::uniform_int_distribution<long> item(0, vocab - 1);
    std::uniform_int_distribution<int> per_req(1, 4);
    std::uniform_int_distribution<std::int64_t> gap(30, 7200);
    std::uniform_int_distribution<int> coin(0, 1);
    std::vector<ExposureLog> logs;
    std::int64_t ts = base_ts;
    std::int64_t req = 0;
    while (static_cast<int>(logs.size()) < n) {
        const int k = std::min(per_req(rng), n - static_cast<int>(logs.size()));
        ts += gap(rng);
        for (int i = 0; i < k; ++i) {
            ExposureLog log;
            log.user_id = 0;
            log.request_id = req;
            log.ts = ts;
            log.item_id = item(rng);
            for (const auto& t : tasks) log.labels[t] = coin(rng);
            logs.push_back(std::move(log));
        }
        ++req;
    }
    return logs;
}

inline std::vector<std::int64_t> synthetic_candidates(int c, long vocab, std::mt19937_64& rng) {
    std::uniform_int_distribution<long> item(0, vocab - 1);
    std::vector<std::int64_t> out;
    out.reserve(static_cast<std::size_t>(c));
    for (int i = 0; i < c; ++i) out.push_back(item(rng));
    return out;
}

}  // namespace genrank
