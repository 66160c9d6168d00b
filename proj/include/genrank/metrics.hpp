#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace genrank {

// Probability that a random positive outscores a random negative, ties 1/2.
// Rank-based, O(n log n). nullopt when one class is absent.
std::optional<double> auc(const std::vector<double>& scores, const std::vector<int>& labels);

// O(n^2) pairwise reference implementation; the definitional route the
// rank-based version is verified against.
std::optional<double> auc_pairwise(const std::vector<double>& scores,
                                   const std::vector<int>& labels);

struct UserAuc {
    double auc = 0.0;
    double weight = 0.0;  // exposure count
};

struct GaucResult {
    std::optional<double> gauc;            // nullopt when every user is single-class
    std::map<std::int64_t, UserAuc> per_user;  // users with both classes
    long excluded_users = 0;               // single-class users
};

// Exposure-weighted mean of per-user AUC over users with both label classes.
GaucResult gauc(const std::vector<double>& scores, const std::vector<int>& labels,
                const std::vector<std::int64_t>& user_ids);

struct TaskMetrics {
    std::optional<double> auc;
    GaucResult gauc;
    long positives = 0;
    long total = 0;
};

struct MetricReport {
    std::map<std::string, TaskMetrics> tasks;
    long evaluated_records = 0;
    long skipped_records = 0;  // filtered out (e.g. below min history)
    std::string to_json() const;  // schema_version-tagged report
};

}  // namespace genrank
