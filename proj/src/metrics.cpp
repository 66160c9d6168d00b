#include "genrank/metrics.hpp"

#include "genrank/common.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <numeric>

namespace genrank {

std::optional<double> auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) {
        throw ValidationError("auc: scores and labels differ in length");
    }
    const std::size_t n = scores.size();
    long pos = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw ValidationError("auc: non-binary label");
        pos += y;
    }
    const long neg = static_cast<long>(n) - pos;
    if (pos == 0 || neg == 0) return std::nullopt;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Average ranks over tied score groups; ties then contribute 1/2 pairwise.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k) {
            if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
        }
        i = j + 1;
    }
    const double p = static_cast<double>(pos);
    const double q = static_cast<double>(neg);
    return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q);
}

std::optional<double> auc_pairwise(const std::vector<double>& scores,
                                   const std::vector<int>& labels) {
    if (scores.size() != labels.size()) {
        throw ValidationError("auc: scores and labels differ in length");
    }
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw ValidationError("auc: non-binary label");
        (labels[i] == 1 ? pos : neg).push_back(scores[i]);
    }
    if (pos.empty() || neg.empty()) return std::nullopt;
    double wins = 0.0;
    for (double sp : pos) {
        for (double sn : neg) {
            if (sp > sn) wins += 1.0;
            else if (sp == sn) wins += 0.5;
        }
    }
    return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

GaucResult gauc(const std::vector<double>& scores, const std::vector<int>& labels,
                const std::vector<std::int64_t>& user_ids) {
    if (scores.size() != labels.size() || scores.size() != user_ids.size()) {
        throw ValidationError("gauc: input lengths differ");
    }
    std::map<std::int64_t, std::pair<std::vector<double>, std::vector<int>>> by_user;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        auto& slot = by_user[user_ids[i]];
        slot.first.push_back(scores[i]);
        slot.second.push_back(labels[i]);
    }
    GaucResult res;
    double weighted = 0.0;
    double total_weight = 0.0;
    for (const auto& [user, sl] : by_user) {
        const auto a = auc(sl.first, sl.second);
        if (!a) {
            ++res.excluded_users;
            continue;
        }
        UserAuc ua;
        ua.auc = *a;
        ua.weight = static_cast<double>(sl.first.size());
        res.per_user[user] = ua;
        weighted += ua.auc * ua.weight;
        total_weight += ua.weight;
    }
    if (total_weight > 0.0) res.gauc = weighted / total_weight;
    return res;
}

std::string MetricReport::to_json() const {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["evaluated_records"] = evaluated_records;
    j["skipped_records"] = skipped_records;
    nlohmann::ordered_json jt = nlohmann::ordered_json::object();
    for (const auto& [name, m] : tasks) {
        nlohmann::ordered_json t;
        t["auc"] = m.auc ? nlohmann::ordered_json(*m.auc) : nlohmann::ordered_json(nullptr);
        t["gauc"] = m.gauc.gauc ? nlohmann::ordered_json(*m.gauc.gauc) : nlohmann::ordered_json(nullptr);
        t["excluded_users"] = m.gauc.excluded_users;
        t["positives"] = m.positives;
        t["total"] = m.total;
        nlohmann::ordered_json pu = nlohmann::ordered_json::object();
        for (const auto& [user, ua] : m.gauc.per_user) {
            pu[std::to_string(user)] = {{"auc", ua.auc}, {"weight", ua.weight}};
        }
        t["per_user"] = std::move(pu);
        jt[name] = std::move(t);
    }
    j["tasks"] = std::move(jt);
    return j.dump(2);
}

}  // namespace genrank
