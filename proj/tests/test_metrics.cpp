#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "genrank/common.hpp"
#include "genrank/metrics.hpp"

#include <random>

using namespace genrank;

TEST_CASE("auc perfect ranking") {
    auto a = auc({0.9, 0.1}, {1, 0});
    REQUIRE(a.has_value());
    CHECK(*a == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("auc all ties is one half") {
    auto a = auc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0});
    REQUIRE(a.has_value());
    CHECK(*a == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("auc single class is undefined") {
    CHECK_FALSE(auc({0.1, 0.2}, {1, 1}).has_value());
    CHECK_FALSE(auc({0.1, 0.2}, {0, 0}).has_value());
    CHECK_FALSE(auc_pairwise({0.1, 0.2}, {1, 1}).has_value());
}

TEST_CASE("auc rejects non-binary labels") {
    CHECK_THROWS_AS((void)auc({0.1, 0.2}, {1, 2}), ValidationError);
}

TEST_CASE("rank-based auc equals pairwise oracle on random instances") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> score(0.0, 1.0);
    std::uniform_int_distribution<int> label(0, 1);
    std::uniform_int_distribution<int> size(2, 200);
    std::uniform_int_distribution<int> coarse(0, 9);
    for (int trial = 0; trial < 300; ++trial) {
        const int n = size(rng);
        std::vector<double> scores;
        std::vector<int> labels;
        bool ties = trial % 2 == 0;  // exercise heavy tie groups as well
        for (int i = 0; i < n; ++i) {
            scores.push_back(ties ? coarse(rng) / 10.0 : score(rng));
            labels.push_back(label(rng));
        }
        auto fast = auc(scores, labels);
        auto oracle = auc_pairwise(scores, labels);
        REQUIRE(fast.has_value() == oracle.has_value());
        if (fast) CHECK(std::abs(*fast - *oracle) <= 1e-12);
    }
}

TEST_CASE("gauc single user equals that user's auc") {
    std::vector<double> scores{0.1, 0.9, 0.4};
    std::vector<int> labels{0, 1, 1};
    std::vector<std::int64_t> users{5, 5, 5};
    auto g = gauc(scores, labels, users);
    REQUIRE(g.gauc.has_value());
    CHECK(*g.gauc == doctest::Approx(*auc(scores, labels)).epsilon(1e-12));
    CHECK(g.excluded_users == 0);
}

TEST_CASE("gauc weighted mean example") {
    // user A: auc 1.0 with 10 exposures; user B: auc 0.5 with 30 exposures
    std::vector<double> scores;
    std::vector<int> labels;
    std::vector<std::int64_t> users;
    for (int i = 0; i < 5; ++i) {
        scores.push_back(0.9);
        labels.push_back(1);
        users.push_back(1);
        scores.push_back(0.1);
        labels.push_back(0);
        users.push_back(1);
    }
    for (int i = 0; i < 15; ++i) {
        scores.push_back(0.5);
        labels.push_back(i % 2);
        users.push_back(2);
        scores.push_back(0.5);
        labels.push_back((i + 1) % 2);
        users.push_back(2);
    }
    auto g = gauc(scores, labels, users);
    REQUIRE(g.gauc.has_value());
    CHECK(*g.gauc == doctest::Approx(0.625).epsilon(1e-12));
    CHECK(g.per_user.at(1).weight == doctest::Approx(10.0));
    CHECK(g.per_user.at(2).weight == doctest::Approx(30.0));
}

TEST_CASE("gauc equals direct per-user oracle on random data") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> score(0.0, 1.0);
    std::uniform_int_distribution<int> label(0, 1);
    std::uniform_int_distribution<std::int64_t> user(0, 12);
    std::vector<double> scores;
    std::vector<int> labels;
    std::vector<std::int64_t> users;
    for (int i = 0; i < 2000; ++i) {
        scores.push_back(score(rng));
        labels.push_back(label(rng));
        users.push_back(user(rng));
    }
    auto g = gauc(scores, labels, users);
    REQUIRE(g.gauc.has_value());

    // direct oracle: group, per-user pairwise auc, exposure-count weights
    std::map<std::int64_t, std::pair<std::vector<double>, std::vector<int>>> by_user;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        by_user[users[i]].first.push_back(scores[i]);
        by_user[users[i]].second.push_back(labels[i]);
    }
    double num = 0, den = 0;
    for (auto& [u, sl] : by_user) {
        auto a = auc_pairwise(sl.first, sl.second);
        if (!a) continue;
        num += *a * static_cast<double>(sl.first.size());
        den += static_cast<double>(sl.first.size());
    }
    CHECK(std::abs(*g.gauc - num / den) <= 1e-12);
}

TEST_CASE("gauc all users single-class is undefined and counted") {
    std::vector<double> scores{0.1, 0.9, 0.2};
    std::vector<int> labels{1, 1, 0};
    std::vector<std::int64_t> users{1, 1, 2};
    auto g = gauc(scores, labels, users);
    CHECK_FALSE(g.gauc.has_value());
    CHECK(g.excluded_users == 2);
}
