#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "genrank/datagen.hpp"
#include "genrank/metrics.hpp"

#include <filesystem>
#include <set>
#include <unordered_set>

namespace fs = std::filesystem;
using namespace genrank;

namespace {

fs::path temp_dir() {
    auto dir = fs::temp_directory_path() / "genrank_datagen_test";
    fs::create_directories(dir);
    return dir;
}

GeneratorConfig small_config() {
    GeneratorConfig cfg;
    cfg.num_users = 20;
    cfg.num_items = 50;
    cfg.latent_dim = 4;
    cfg.requests_per_user = 10;
    cfg.items_per_request = 3;
    cfg.seed = 42;
    return cfg;
}

}  // namespace

TEST_CASE("record and request counts match the configuration") {
    GeneratorConfig cfg;
    cfg.num_users = 100;
    cfg.num_items = 200;
    cfg.requests_per_user = 50;
    cfg.items_per_request = 4;
    cfg.seed = 3;
    auto data = generate_logs(cfg);
    CHECK(data.logs.size() == 20000);  // 100*50*4
    std::set<std::int64_t> requests;
    for (const auto& log : data.logs) requests.insert(log.request_id);
    CHECK(requests.size() == 5000);
    CHECK(data.truth.size() == data.logs.size());
    CHECK(data.catalog.latents.rows() == 200);
}

TEST_CASE("neutral generator yields probability one half everywhere") {
    GeneratorConfig cfg = small_config();
    cfg.drift_rate = 0.0;
    cfg.recency_beta = 0.0;
    cfg.affinity_gain = 0.0;  // u.v contribution switched off
    cfg.tasks = {"click"};
    cfg.task_bias = {0.0};
    auto data = generate_logs(cfg);
    for (const auto& tr : data.truth) {
        CHECK(tr.probs.at("click") == doctest::Approx(0.5).epsilon(1e-12));
    }
}

TEST_CASE("identical config and seed give byte-identical files") {
    auto dir = temp_dir();
    GeneratorConfig cfg = small_config();
    for (int run = 0; run < 2; ++run) {
        auto data = generate_logs(cfg);
        write_logs(data.logs, (dir / ("logs" + std::to_string(run) + ".jsonl")).string());
        write_truth(data.truth, (dir / ("truth" + std::to_string(run) + ".jsonl")).string());
    }
    CHECK(read_text_file((dir / "logs0.jsonl").string()) ==
          read_text_file((dir / "logs1.jsonl").string()));
    CHECK(read_text_file((dir / "truth0.jsonl").string()) ==
          read_text_file((dir / "truth1.jsonl").string()));
}

TEST_CASE("per-user streams are independent of num_users") {
    GeneratorConfig cfg = small_config();
    cfg.num_users = 5;
    auto small = generate_logs(cfg);
    cfg.num_users = 9;
    auto big = generate_logs(cfg);
    for (std::size_t i = 0; i < small.logs.size(); ++i) {
        CHECK(small.logs[i].user_id == big.logs[i].user_id);
        CHECK(small.logs[i].item_id == big.logs[i].item_id);
        CHECK(small.logs[i].ts == big.logs[i].ts);
        CHECK(small.logs[i].labels == big.logs[i].labels);
    }
}

TEST_CASE("timestamps are non-decreasing per user and shared within requests") {
    auto data = generate_logs(small_config());
    std::map<std::int64_t, std::int64_t> last_ts;
    std::map<std::int64_t, std::int64_t> request_ts;
    for (const auto& log : data.logs) {
        auto it = last_ts.find(log.user_id);
        if (it != last_ts.end()) CHECK(log.ts >= it->second);
        last_ts[log.user_id] = log.ts;
        auto [rit, inserted] = request_ts.try_emplace(log.request_id, log.ts);
        if (!inserted) CHECK(rit->second == log.ts);
    }
}

TEST_CASE("empirical label rate tracks mean ground-truth probability") {
    GeneratorConfig cfg = small_config();
    cfg.num_users = 200;
    cfg.requests_per_user = 25;
    auto data = generate_logs(cfg);
    for (const auto& task : cfg.tasks) {
        double p_sum = 0, y_sum = 0, var_sum = 0;
        for (std::size_t i = 0; i < data.logs.size(); ++i) {
            const double p = data.truth[i].probs.at(task);
            p_sum += p;
            var_sum += p * (1 - p);
            y_sum += data.logs[i].labels.at(task);
        }
        const double n = static_cast<double>(data.logs.size());
        const double sigma = std::sqrt(var_sum) / n;
        CHECK(std::abs(y_sum / n - p_sum / n) <= 3.0 * sigma + 1e-9);
    }
}

TEST_CASE("log file round-trips exactly") {
    auto dir = temp_dir();
    auto data = generate_logs(small_config());
    const auto path = (dir / "roundtrip.jsonl").string();
    write_logs(data.logs, path);
    auto back = read_logs(path);
    REQUIRE(back.size() == data.logs.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].user_id == data.logs[i].user_id);
        CHECK(back[i].request_id == data.logs[i].request_id);
        CHECK(back[i].ts == data.logs[i].ts);
        CHECK(back[i].item_id == data.logs[i].item_id);
        CHECK(back[i].labels == data.logs[i].labels);
    }
}

TEST_CASE("missing task label is rejected with the task name") {
    auto dir = temp_dir();
    const auto path = (dir / "missing_task.jsonl").string();
    write_text_file(path,
                    R"({"user_id":1,"request_id":1,"ts":10,"item_id":2,"labels":{"click":1,"engage":0}})"
                    "\n"
                    R"({"user_id":1,"request_id":2,"ts":11,"item_id":3,"labels":{"click":1}})"
                    "\n");
    try {
        read_logs(path);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("engage") != std::string::npos);
        CHECK(std::string(e.what()).find("2") != std::string::npos);  // line number
    }
}

TEST_CASE("timestamp regression within a user is rejected") {
    auto dir = temp_dir();
    const auto path = (dir / "ts_regress.jsonl").string();
    write_text_file(path,
                    R"({"user_id":1,"request_id":1,"ts":100,"item_id":2,"labels":{"click":1}})"
                    "\n"
                    R"({"user_id":1,"request_id":2,"ts":90,"item_id":3,"labels":{"click":0}})"
                    "\n");
    CHECK_THROWS_AS((void)read_logs(path), ValidationError);
}

TEST_CASE("same request with two timestamps is rejected") {
    auto dir = temp_dir();
    const auto path = (dir / "req_ts.jsonl").string();
    write_text_file(path,
                    R"({"user_id":1,"request_id":1,"ts":100,"item_id":2,"labels":{"click":1}})"
                    "\n"
                    R"({"user_id":1,"request_id":1,"ts":101,"item_id":3,"labels":{"click":0}})"
                    "\n");
    CHECK_THROWS_AS((void)read_logs(path), ValidationError);
}

TEST_CASE("malformed json reports the line number") {
    auto dir = temp_dir();
    const auto path = (dir / "broken.jsonl").string();
    write_text_file(path,
                    R"({"user_id":1,"request_id":1,"ts":100,"item_id":2,"labels":{"click":1}})"
                    "\n{not json\n");
    try {
        read_logs(path);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
}

TEST_CASE("invalid generator configs are rejected") {
    GeneratorConfig cfg = small_config();
    cfg.num_users = 0;
    CHECK_THROWS_AS(generate_logs(cfg), ConfigError);
    cfg = small_config();
    cfg.num_items = 0;
    CHECK_THROWS_AS(generate_logs(cfg), ConfigError);
    cfg = small_config();
    cfg.items_per_request = 0;
    CHECK_THROWS_AS(generate_logs(cfg), ConfigError);
}

TEST_CASE("catalog round-trips through GRCT file") {
    auto dir = temp_dir();
    MatXf mat(3, 4);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) mat(r, c) = static_cast<float>(r * 10 + c) / 7.0f;
    }
    const auto path = (dir / "catalog.bin").string();
    write_catalog(mat, path);
    MatXf back = read_catalog(path);
    REQUIRE(back.rows() == 3);
    REQUIRE(back.cols() == 4);
    CHECK((back - mat).cwiseAbs().maxCoeff() == 0.0f);
    // magic is fixed
    const std::string bytes = read_text_file(path);
    CHECK(bytes.substr(0, 4) == "GRCT");
}

TEST_CASE("bayes auc is about one half when all probabilities are equal") {
    GeneratorConfig cfg = small_config();
    cfg.num_users = 300;  // >= 1e4 pairs
    cfg.drift_rate = 0.0;
    cfg.recency_beta = 0.0;
    cfg.affinity_gain = 0.0;
    cfg.tasks = {"click"};
    cfg.task_bias = {0.0};
    auto data = generate_logs(cfg);
    auto a = bayes_optimal_auc(data.logs, data.truth, "click");
    REQUIRE(a.has_value());
    CHECK(std::abs(*a - 0.5) < 0.02);
}

TEST_CASE("bayes auc on a deterministic probability split is high") {
    // probs in {0.05, 0.95}; labels follow the split deterministically,
    // then a sampled variant lands at the analytic 0.95
    std::vector<ExposureLog> logs;
    std::vector<TruthRecord> truth;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int i = 0; i < 4000; ++i) {
        const double p = i % 2 == 0 ? 0.95 : 0.05;
        ExposureLog log;
        log.user_id = 0;
        log.request_id = i;
        log.ts = 1000 + i;
        log.item_id = i;
        log.labels["click"] = p > 0.5 ? 1 : 0;
        TruthRecord tr;
        tr.user_id = 0;
        tr.request_id = i;
        tr.item_id = i;
        tr.probs["click"] = p;
        logs.push_back(log);
        truth.push_back(tr);
    }
    auto a = bayes_optimal_auc(logs, truth, "click");
    REQUIRE(a.has_value());
    CHECK(*a >= 0.95);

    for (int i = 0; i < 4000; ++i) {
        logs[static_cast<std::size_t>(i)].labels["click"] =
            unif(rng) < truth[static_cast<std::size_t>(i)].probs["click"] ? 1 : 0;
    }
    auto sampled = bayes_optimal_auc(logs, truth, "click");
    REQUIRE(sampled.has_value());
    CHECK(std::abs(*sampled - 0.95) < 0.02);  // E[AUC] = .95^2 + .95*.05 = 0.95
}

TEST_CASE("bayes auc signals single-class label sets") {
    std::vector<ExposureLog> logs(2);
    std::vector<TruthRecord> truth(2);
    for (int i = 0; i < 2; ++i) {
        logs[i].labels["click"] = 1;
        truth[i].probs["click"] = 0.9;
    }
    CHECK_FALSE(bayes_optimal_auc(logs, truth, "click").has_value());
}
