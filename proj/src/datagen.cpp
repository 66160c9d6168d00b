#include "genrank/datagen.hpp"

#include "genrank/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

namespace genrank {

namespace {

using ojson = nlohmann::ordered_json;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void put_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 24) & 0xFF)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw ParseError("catalog: truncated header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void GeneratorConfig::validate() const {
    if (num_users < 1) throw ConfigError("generator: num_users must be >= 1");
    if (num_items < 1) throw ConfigError("generator: num_items must be >= 1");
    if (latent_dim < 1) throw ConfigError("generator: latent_dim must be >= 1");
    if (requests_per_user < 1) throw ConfigError("generator: requests_per_user must be >= 1");
    if (items_per_request < 1) throw ConfigError("generator: items_per_request must be >= 1");
    if (items_per_request > num_items) {
        throw ConfigError("generator: items_per_request exceeds num_items");
    }
    if (drift_rate < 0.0 || drift_rate > 1.0) throw ConfigError("generator: drift_rate outside [0,1]");
    if (tasks.empty()) throw ConfigError("generator: at least one task required");
    if (tasks.size() > 32) throw ConfigError("generator: at most 32 tasks supported");
    if (task_bias.size() != tasks.size()) {
        throw ConfigError("generator: task_bias size must match tasks");
    }
    if (num_clusters < 1) throw ConfigError("generator: num_clusters must be >= 1");
    if (side_dim < 0) throw ConfigError("generator: side_dim must be >= 0");
}

GeneratorConfig GeneratorConfig::from_kv(const KvMap& kv) {
    GeneratorConfig c;
    c.num_users = kv_get_int(kv, "num_users", c.num_users);
    c.num_items = kv_get_int(kv, "num_items", c.num_items);
    c.latent_dim = static_cast<int>(kv_get_int(kv, "latent_dim", c.latent_dim));
    c.requests_per_user = static_cast<int>(kv_get_int(kv, "requests_per_user", c.requests_per_user));
    c.items_per_request = static_cast<int>(kv_get_int(kv, "items_per_request", c.items_per_request));
    c.gap_mu = kv_get_double(kv, "gap_mu", c.gap_mu);
    c.gap_sigma = kv_get_double(kv, "gap_sigma", c.gap_sigma);
    if (kv.count("tasks")) c.tasks = split_csv(kv.at("tasks"));
    c.drift_rate = kv_get_double(kv, "drift_rate", c.drift_rate);
    c.seed = static_cast<std::uint64_t>(kv_get_int(kv, "seed", static_cast<long long>(c.seed)));
    c.num_clusters = static_cast<int>(kv_get_int(kv, "num_clusters", c.num_clusters));
    c.cluster_noise = kv_get_double(kv, "cluster_noise", c.cluster_noise);
    c.affinity_gain = kv_get_double(kv, "affinity_gain", c.affinity_gain);
    if (kv.count("task_bias")) {
        c.task_bias.clear();
        for (const auto& s : split_csv(kv.at("task_bias"))) c.task_bias.push_back(std::stod(s));
    } else if (c.tasks.size() != c.task_bias.size()) {
        c.task_bias.assign(c.tasks.size(), -0.5);
    }
    c.recency_beta = kv_get_double(kv, "recency_beta", c.recency_beta);
    c.recency_threshold = kv_get_double(kv, "recency_threshold", c.recency_threshold);
    c.side_dim = static_cast<int>(kv_get_int(kv, "side_dim", c.side_dim));
    c.side_noise = kv_get_double(kv, "side_noise", c.side_noise);
    c.validate();
    return c;
}

GeneratedData generate_logs(const GeneratorConfig& cfg) {
    cfg.validate();
    GeneratedData out;

    // Item catalog: cluster centers plus noise, rows normalized.
    auto item_rng = make_rng(cfg.seed, 0xCA7A106);
    std::normal_distribution<double> gauss(0.0, 1.0);
    MatXd centers(cfg.num_clusters, cfg.latent_dim);
    for (int i = 0; i < cfg.num_clusters; ++i) {
        for (int d = 0; d < cfg.latent_dim; ++d) centers(i, d) = gauss(item_rng);
    }
    VecXd global_dir(cfg.latent_dim);
    for (int d = 0; d < cfg.latent_dim; ++d) global_dir(d) = gauss(item_rng);
    global_dir /= global_dir.norm();
    std::uniform_int_distribution<int> pick_cluster(0, cfg.num_clusters - 1);
    out.catalog.latents.resize(cfg.num_items, cfg.latent_dim);
    for (long i = 0; i < cfg.num_items; ++i) {
        const int c = pick_cluster(item_rng);
        for (int d = 0; d < cfg.latent_dim; ++d) {
            out.catalog.latents(i, d) = cfg.global_dir_weight * global_dir(d) + centers(c, d) +
                                        cfg.cluster_noise * gauss(item_rng);
        }
        const double n = out.catalog.latents.row(i).norm();
        if (n > 0) out.catalog.latents.row(i) /= n;
    }
    if (cfg.side_dim > 0) {
        MatXd proj(cfg.latent_dim, cfg.side_dim);
        for (int r = 0; r < cfg.latent_dim; ++r) {
            for (int c = 0; c < cfg.side_dim; ++c) proj(r, c) = gauss(item_rng) / std::sqrt(double(cfg.latent_dim));
        }
        out.catalog.side.resize(cfg.num_items, cfg.side_dim);
        for (long i = 0; i < cfg.num_items; ++i) {
            for (int c = 0; c < cfg.side_dim; ++c) {
                double v = out.catalog.latents.row(i).dot(proj.col(c)) + cfg.side_noise * gauss(item_rng);
                out.catalog.side(i, c) = static_cast<float>(v);
            }
        }
    }

    const int tasks = static_cast<int>(cfg.tasks.size());
    const std::int64_t base_ts = 1600000000;

    std::vector<long> prev_items;
    std::vector<std::vector<int>> prev_labels;  // per prev item, per task
    VecXd u(cfg.latent_dim);

    for (long user = 0; user < cfg.num_users; ++user) {
        auto rng = make_rng(cfg.seed, 0x5EEDu + static_cast<std::uint64_t>(user));
        std::normal_distribution<double> g(0.0, 1.0);
        std::lognormal_distribution<double> gap_dist(cfg.gap_mu, cfg.gap_sigma);
        std::uniform_int_distribution<long> pick_item(0, cfg.num_items - 1);
        std::uniform_real_distribution<double> unif(0.0, 1.0);

        for (int d = 0; d < cfg.latent_dim; ++d) u(d) = g(rng);
        std::int64_t ts = base_ts;
        prev_items.clear();
        prev_labels.clear();

        for (int req = 0; req < cfg.requests_per_user; ++req) {
            if (req > 0) {
                for (int d = 0; d < cfg.latent_dim; ++d) {
                    u(d) = (1.0 - cfg.drift_rate) * u(d) + cfg.drift_rate * g(rng);
                }
                ts += std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(gap_dist(rng))));
            }
            const std::int64_t request_id = user * cfg.requests_per_user + req;

            // distinct items within the request
            std::vector<long> items;
            std::unordered_set<long> seen;
            while (static_cast<int>(items.size()) < cfg.items_per_request) {
                const long it = pick_item(rng);
                if (seen.insert(it).second) items.push_back(it);
            }

            std::vector<long> cur_items;
            std::vector<std::vector<int>> cur_labels;
            for (long item : items) {
                ExposureLog log;
                log.user_id = user;
                log.request_id = request_id;
                log.ts = ts;
                log.item_id = item;
                TruthRecord tr;
                tr.user_id = user;
                tr.request_id = request_id;
                tr.item_id = item;
                std::vector<int> labels(tasks, 0);
                for (int t = 0; t < tasks; ++t) {
                    double z = cfg.affinity_gain * u.dot(out.catalog.latents.row(item).transpose()) +
                               cfg.task_bias[t];
                    bool bonus = false;
                    for (std::size_t j = 0; j < prev_items.size() && !bonus; ++j) {
                        if (prev_labels[j][t] == 1 &&
                            out.catalog.latents.row(item).dot(out.catalog.latents.row(prev_items[j])) >
                                cfg.recency_threshold) {
                            bonus = true;
                        }
                    }
                    if (bonus) z += cfg.recency_beta;
                    const double p = sigmoid(z);
                    const int y = unif(rng) < p ? 1 : 0;
                    labels[t] = y;
                    log.labels[cfg.tasks[t]] = y;
                    tr.probs[cfg.tasks[t]] = p;
                }
                out.logs.push_back(std::move(log));
                out.truth.push_back(std::move(tr));
                cur_items.push_back(item);
                cur_labels.push_back(std::move(labels));
            }
            prev_items = std::move(cur_items);
            prev_labels = std::move(cur_labels);
        }
    }
    return out;
}

std::optional<double> bayes_optimal_auc(const std::vector<ExposureLog>& logs,
                                        const std::vector<TruthRecord>& truth,
                                        const std::string& task) {
    if (logs.size() != truth.size()) {
        throw ValidationError("bayes_optimal_auc: logs and truth streams differ in length");
    }
    std::vector<double> scores;
    std::vector<int> labels;
    scores.reserve(logs.size());
    labels.reserve(logs.size());
    for (std::size_t i = 0; i < logs.size(); ++i) {
        auto lit = logs[i].labels.find(task);
        auto pit = truth[i].probs.find(task);
        if (lit == logs[i].labels.end() || pit == truth[i].probs.end()) {
            throw ValidationError("bayes_optimal_auc: task '" + task + "' missing in record " +
                                  std::to_string(i));
        }
        scores.push_back(pit->second);
        labels.push_back(lit->second);
    }
    return auc_pairwise(scores, labels);
}

void write_logs(const std::vector<ExposureLog>& logs, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write logs file: " + path);
    for (const auto& log : logs) {
        ojson j;
        j["user_id"] = log.user_id;
        j["request_id"] = log.request_id;
        j["ts"] = log.ts;
        j["item_id"] = log.item_id;
        ojson lab = ojson::object();
        for (const auto& [k, v] : log.labels) lab[k] = v;
        j["labels"] = std::move(lab);
        out << j.dump() << '\n';
    }
}

std::vector<ExposureLog> read_logs(const std::string& path,
                                   const std::vector<std::string>& expected_tasks) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open logs file: " + path);

    std::vector<ExposureLog> logs;
    std::vector<std::string> tasks = expected_tasks;
    std::unordered_map<std::int64_t, std::int64_t> last_ts_by_user;
    // (user, request) -> ts; request ids are opaque, so key on the pair.
    std::map<std::pair<std::int64_t, std::int64_t>, std::int64_t> request_ts;

    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw ParseError("logs line " + std::to_string(lineno) + ": " + e.what());
        }
        ExposureLog log;
        try {
            log.user_id = j.at("user_id").get<std::int64_t>();
            log.request_id = j.at("request_id").get<std::int64_t>();
            log.ts = j.at("ts").get<std::int64_t>();
            log.item_id = j.at("item_id").get<std::int64_t>();
            for (auto it = j.at("labels").begin(); it != j.at("labels").end(); ++it) {
                const int v = it.value().get<int>();
                if (v != 0 && v != 1) {
                    throw ValidationError("logs line " + std::to_string(lineno) + ": label '" +
                                          it.key() + "' not binary");
                }
                log.labels[it.key()] = v;
            }
        } catch (const ValidationError&) {
            throw;
        } catch (const std::exception& e) {
            throw ParseError("logs line " + std::to_string(lineno) + ": " + e.what());
        }

        if (tasks.empty()) {
            for (const auto& [k, v] : log.labels) tasks.push_back(k);
        }
        for (const auto& t : tasks) {
            if (!log.labels.count(t)) {
                throw ValidationError("logs line " + std::to_string(lineno) +
                                      ": missing label for task '" + t + "'");
            }
        }
        if (log.labels.size() != tasks.size()) {
            throw ValidationError("logs line " + std::to_string(lineno) +
                                  ": unexpected extra task label");
        }

        auto [uit, inserted] = last_ts_by_user.try_emplace(log.user_id, log.ts);
        if (!inserted) {
            if (log.ts < uit->second) {
                throw ValidationError("logs line " + std::to_string(lineno) +
                                      ": timestamp regression within user " +
                                      std::to_string(log.user_id));
            }
            uit->second = log.ts;
        }
        auto key = std::make_pair(log.user_id, log.request_id);
        auto [rit, rins] = request_ts.try_emplace(key, log.ts);
        if (!rins && rit->second != log.ts) {
            throw ValidationError("logs line " + std::to_string(lineno) + ": request " +
                                  std::to_string(log.request_id) +
                                  " has inconsistent timestamps");
        }
        logs.push_back(std::move(log));
    }
    return logs;
}

void write_truth(const std::vector<TruthRecord>& truth, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write truth file: " + path);
    for (const auto& tr : truth) {
        ojson j;
        j["user_id"] = tr.user_id;
        j["request_id"] = tr.request_id;
        j["item_id"] = tr.item_id;
        ojson p = ojson::object();
        for (const auto& [k, v] : tr.probs) p[k] = v;
        j["probs"] = std::move(p);
        out << j.dump() << '\n';
    }
}

std::vector<TruthRecord> read_truth(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open truth file: " + path);
    std::vector<TruthRecord> truth;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            nlohmann::json j = nlohmann::json::parse(line);
            TruthRecord tr;
            tr.user_id = j.at("user_id").get<std::int64_t>();
            tr.request_id = j.at("request_id").get<std::int64_t>();
            tr.item_id = j.at("item_id").get<std::int64_t>();
            for (auto it = j.at("probs").begin(); it != j.at("probs").end(); ++it) {
                tr.probs[it.key()] = it.value().get<double>();
            }
            truth.push_back(std::move(tr));
        } catch (const std::exception& e) {
            throw ParseError("truth line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return truth;
}

void write_catalog(const MatXf& mat, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write catalog file: " + path);
    out.write("GRCT", 4);
    put_u32(out, 1u);
    put_u32(out, static_cast<std::uint32_t>(mat.rows()));
    put_u32(out, static_cast<std::uint32_t>(mat.cols()));
    for (Eigen::Index r = 0; r < mat.rows(); ++r) {
        for (Eigen::Index c = 0; c < mat.cols(); ++c) {
            float v = mat(r, c);
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            unsigned char b[4] = {static_cast<unsigned char>(bits & 0xFF),
                                  static_cast<unsigned char>((bits >> 8) & 0xFF),
                                  static_cast<unsigned char>((bits >> 16) & 0xFF),
                                  static_cast<unsigned char>((bits >> 24) & 0xFF)};
            out.write(reinterpret_cast<const char*>(b), 4);
        }
    }
}

MatXf read_catalog(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open catalog file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "GRCT", 4) != 0) throw ParseError("catalog: bad magic");
    const std::uint32_t version = get_u32(in);
    if (version != 1u) throw ParseError("catalog: unsupported version " + std::to_string(version));
    const std::uint32_t rows = get_u32(in);
    const std::uint32_t cols = get_u32(in);
    MatXf mat(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r) {
        for (std::uint32_t c = 0; c < cols; ++c) {
            unsigned char b[4];
            in.read(reinterpret_cast<char*>(b), 4);
            if (!in) throw ParseError("catalog: truncated data");
            std::uint32_t bits = static_cast<std::uint32_t>(b[0]) |
                                 (static_cast<std::uint32_t>(b[1]) << 8) |
                                 (static_cast<std::uint32_t>(b[2]) << 16) |
                                 (static_cast<std::uint32_t>(b[3]) << 24);
            float v;
            std::memcpy(&v, &bits, 4);
            mat(r, c) = v;
        }
    }
    return mat;
}

std::vector<std::string> task_names(const std::vector<ExposureLog>& logs) {
    std::vector<std::string> tasks;
    if (!logs.empty()) {
        for (const auto& [k, v] : logs.front().labels) tasks.push_back(k);
    }
    return tasks;
}

}  // namespace genrank
