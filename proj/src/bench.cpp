#include "genrank/bench.hpp"

#include "genrank/network.hpp"
#include "genrank/randomseq.hpp"
#include "genrank/seqbuild.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <sstream>

namespace genrank {

std::vector<BenchVariant> table_variants() {
    return {
        {"baseline", OrganizationKind::kItemInterleaved, BiasMode::kLearnableRelative},
        {"action_oriented", OrganizationKind::kActionOriented, BiasMode::kLearnableRelative},
        {"pos_time_biases", OrganizationKind::kItemInterleaved, BiasMode::kALiBi},
        {"full", OrganizationKind::kActionOriented, BiasMode::kALiBi},
    };
}

double reference_speedup_pct(const std::string& name) {
    if (name == "action_oriented") return 78.7;
    if (name == "pos_time_biases") return 25.0;
    if (name == "full") return 94.8;
    return 0.0;
}

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n == 0 ? 0.0 : (n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]));
}

double percentile(std::vector<double> v, double p) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const double idx = p * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(idx);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = idx - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace

BenchReport bench_compare(const ModelConfig& base_config, int n, int c, int batch, int reps,
                          std::uint64_t seed) {
    if (n < 0 || c < 1 || batch < 1 || reps < 1) {
        throw ConfigError("bench: need n >= 0, c >= 1, batch >= 1, reps >= 1");
    }
    BenchReport report;
    report.n = n;
    report.c = c;
    report.batch = batch;
    report.reps = reps;
    if (reps < 10) {
        report.warnings.push_back("fewer than 10 repetitions; timings may be noisy");
    }

    const auto variants = table_variants();
    const int needed_len = 2 * n + c;  // fits either organization

    struct Prepared {
        ModelConfig cfg;
        ModelParams<float> params;
        std::vector<TokenizedSequence> seqs;
        std::vector<double> times_ms;
    };
    std::vector<Prepared> prepared;
    for (const auto& var : variants) {
        Prepared p;
        p.cfg = base_config;
        p.cfg.bias_mode = var.bias_mode;
        p.cfg.precision = Precision::kFloat32;
        if (p.cfg.max_len < needed_len) p.cfg.max_len = needed_len;
        p.cfg.validate();
        p.params = make_params<float>(p.cfg);
        init_params(p.cfg, p.params, seed);
        auto rng = make_rng(seed, 0xBE4C);
        for (int b = 0; b < batch; ++b) {
            auto history = synthetic_history(n, p.cfg.item_vocab, p.cfg.tasks, rng);
            std::vector<ExposureLog> request =
                synthetic_history(c, p.cfg.item_vocab, p.cfg.tasks, rng);
            const std::int64_t now = history.empty() ? 1600000000 : history.back().ts + 60;
            for (auto& log : request) {
                log.request_id = 1 << 20;
                log.ts = now;
            }
            BuildOptions opts;
            opts.max_len = p.cfg.max_len;
            p.seqs.push_back(build_training_sequence(history, request, var.organization,
                                                     p.cfg.tasks, opts));
        }
        prepared.push_back(std::move(p));
    }

    ModelParams<float> grads;
    ForwardTrace<float> trace;
    // one untimed warmup pass, then interleaved timed repetitions
    for (int rep = -1; rep < reps; ++rep) {
        for (std::size_t vi = 0; vi < prepared.size(); ++vi) {
            auto& p = prepared[vi];
            if (grads.blocks.size() != p.params.blocks.size() ||
                grads.item_table.rows() != p.params.item_table.rows() ||
                (p.cfg.bias_mode == BiasMode::kLearnableRelative) !=
                    (grads.relpos_bias.size() > 0)) {
                grads = make_params<float>(p.cfg);
            }
            for (auto& ref : tensor_refs(grads)) std::fill(ref.data, ref.data + ref.size, 0.0f);
            const auto t0 = std::chrono::steady_clock::now();
            long total_elements = 0;
            for (const auto& seq : p.seqs) {
                total_elements += static_cast<long>(seq.loss_positions.size()) *
                                  p.cfg.num_tasks();
            }
            for (const auto& seq : p.seqs) {
                MatX<float> scores = forward<float>(p.cfg, p.params, seq, nullptr, &trace);
                BceSum<float> bce = bce_sum<float>(scores, seq);
                MatX<float> dscores = bce.dsum / static_cast<float>(total_elements);
                backward<float>(p.cfg, p.params, seq, nullptr, trace, dscores, grads);
            }
            const auto t1 = std::chrono::steady_clock::now();
            if (rep >= 0) {
                p.times_ms.push_back(
                    std::chrono::duration<double, std::milli>(t1 - t0).count());
            }
        }
    }

    for (std::size_t vi = 0; vi < prepared.size(); ++vi) {
        VariantTiming vt;
        vt.variant = variants[vi];
        vt.cost = count_cost(prepared[vi].cfg, n, c, variants[vi].organization);
        vt.median_ms = median(prepared[vi].times_ms);
        vt.p99_ms = percentile(prepared[vi].times_ms, 0.99);
        double sum = 0;
        for (double t : prepared[vi].times_ms) sum += t;
        vt.mean_ms = prepared[vi].times_ms.empty()
                         ? 0.0
                         : sum / static_cast<double>(prepared[vi].times_ms.size());
        report.variants.push_back(vt);
    }

    // analytic orderings are structural; a violation means a bug
    const auto& base_cost = report.variants[0].cost;
    for (std::size_t vi = 1; vi < report.variants.size(); ++vi) {
        const auto& vt = report.variants[vi];
        if (vt.variant.organization == OrganizationKind::kActionOriented &&
            vt.cost.attention_flops >= base_cost.attention_flops) {
            throw std::logic_error("bench: action-oriented attention flops not below baseline");
        }
        if (vt.variant.bias_mode == BiasMode::kALiBi && vt.cost.bias_io_elements != 0) {
            throw std::logic_error("bench: alibi variant reports nonzero bias io");
        }
    }

    const double base_median = report.variants[0].median_ms;
    for (const auto& vt : report.variants) {
        report.speedup_pct.push_back(vt.median_ms > 0
                                         ? (base_median / vt.median_ms - 1.0) * 100.0
                                         : 0.0);
    }
    return report;
}

std::string BenchReport::to_json() const {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["n"] = n;
    j["c"] = c;
    j["batch"] = batch;
    j["reps"] = reps;
    nlohmann::ordered_json vars = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < variants.size(); ++i) {
        const auto& vt = variants[i];
        nlohmann::ordered_json v;
        v["name"] = vt.variant.name;
        v["organization"] = to_string(vt.variant.organization);
        v["bias_mode"] = to_string(vt.variant.bias_mode);
        v["attention_flops"] = vt.cost.attention_flops;
        v["projection_flops"] = vt.cost.projection_flops;
        v["ffn_flops"] = vt.cost.ffn_flops;
        v["bias_io_elements"] = vt.cost.bias_io_elements;
        v["param_count"] = vt.cost.param_count;
        v["median_ms"] = vt.median_ms;
        v["p99_ms"] = vt.p99_ms;
        v["mean_ms"] = vt.mean_ms;
        v["speedup_pct"] = speedup_pct[i];
        v["reference_speedup_pct"] = reference_speedup_pct(vt.variant.name);
        vars.push_back(std::move(v));
    }
    j["variants"] = std::move(vars);
    j["warnings"] = warnings;
    return j.dump(2);
}

std::string BenchReport::to_markdown() const {
    std::ostringstream out;
    out << "| Variant | Median ms | Speed-Up | Reference Speed-Up |\n";
    out << "|---|---|---|---|\n";
    for (std::size_t i = 0; i < variants.size(); ++i) {
        const auto& vt = variants[i];
        out << "| " << vt.variant.name << " | " << vt.median_ms << " | ";
        if (i == 0) {
            out << "/ | / |\n";
        } else {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%+.1f%%", speedup_pct[i]);
            out << buf << " | +" << reference_speedup_pct(vt.variant.name) << "% |\n";
        }
    }
    return out.str();
}

}  // namespace genrank
