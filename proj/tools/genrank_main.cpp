// Command-line front end: data generation, training, evaluation, benchmarking,
// invariant probes and the four-variant comparison harness.

#include "genrank/bench.hpp"
#include "genrank/datagen.hpp"
#include "genrank/evalrun.hpp"
#include "genrank/probes.hpp"
#include "genrank/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace genrank;

namespace {

int cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
    GeneratorConfig cfg = GeneratorConfig::from_kv(parse_kv_file(config_path));
    GeneratedData data = generate_logs(cfg);
    fs::create_directories(out_dir);
    write_logs(data.logs, (fs::path(out_dir) / "logs.jsonl").string());
    write_truth(data.truth, (fs::path(out_dir) / "truth.jsonl").string());
    const MatXf catalog = cfg.side_dim > 0 ? data.catalog.side
                                           : MatXf(data.catalog.latents.cast<float>());
    write_catalog(catalog, (fs::path(out_dir) / "catalog.bin").string());
    std::cout << "wrote " << data.logs.size() << " logs for " << cfg.num_users << " users to "
              << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& logs_path, const std::string& train_config_path,
              const std::string& model_config_path, const std::string& out_ckpt,
              const std::string& catalog_path) {
    TrainConfig tc = TrainConfig::from_kv(parse_kv_file(train_config_path));
    ModelConfig mc = ModelConfig::from_kv(parse_kv_file(model_config_path));
    std::vector<ExposureLog> logs = read_logs(logs_path);
    if (logs.empty()) throw ValidationError("train: empty log file");
    if (mc.tasks.empty() || !parse_kv_file(model_config_path).count("tasks")) {
        mc.tasks = task_names(logs);
    }
    if (mc.item_vocab == 0) {
        long max_item = 0;
        for (const auto& log : logs) max_item = std::max(max_item, static_cast<long>(log.item_id));
        mc.item_vocab = max_item + 1;
    }
    mc.validate();

    MatXf catalog;
    const MatXf* catalog_ptr = nullptr;
    if (!catalog_path.empty()) {
        catalog = read_catalog(catalog_path);
        catalog_ptr = &catalog;
    }

    TrainReport report = train(logs, tc, mc, out_ckpt, catalog_ptr);
    write_text_file(out_ckpt + ".manifest", train_manifest_text(tc, mc, report));
    std::cout << "steps=" << report.steps << " sequences=" << report.sequences
              << " final_loss=" << report.final_loss
              << " tokens_per_sec=" << static_cast<long>(report.tokens_per_sec) << "\n";
    std::cout << "checkpoint: " << report.checkpoint_path << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& logs_path,
             const std::string& report_path, int min_history, const std::string& catalog_path) {
    LoadedCheckpoint ckpt = load_checkpoint_any(ckpt_path);
    std::vector<ExposureLog> logs = read_logs(logs_path);
    MatXf catalog;
    const MatXf* catalog_ptr = nullptr;
    if (!catalog_path.empty()) {
        catalog = read_catalog(catalog_path);
        catalog_ptr = &catalog;
    }
    EvalOptions opts;
    opts.min_history = min_history;
    MetricReport report = evaluate_checkpoint(ckpt, logs, opts, catalog_ptr);
    write_text_file(report_path, report.to_json());
    for (const auto& [task, m] : report.tasks) {
        std::cout << task << ": auc=" << (m.auc ? std::to_string(*m.auc) : "undefined")
                  << " gauc=" << (m.gauc.gauc ? std::to_string(*m.gauc.gauc) : "undefined")
                  << " (excluded_users=" << m.gauc.excluded_users << ")\n";
    }
    std::cout << "report: " << report_path << "\n";
    return 0;
}

int cmd_bench(const std::string& model_config_path, int n, int c, int reps, int batch,
              const std::string& report_path, std::uint64_t seed) {
    ModelConfig mc = ModelConfig::from_kv(parse_kv_file(model_config_path));
    if (mc.item_vocab == 0) mc.item_vocab = 10000;
    BenchReport report = bench_compare(mc, n, c, batch, reps, seed);
    write_text_file(report_path, report.to_json());
    std::cout << report.to_markdown();
    std::cout << "report: " << report_path << "\n";
    return 0;
}

int cmd_probe(const std::string& ckpt_path, const std::string& name, std::uint64_t seed) {
    LoadedCheckpoint ckpt = load_checkpoint_any(ckpt_path);
    std::vector<std::string> names;
    if (name == "all") {
        names = probe_names();
    } else {
        names.push_back(name);
    }
    int failures = 0;
    for (const auto& n : names) {
        ProbeResult res = run_probe(n, ckpt, seed);
        std::cout << (res.pass ? "[PASS] " : "[FAIL] ") << res.name
                  << " max_violation=" << res.max_violation << " (" << res.detail << ")\n";
        if (!res.pass) ++failures;
    }
    return failures == 0 ? 0 : 1;
}

// Trains and evaluates the four organization x bias variants on one generated
// dataset and emits a markdown table with measured step time and AUC.
int cmd_compare(const std::string& configs_dir, const std::string& out_dir) {
    const fs::path dir(configs_dir);
    GeneratorConfig gen_cfg = GeneratorConfig::from_kv(parse_kv_file((dir / "gen.cfg").string()));
    ModelConfig base_mc = ModelConfig::from_kv(parse_kv_file((dir / "model.cfg").string()));
    TrainConfig base_tc = TrainConfig::from_kv(parse_kv_file((dir / "train.cfg").string()));
    fs::create_directories(out_dir);

    GeneratedData data = generate_logs(gen_cfg);
    if (base_mc.item_vocab == 0) base_mc.item_vocab = gen_cfg.num_items;
    base_mc.tasks = gen_cfg.tasks;

    // hold out the last fifth of users for AUC
    const long holdout_from = gen_cfg.num_users * 4 / 5;
    std::vector<ExposureLog> train_logs, eval_logs;
    for (const auto& log : data.logs) {
        (log.user_id < holdout_from ? train_logs : eval_logs).push_back(log);
    }
    if (train_logs.empty() || eval_logs.empty()) {
        throw ConfigError("compare: dataset too small to split");
    }

    struct Row {
        std::string name;
        double median_step_ms = 0.0;
        double auc = 0.0;
    };
    std::vector<Row> rows;
    for (const auto& var : table_variants()) {
        ModelConfig mc = base_mc;
        mc.bias_mode = var.bias_mode;
        TrainConfig tc = base_tc;
        tc.organization = var.organization;
        const std::string ckpt = (fs::path(out_dir) / (var.name + ".ckpt")).string();
        TrainReport tr = train(train_logs, tc, mc, ckpt);
        write_text_file(ckpt + ".manifest", train_manifest_text(tc, mc, tr));
        LoadedCheckpoint loaded = load_checkpoint_any(ckpt);
        MetricReport mr = evaluate_checkpoint(loaded, eval_logs);
        Row row;
        row.name = var.name;
        std::vector<double> times = tr.step_ms;
        std::sort(times.begin(), times.end());
        row.median_step_ms = times.empty() ? 0.0 : times[times.size() / 2];
        const auto& first_task = mc.tasks.front();
        row.auc = mr.tasks.at(first_task).auc.value_or(0.5);
        rows.push_back(row);
        std::cout << var.name << ": median_step_ms=" << row.median_step_ms
                  << " auc=" << row.auc << "\n";
    }

    std::ostringstream md;
    md << "| Variant | Median step ms | Speed-Up | AUC | AUC Diff | Reference Speed-Up |\n";
    md << "|---|---|---|---|---|---|\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double speedup =
            i == 0 ? 0.0 : (rows[0].median_step_ms / rows[i].median_step_ms - 1.0) * 100.0;
        char sp[64];
        std::snprintf(sp, sizeof(sp), "%+.1f%%", speedup);
        char ad[64];
        std::snprintf(ad, sizeof(ad), "%+.4f", rows[i].auc - rows[0].auc);
        md << "| " << rows[i].name << " | " << rows[i].median_step_ms << " | "
           << (i == 0 ? "/" : sp) << " | " << rows[i].auc << " | " << (i == 0 ? "/" : ad)
           << " | ";
        if (i == 0) {
            md << "/ |\n";
        } else {
            md << "+" << reference_speedup_pct(rows[i].name) << "% |\n";
        }
    }
    const std::string md_path = (fs::path(out_dir) / "compare.md").string();
    write_text_file(md_path, md.str());
    std::cout << md.str();
    std::cout << "table: " << md_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"genrank: generative ranking engine"};
    app.require_subcommand(1);

    std::string config_path, out_dir, logs_path, train_cfg, model_cfg, ckpt_path, report_path;
    std::string probe_name = "all", catalog_path;
    int n = 480, c = 32, reps = 20, batch = 8, min_history = 0;
    std::uint64_t seed = 1;

    auto* gen = app.add_subcommand("gen-data", "generate synthetic exposure logs");
    gen->add_option("--config", config_path, "generator key=value config")->required();
    gen->add_option("--out", out_dir, "output directory")->required();

    auto* train_cmd = app.add_subcommand("train", "train a model over exposure logs");
    train_cmd->add_option("--logs", logs_path, "logs.jsonl")->required();
    train_cmd->add_option("--train-config", train_cfg, "training key=value config")->required();
    train_cmd->add_option("--model-config", model_cfg, "model key=value config")->required();
    train_cmd->add_option("--out", ckpt_path, "output checkpoint path")->required();
    train_cmd->add_option("--catalog", catalog_path, "side-embedding catalog.bin (optional)");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint (AUC/GAUC)");
    eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint")->required();
    eval_cmd->add_option("--logs", logs_path, "logs.jsonl")->required();
    eval_cmd->add_option("--report", report_path, "output JSON report")->required();
    eval_cmd->add_option("--min-history", min_history, "skip requests with fewer history items");
    eval_cmd->add_option("--catalog", catalog_path, "side-embedding catalog.bin (optional)");

    auto* bench_cmd = app.add_subcommand("bench", "compare the four variants' step cost");
    bench_cmd->add_option("--model-config", model_cfg, "model key=value config")->required();
    bench_cmd->add_option("--n", n, "history items");
    bench_cmd->add_option("--c", c, "candidate count");
    bench_cmd->add_option("--reps", reps, "timed repetitions");
    bench_cmd->add_option("--batch", batch, "sequences per step");
    bench_cmd->add_option("--report", report_path, "output JSON report")->required();
    bench_cmd->add_option("--seed", seed, "rng seed");

    auto* probe_cmd = app.add_subcommand("probe", "run an invariant probe on a checkpoint");
    probe_cmd->add_option("--ckpt", ckpt_path, "checkpoint")->required();
    probe_cmd->add_option("--name", probe_name,
                          "probe name (causality, candidate-isolation, label-leakage, "
                          "kv-equivalence, gradcheck, alibi-monotone, length-law, all)");
    probe_cmd->add_option("--seed", seed, "rng seed");

    auto* compare_cmd = app.add_subcommand("compare", "train all four variants end to end");
    compare_cmd->add_option("--configs", config_path,
                            "directory with gen.cfg, model.cfg, train.cfg")
        ->required();
    compare_cmd->add_option("--out", out_dir, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(config_path, out_dir);
        if (train_cmd->parsed()) {
            return cmd_train(logs_path, train_cfg, model_cfg, ckpt_path, catalog_path);
        }
        if (eval_cmd->parsed()) {
            return cmd_eval(ckpt_path, logs_path, report_path, min_history, catalog_path);
        }
        if (bench_cmd->parsed()) {
            return cmd_bench(model_cfg, n, c, reps, batch, report_path, seed);
        }
        if (probe_cmd->parsed()) return cmd_probe(ckpt_path, probe_name, seed);
        if (compare_cmd->parsed()) return cmd_compare(config_path, out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
