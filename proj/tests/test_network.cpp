#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "genrank/cost.hpp"
#include "genrank/kv_cache.hpp"
#include "genrank/network.hpp"
#include "genrank/probes.hpp"
#include "genrank/randomseq.hpp"

#include <filesystem>

namespace fs = std::filesystem;
using namespace genrank;

namespace {

const std::vector<std::string> kTasks = {"click", "engage"};

ModelConfig small_config(BiasMode bias = BiasMode::kALiBi) {
    ModelConfig cfg;
    cfg.num_blocks = 2;
    cfg.num_heads = 2;
    cfg.hidden_dim = 16;
    cfg.item_vocab = 50;
    cfg.max_len = 64;
    cfg.bias_mode = bias;
    cfg.precision = Precision::kFloat64;
    cfg.tasks = kTasks;
    return cfg;
}

TokenizedSequence random_sequence(const ModelConfig& cfg, int n, int c, std::uint64_t seed,
                                  OrganizationKind org = OrganizationKind::kActionOriented) {
    auto rng = make_rng(seed, 0x7E57);
    auto history = synthetic_history(n, cfg.item_vocab, cfg.tasks, rng);
    auto candidates = synthetic_candidates(c, cfg.item_vocab, rng);
    const std::int64_t now = history.empty() ? 1600000000 : history.back().ts + 42;
    BuildOptions opts;
    opts.max_len = cfg.max_len;
    return build_sequence(history, candidates, now, org, cfg.tasks, opts);
}

}  // namespace

TEST_CASE("fresh model scores exactly zero") {
    auto cfg = small_config();
    auto params = make_params<double>(cfg);
    init_params(cfg, params, 9);  // heads zero-init
    auto seq = random_sequence(cfg, 12, 4, 1);
    MatXd scores = forward<double>(cfg, params, seq);
    CHECK(scores.rows() == 4);
    CHECK(scores.cols() == 2);
    CHECK(scores.cwiseAbs().maxCoeff() == 0.0);  // sigmoid 0.5 everywhere
}

TEST_CASE("zeroed embedding tables compose to the zero vector") {
    auto cfg = small_config();
    auto params = make_params<double>(cfg);  // all tensors zero
    auto seq = random_sequence(cfg, 3, 2, 2);
    MatXd x = compose_input<double>(cfg, params, seq, nullptr);
    CHECK(x.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("composition is additive in the action tables") {
    auto cfg = small_config();
    auto params = make_params<double>(cfg);
    init_params(cfg, params, 3);
    Token a;
    a.item = 5;
    a.has_action = true;
    a.action_bits = 0b01;  // click only
    a.position = 2;
    a.request = 1;
    a.time_bucket = 3;
    Token b = a;
    b.action_bits = 0b11;  // click + engage
    RowVec<double> ea(cfg.hidden_dim), eb(cfg.hidden_dim);
    compose_input_row<double>(cfg, params, a, nullptr, ea);
    compose_input_row<double>(cfg, params, b, nullptr, eb);
    RowVec<double> diff = eb - ea;
    RowVec<double> engage_row = params.action_table.row(kActionTaskRow0 + 1);
    CHECK((diff - engage_row).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("out-of-vocabulary items map to the reserved row, not an error") {
    auto cfg = small_config();
    auto params = make_params<double>(cfg);
    init_params(cfg, params, 4);
    Token tok;
    tok.item = cfg.item_vocab + 1000;
    tok.has_action = true;
    tok.action_masked = true;
    RowVec<double> e(cfg.hidden_dim), oov(cfg.hidden_dim);
    compose_input_row<double>(cfg, params, tok, nullptr, e);
    Token tok2 = tok;
    tok2.item = cfg.item_vocab;  // first out-of-range id
    compose_input_row<double>(cfg, params, tok2, nullptr, oov);
    CHECK((e - oov).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("alibi slopes form the geometric sequence") {
    // H=8: slopes 1/2, 1/4, ..., 1/256
    for (int h = 0; h < 8; ++h) {
        CHECK(alibi_slope(h, 8) == doctest::Approx(std::pow(0.5, h + 1)).epsilon(1e-15));
    }
    CHECK(alibi_bias(0, 8, 7, 7) == 0.0);
    CHECK(alibi_bias(3, 8, 12, 2) == doctest::Approx(-10.0 * std::pow(0.5, 4)));
    // strictly decreasing with distance, every head
    for (int h = 0; h < 8; ++h) {
        double prev = alibi_bias(h, 8, 0, 0);
        for (int d = 1; d <= 100; ++d) {
            const double cur = alibi_bias(h, 8, d, 0);
            CHECK(cur < prev);
            prev = cur;
        }
    }
}

TEST_CASE("cost model: halving the length quarters attention and halves projections") {
    auto cfg = small_config();
    // pick N, C so both organizations give even lengths
    const auto full = count_cost(cfg, 200, 56, OrganizationKind::kActionOriented);   // L=256
    const auto half = count_cost(cfg, 100, 28, OrganizationKind::kActionOriented);   // L=128
    CHECK(half.attention_flops * 4 == full.attention_flops);
    CHECK(half.projection_flops * 2 == full.projection_flops);
}

TEST_CASE("cost model: organization-level ratio at N=100, C=20") {
    auto cfg = small_config();
    const auto ao = count_cost(cfg, 100, 20, OrganizationKind::kActionOriented);
    const auto il = count_cost(cfg, 100, 20, OrganizationKind::kItemInterleaved);
    const double ratio = static_cast<double>(ao.attention_flops) /
                         static_cast<double>(il.attention_flops);
    CHECK(std::abs(ratio - (120.0 / 220.0) * (120.0 / 220.0)) <= 1e-12);
    const double pratio = static_cast<double>(ao.projection_flops) /
                          static_cast<double>(il.projection_flops);
    CHECK(std::abs(pratio - 120.0 / 220.0) <= 1e-12);
}

TEST_CASE("bias io elements and the parameter-count law") {
    auto alibi_cfg = small_config(BiasMode::kALiBi);
    auto lr_cfg = small_config(BiasMode::kLearnableRelative);
    const auto a = count_cost(alibi_cfg, 100, 20, OrganizationKind::kActionOriented);
    const auto l = count_cost(lr_cfg, 100, 20, OrganizationKind::kActionOriented);
    CHECK(a.bias_io_elements == 0);
    CHECK(l.bias_io_elements == static_cast<long long>(lr_cfg.num_heads) * 120 * 120);
    // parameter difference is exactly the relative-bias tables
    const long long table_size = static_cast<long long>(lr_cfg.num_heads) *
                                     (2 * lr_cfg.max_len + 1) +
                                 static_cast<long long>(lr_cfg.num_heads) * lr_cfg.time_buckets;
    CHECK(l.param_count - a.param_count == table_size);
    CHECK(a.param_count < l.param_count);
    // closed form matches the real tensors
    auto pa = make_params<double>(alibi_cfg);
    auto pl = make_params<double>(lr_cfg);
    CHECK(param_count(pa) == a.param_count);
    CHECK(param_count(pl) == l.param_count);
}

TEST_CASE("bce loss examples") {
    auto cfg = small_config();
    TokenizedSequence seq;
    seq.loss_positions = {0};
    seq.loss_labels = {0b01};  // click=1, engage=0
    MatXd scores(1, 2);
    scores.setZero();
    auto bce = bce_sum<double>(scores, seq);
    CHECK(bce.count == 2);
    CHECK(bce.sum / 2.0 == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // saturated scores: loss below 1e-9
    MatXd perfect(1, 2);
    perfect(0, 0) = 1e9;    // clamped to +30, label 1
    perfect(0, 1) = -1e9;   // clamped to -30, label 0
    auto sat = bce_sum<double>(perfect, seq);
    CHECK(sat.sum / 2.0 < 1e-9);
    CHECK(sat.dsum.cwiseAbs().maxCoeff() == 0.0);  // clamp zeroes the gradient
}

TEST_CASE("flipping candidate labels never changes forward scores") {
    auto cfg = small_config();
    auto params = make_params<double>(cfg);
    init_params(cfg, params, 12);
    std::normal_distribution<double> gauss(0.0, 0.3);
    auto rng = make_rng(12, 1);
    for (Eigen::Index i = 0; i < params.head_w.size(); ++i) params.head_w.data()[i] = gauss(rng);
    auto seq = random_sequence(cfg, 20, 6, 5);
    MatXd base = forward<double>(cfg, params, seq);
    TokenizedSequence flipped = seq;
    for (auto& bits : flipped.loss_labels) bits ^= 0b11;
    MatXd after = forward<double>(cfg, params, flipped);
    CHECK((base - after).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("candidate isolation: alone vs joint is bit-identical") {
    for (auto precision_pass : {0, 1}) {
        auto cfg = small_config();
        auto seq_seed = 77u + precision_pass;
        if (precision_pass == 0) {
            auto params = make_params<double>(cfg);
            init_params(cfg, params, 31);
            auto rng = make_rng(31, 2);
            std::normal_distribution<double> gauss(0.0, 0.3);
            for (Eigen::Index i = 0; i < params.head_w.size(); ++i) {
                params.head_w.data()[i] = gauss(rng);
            }
            auto rng2 = make_rng(seq_seed, 0);
            auto history = synthetic_history(24, cfg.item_vocab, cfg.tasks, rng2);
            auto candidates = synthetic_candidates(10, cfg.item_vocab, rng2);
            const std::int64_t now = history.back().ts + 5;
            auto joint = build_sequence(history, candidates, now,
                                        OrganizationKind::kActionOriented, cfg.tasks);
            MatXd joint_scores = forward<double>(cfg, params, joint);
            for (std::size_t j = 0; j < candidates.size(); ++j) {
                std::vector<std::int64_t> one{candidates[j]};
                auto solo = build_sequence(history, one, now, OrganizationKind::kActionOriented,
                                           cfg.tasks);
                MatXd s = forward<double>(cfg, params, solo);
                CHECK((joint_scores.row(static_cast<Eigen::Index>(j)) - s.row(0))
                          .cwiseAbs()
                          .maxCoeff() == 0.0);
            }
        } else {
            cfg.precision = Precision::kFloat32;
            auto params = make_params<float>(cfg);
            init_params(cfg, params, 31);
            auto rng = make_rng(31, 2);
            std::normal_distribution<double> gauss(0.0, 0.3);
            for (Eigen::Index i = 0; i < params.head_w.size(); ++i) {
                params.head_w.data()[i] = static_cast<float>(gauss(rng));
            }
            auto rng2 = make_rng(seq_seed, 0);
            auto history = synthetic_history(24, cfg.item_vocab, cfg.tasks, rng2);
            auto candidates = synthetic_candidates(10, cfg.item_vocab, rng2);
            const std::int64_t now = history.back().ts + 5;
            auto joint = build_sequence(history, candidates, now,
                                        OrganizationKind::kActionOriented, cfg.tasks);
            MatXf joint_scores = forward<float>(cfg, params, joint);
            for (std::size_t j = 0; j < candidates.size(); ++j) {
                std::vector<std::int64_t> one{candidates[j]};
                auto solo = build_sequence(history, one, now, OrganizationKind::kActionOriented,
                                           cfg.tasks);
                MatXf s = forward<float>(cfg, params, solo);
                CHECK((joint_scores.row(static_cast<Eigen::Index>(j)) - s.row(0))
                          .cwiseAbs()
                          .maxCoeff() == 0.0f);
            }
        }
    }
}

TEST_CASE("kv-cache incremental scoring equals full forward") {
    for (auto bias : {BiasMode::kALiBi, BiasMode::kLearnableRelative, BiasMode::kNone}) {
        auto cfg = small_config(bias);
        auto params = make_params<double>(cfg);
        init_params(cfg, params, 21);
        auto rng = make_rng(21, 3);
        std::normal_distribution<double> gauss(0.0, 0.3);
        for (Eigen::Index i = 0; i < params.head_w.size(); ++i) params.head_w.data()[i] = gauss(rng);
        if (bias == BiasMode::kLearnableRelative) {
            for (Eigen::Index i = 0; i < params.relpos_bias.size(); ++i) {
                params.relpos_bias.data()[i] = 0.05 * gauss(rng);
            }
            for (Eigen::Index i = 0; i < params.reltime_bias.size(); ++i) {
                params.reltime_bias.data()[i] = 0.05 * gauss(rng);
            }
        }
        for (int n : {0, 1, 7, 30}) {
            auto seq = random_sequence(cfg, n, 5, 100 + n);
            MatXd full = forward<double>(cfg, params, seq);
            auto cache = build_kv_cache<double>(cfg, params, seq);
            MatXd inc = score_incremental<double>(cfg, params, cache, seq);
            CHECK((full - inc).cwiseAbs().maxCoeff() == 0.0);
        }
    }
}

TEST_CASE("kv cache detects stale parameters") {
    auto cfg = small_config();
    auto params = make_params<double>(cfg);
    init_params(cfg, params, 8);
    auto seq = random_sequence(cfg, 6, 2, 9);
    auto cache = build_kv_cache<double>(cfg, params, seq);
    params.revision++;  // simulated optimizer step
    CHECK_THROWS_AS((void)score_incremental<double>(cfg, params, cache, seq), StalenessError);
}

TEST_CASE("cache reuse across candidate sets over one history") {
    auto cfg = small_config();
    auto params = make_params<double>(cfg);
    init_params(cfg, params, 13);
    auto rng = make_rng(13, 4);
    std::normal_distribution<double> gauss(0.0, 0.3);
    for (Eigen::Index i = 0; i < params.head_w.size(); ++i) params.head_w.data()[i] = gauss(rng);
    auto history = synthetic_history(18, cfg.item_vocab, cfg.tasks, rng);
    const std::int64_t now = history.back().ts + 11;
    auto set_a = synthetic_candidates(4, cfg.item_vocab, rng);
    auto set_b = synthetic_candidates(7, cfg.item_vocab, rng);
    std::vector<std::int64_t> merged = set_a;
    merged.insert(merged.end(), set_b.begin(), set_b.end());

    auto seq_a = build_sequence(history, set_a, now, OrganizationKind::kActionOriented, cfg.tasks);
    auto seq_m = build_sequence(history, merged, now, OrganizationKind::kActionOriented, cfg.tasks);
    auto cache = build_kv_cache<double>(cfg, params, seq_a);
    MatXd scores_a = score_incremental<double>(cfg, params, cache, seq_a);
    MatXd scores_m = score_incremental<double>(cfg, params, cache, seq_m);
    for (std::size_t j = 0; j < set_a.size(); ++j) {
        CHECK((scores_a.row(static_cast<Eigen::Index>(j)) -
               scores_m.row(static_cast<Eigen::Index>(j)))
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
    }
}

TEST_CASE("perturbing a suffix token never changes earlier hidden states") {
    auto cfg = small_config();
    auto params = make_params<double>(cfg);
    init_params(cfg, params, 55);
    auto seq = random_sequence(cfg, 10, 3, 6);
    ForwardTrace<double> base;
    forward<double>(cfg, params, seq, nullptr, &base);
    for (int j = 1; j < seq.length(); ++j) {
        TokenizedSequence mut = seq;
        mut.tokens[static_cast<std::size_t>(j)].item =
            (mut.tokens[static_cast<std::size_t>(j)].item + 1) % cfg.item_vocab;
        ForwardTrace<double> t;
        forward<double>(cfg, params, mut, nullptr, &t);
        for (int r = 0; r < j; ++r) {
            CHECK((base.z.row(r) - t.z.row(r)).cwiseAbs().maxCoeff() == 0.0);
        }
    }
}

TEST_CASE("gradient check against central differences") {
    // the acceptance-grade model: 2 blocks, dim 16, 2 heads, fp64
    const double alibi_err = gradcheck_max_rel_error(BiasMode::kALiBi, 1);
    CHECK(alibi_err <= 1e-4);
    const double lr_err = gradcheck_max_rel_error(BiasMode::kLearnableRelative, 2);
    CHECK(lr_err <= 1e-4);
}

TEST_CASE("checkpoint round-trip is byte-identical and CRC-protected") {
    auto dir = fs::temp_directory_path() / "genrank_network_test";
    fs::create_directories(dir);
    auto cfg = small_config(BiasMode::kLearnableRelative);
    cfg.side_dim = 3;
    auto params = make_params<double>(cfg);
    init_params(cfg, params, 99);
    CheckpointMeta meta;
    meta.config = cfg;
    meta.organization = OrganizationKind::kItemInterleaved;
    meta.fully_visible_history = false;

    const auto p1 = (dir / "a.ckpt").string();
    const auto p2 = (dir / "b.ckpt").string();
    save_checkpoint(p1, meta, params);

    CheckpointMeta meta2;
    auto loaded = load_checkpoint<double>(p1, &meta2);
    CHECK(meta2.organization == OrganizationKind::kItemInterleaved);
    CHECK(meta2.config.side_dim == 3);
    CHECK(meta2.config.tasks == cfg.tasks);
    save_checkpoint(p2, meta2, loaded);
    CHECK(read_text_file(p1) == read_text_file(p2));
    const std::string bytes = read_text_file(p1);
    CHECK(bytes.substr(0, 4) == "GRNK");

    // corrupt one payload byte: CRC must catch it
    std::string corrupted = bytes;
    corrupted[bytes.size() / 2] = static_cast<char>(corrupted[bytes.size() / 2] ^ 0x01);
    const auto p3 = (dir / "c.ckpt").string();
    write_text_file(p3, corrupted);
    CHECK_THROWS_AS((void)load_checkpoint<double>(p3), ParseError);

    // wrong scalar type is refused
    CHECK_THROWS_AS((void)load_checkpoint<float>(p1), ParseError);
}

TEST_CASE("probe registry covers the named probes") {
    auto cfg = small_config();
    LoadedCheckpoint ckpt;
    ckpt.meta.config = cfg;
    ckpt.params_f64 = make_params<double>(cfg);
    init_params(cfg, ckpt.params_f64, 17);
    auto rng = make_rng(17, 5);
    std::normal_distribution<double> gauss(0.0, 0.3);
    for (Eigen::Index i = 0; i < ckpt.params_f64.head_w.size(); ++i) {
        ckpt.params_f64.head_w.data()[i] = gauss(rng);
    }
    for (const auto& name : probe_names()) {
        if (name == "gradcheck") continue;  // covered separately, slow
        auto res = run_probe(name, ckpt, 3);
        INFO(name, " violation=", res.max_violation);
        CHECK(res.pass);
    }
    CHECK_THROWS_AS((void)run_probe("nonsense", ckpt, 1), ConfigError);
}
