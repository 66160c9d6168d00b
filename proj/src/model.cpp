#include "genrank/model.hpp"

#include <Eigen/QR>

#include <cmath>
#include <cstring>
#include <fstream>

namespace genrank {

std::string to_string(BiasMode m) {
    switch (m) {
        case BiasMode::kALiBi: return "alibi";
        case BiasMode::kLearnableRelative: return "learnable_relative";
        case BiasMode::kNone: return "none";
    }
    return "?";
}

BiasMode bias_mode_from_string(const std::string& s) {
    if (s == "alibi") return BiasMode::kALiBi;
    if (s == "learnable_relative") return BiasMode::kLearnableRelative;
    if (s == "none") return BiasMode::kNone;
    throw ConfigError("unknown bias_mode: " + s);
}

std::string to_string(Precision p) {
    return p == Precision::kFloat32 ? "fp32" : "fp64";
}

Precision precision_from_string(const std::string& s) {
    if (s == "fp32") return Precision::kFloat32;
    if (s == "fp64") return Precision::kFloat64;
    throw ConfigError("unknown precision: " + s);
}

void ModelConfig::validate() const {
    if (num_blocks < 1) throw ConfigError("model: num_blocks must be >= 1");
    if (num_heads < 1) throw ConfigError("model: num_heads must be >= 1");
    if (hidden_dim < 1) throw ConfigError("model: hidden_dim must be >= 1");
    if (hidden_dim % num_heads != 0) {
        throw ConfigError("model: hidden_dim must be divisible by num_heads");
    }
    if (ffn_multiplier <= 0) throw ConfigError("model: ffn_multiplier must be > 0");
    if (item_vocab < 1) throw ConfigError("model: item_vocab must be >= 1");
    if (max_len < 1) throw ConfigError("model: max_len must be >= 1");
    if (time_buckets < 1) throw ConfigError("model: time_buckets must be >= 1");
    if (side_dim < 0) throw ConfigError("model: side_dim must be >= 0");
    if (tasks.empty()) throw ConfigError("model: at least one task required");
    if (tasks.size() > 32) throw ConfigError("model: at most 32 tasks supported");
}

ModelConfig ModelConfig::from_kv(const KvMap& kv) {
    ModelConfig c;
    c.num_blocks = static_cast<int>(kv_get_int(kv, "num_blocks", c.num_blocks));
    c.num_heads = static_cast<int>(kv_get_int(kv, "num_heads", c.num_heads));
    c.hidden_dim = static_cast<int>(kv_get_int(kv, "hidden_dim", c.hidden_dim));
    c.ffn_multiplier = kv_get_double(kv, "ffn_multiplier", c.ffn_multiplier);
    c.item_vocab = kv_get_int(kv, "item_vocab", c.item_vocab);
    c.max_len = static_cast<int>(kv_get_int(kv, "max_len", c.max_len));
    c.time_buckets = static_cast<int>(kv_get_int(kv, "time_buckets", c.time_buckets));
    c.side_dim = static_cast<int>(kv_get_int(kv, "side_dim", c.side_dim));
    c.bias_mode = bias_mode_from_string(kv_get(kv, "bias_mode", to_string(c.bias_mode)));
    c.precision = precision_from_string(kv_get(kv, "precision", to_string(c.precision)));
    if (kv.count("tasks")) c.tasks = split_csv(kv.at("tasks"));
    return c;
}

namespace {

template <class S>
void add_ref(std::vector<TensorRef<S>>& out, const std::string& name, MatX<S>& m) {
    if (m.size() == 0) return;
    out.push_back({name, m.data(), {m.rows(), m.cols()}, m.size()});
}

template <class S>
void add_ref(std::vector<TensorRef<S>>& out, const std::string& name, VecX<S>& v) {
    if (v.size() == 0) return;
    out.push_back({name, v.data(), {v.size()}, v.size()});
}

}  // namespace

template <class S>
std::vector<TensorRef<S>> tensor_refs(ModelParams<S>& p) {
    std::vector<TensorRef<S>> refs;
    add_ref(refs, "item_table", p.item_table);
    add_ref(refs, "action_table", p.action_table);
    add_ref(refs, "pos_table", p.pos_table);
    add_ref(refs, "req_table", p.req_table);
    add_ref(refs, "time_table", p.time_table);
    add_ref(refs, "side_proj", p.side_proj);
    for (std::size_t b = 0; b < p.blocks.size(); ++b) {
        const std::string pre = "blk" + std::to_string(b) + ".";
        auto& blk = p.blocks[b];
        add_ref(refs, pre + "ln1_gamma", blk.ln1_gamma);
        add_ref(refs, pre + "ln1_beta", blk.ln1_beta);
        add_ref(refs, pre + "wq", blk.wq);
        add_ref(refs, pre + "bq", blk.bq);
        add_ref(refs, pre + "wk", blk.wk);
        add_ref(refs, pre + "bk", blk.bk);
        add_ref(refs, pre + "wv", blk.wv);
        add_ref(refs, pre + "bv", blk.bv);
        add_ref(refs, pre + "wo", blk.wo);
        add_ref(refs, pre + "bo", blk.bo);
        add_ref(refs, pre + "ln2_gamma", blk.ln2_gamma);
        add_ref(refs, pre + "ln2_beta", blk.ln2_beta);
        add_ref(refs, pre + "w1", blk.w1);
        add_ref(refs, pre + "b1", blk.b1);
        add_ref(refs, pre + "w2", blk.w2);
        add_ref(refs, pre + "b2", blk.b2);
    }
    add_ref(refs, "lnf_gamma", p.lnf_gamma);
    add_ref(refs, "lnf_beta", p.lnf_beta);
    add_ref(refs, "head_w", p.head_w);
    add_ref(refs, "head_b", p.head_b);
    add_ref(refs, "relpos_bias", p.relpos_bias);
    add_ref(refs, "reltime_bias", p.reltime_bias);
    return refs;
}

template <class S>
ModelParams<S> make_params(const ModelConfig& cfg) {
    cfg.validate();
    const int d = cfg.hidden_dim;
    const int f = cfg.ffn_dim();
    ModelParams<S> p;
    p.item_table = MatX<S>::Zero(cfg.item_vocab + 1, d);
    p.action_table = MatX<S>::Zero(2 + cfg.num_tasks(), d);
    p.pos_table = MatX<S>::Zero(cfg.max_len + 1, d);
    p.req_table = MatX<S>::Zero(cfg.max_len + 2, d);
    p.time_table = MatX<S>::Zero(cfg.time_buckets, d);
    if (cfg.side_dim > 0) p.side_proj = MatX<S>::Zero(cfg.side_dim, d);
    p.blocks.resize(static_cast<std::size_t>(cfg.num_blocks));
    for (auto& blk : p.blocks) {
        blk.ln1_gamma = VecX<S>::Zero(d);
        blk.ln1_beta = VecX<S>::Zero(d);
        blk.wq = MatX<S>::Zero(d, d);
        blk.wk = MatX<S>::Zero(d, d);
        blk.wv = MatX<S>::Zero(d, d);
        blk.wo = MatX<S>::Zero(d, d);
        blk.bq = VecX<S>::Zero(d);
        blk.bk = VecX<S>::Zero(d);
        blk.bv = VecX<S>::Zero(d);
        blk.bo = VecX<S>::Zero(d);
        blk.ln2_gamma = VecX<S>::Zero(d);
        blk.ln2_beta = VecX<S>::Zero(d);
        blk.w1 = MatX<S>::Zero(d, f);
        blk.b1 = VecX<S>::Zero(f);
        blk.w2 = MatX<S>::Zero(f, d);
        blk.b2 = VecX<S>::Zero(d);
    }
    p.lnf_gamma = VecX<S>::Zero(d);
    p.lnf_beta = VecX<S>::Zero(d);
    p.head_w = MatX<S>::Zero(cfg.num_tasks(), d);
    p.head_b = VecX<S>::Zero(cfg.num_tasks());
    if (cfg.bias_mode == BiasMode::kLearnableRelative) {
        p.relpos_bias = MatX<S>::Zero(cfg.num_heads, 2 * cfg.max_len + 1);
        p.reltime_bias = MatX<S>::Zero(cfg.num_heads, cfg.time_buckets);
    }
    return p;
}

namespace {

// Orthogonal columns (rows >= cols) or rows (rows < cols) from a Gaussian QR.
MatXd orthogonal_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    const bool tall = rows >= cols;
    const Eigen::Index r = tall ? rows : cols;
    const Eigen::Index c = tall ? cols : rows;
    Eigen::MatrixXd a(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
        for (Eigen::Index j = 0; j < c; ++j) a(i, j) = gauss(rng);
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(r, c);
    // fix sign so the decomposition is unique
    for (Eigen::Index j = 0; j < c; ++j) {
        if (qr.matrixQR()(j, j) < 0) q.col(j) = -q.col(j);
    }
    MatXd out;
    if (tall) out = q;
    else out = q.transpose();
    return out;
}

template <class S>
void fill_gaussian(MatX<S>& m, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, stddev);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = static_cast<S>(gauss(rng));
    }
}

}  // namespace

template <class S>
void init_params(const ModelConfig& cfg, ModelParams<S>& p, std::uint64_t seed) {
    auto rng = make_rng(seed, 0x1217);
    fill_gaussian(p.item_table, 0.02, rng);
    fill_gaussian(p.action_table, 0.02, rng);
    fill_gaussian(p.pos_table, 0.02, rng);
    fill_gaussian(p.req_table, 0.02, rng);
    fill_gaussian(p.time_table, 0.02, rng);
    if (p.side_proj.size() > 0) fill_gaussian(p.side_proj, 0.02, rng);
    for (auto& blk : p.blocks) {
        blk.ln1_gamma.setOnes();
        blk.ln2_gamma.setOnes();
        blk.wq = orthogonal_matrix(blk.wq.rows(), blk.wq.cols(), rng).template cast<S>();
        blk.wk = orthogonal_matrix(blk.wk.rows(), blk.wk.cols(), rng).template cast<S>();
        blk.wv = orthogonal_matrix(blk.wv.rows(), blk.wv.cols(), rng).template cast<S>();
        blk.wo = orthogonal_matrix(blk.wo.rows(), blk.wo.cols(), rng).template cast<S>();
        blk.w1 = orthogonal_matrix(blk.w1.rows(), blk.w1.cols(), rng).template cast<S>();
        blk.w2 = orthogonal_matrix(blk.w2.rows(), blk.w2.cols(), rng).template cast<S>();
    }
    p.lnf_gamma.setOnes();
    // heads and bias tables stay zero: fresh models score exactly 0
    p.revision = 0;
}

template <class S>
long param_count(const ModelParams<S>& p) {
    long n = 0;
    auto& mutable_p = const_cast<ModelParams<S>&>(p);
    for (const auto& ref : tensor_refs(mutable_p)) n += ref.size;
    return n;
}

long param_count(const ModelConfig& cfg) {
    cfg.validate();
    const long d = cfg.hidden_dim;
    const long f = cfg.ffn_dim();
    const long t = cfg.num_tasks();
    long n = 0;
    n += (cfg.item_vocab + 1) * d;
    n += (2 + t) * d;
    n += (cfg.max_len + 1) * d;
    n += (cfg.max_len + 2) * d;
    n += cfg.time_buckets * d;
    n += static_cast<long>(cfg.side_dim) * d;
    n += cfg.num_blocks * (2 * d + 4 * d * d + 4 * d + 2 * d + d * f + f + f * d + d);
    n += 2 * d;
    n += t * d + t;
    if (cfg.bias_mode == BiasMode::kLearnableRelative) {
        n += static_cast<long>(cfg.num_heads) * (2 * cfg.max_len + 1);
        n += static_cast<long>(cfg.num_heads) * cfg.time_buckets;
    }
    return n;
}

namespace {

void append_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void append_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void append_f64(std::string& buf, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    append_u64(buf, bits);
}

void append_str(std::string& buf, const std::string& s) {
    append_u32(buf, static_cast<std::uint32_t>(s.size()));
    buf.append(s);
}

struct Reader {
    std::string buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw ParseError("checkpoint: truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() {
        std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

void append_config(std::string& buf, const CheckpointMeta& meta) {
    const ModelConfig& c = meta.config;
    append_u32(buf, static_cast<std::uint32_t>(c.num_blocks));
    append_u32(buf, static_cast<std::uint32_t>(c.num_heads));
    append_u32(buf, static_cast<std::uint32_t>(c.hidden_dim));
    append_f64(buf, c.ffn_multiplier);
    append_u64(buf, static_cast<std::uint64_t>(c.item_vocab));
    append_u32(buf, static_cast<std::uint32_t>(c.max_len));
    append_u32(buf, static_cast<std::uint32_t>(c.time_buckets));
    append_u32(buf, static_cast<std::uint32_t>(c.side_dim));
    append_u32(buf, static_cast<std::uint32_t>(c.bias_mode));
    append_u32(buf, static_cast<std::uint32_t>(c.precision));
    append_u32(buf, static_cast<std::uint32_t>(meta.organization));
    append_u32(buf, meta.fully_visible_history ? 1u : 0u);
    append_u32(buf, static_cast<std::uint32_t>(c.tasks.size()));
    for (const auto& t : c.tasks) append_str(buf, t);
}

CheckpointMeta read_config(Reader& r) {
    CheckpointMeta meta;
    ModelConfig& c = meta.config;
    c.num_blocks = static_cast<int>(r.u32());
    c.num_heads = static_cast<int>(r.u32());
    c.hidden_dim = static_cast<int>(r.u32());
    c.ffn_multiplier = r.f64();
    c.item_vocab = static_cast<long>(r.u64());
    c.max_len = static_cast<int>(r.u32());
    c.time_buckets = static_cast<int>(r.u32());
    c.side_dim = static_cast<int>(r.u32());
    c.bias_mode = static_cast<BiasMode>(r.u32());
    c.precision = static_cast<Precision>(r.u32());
    meta.organization = static_cast<OrganizationKind>(r.u32());
    meta.fully_visible_history = r.u32() != 0;
    const std::uint32_t n_tasks = r.u32();
    c.tasks.clear();
    for (std::uint32_t i = 0; i < n_tasks; ++i) c.tasks.push_back(r.str());
    return meta;
}

template <class S>
constexpr std::uint32_t dtype_code() {
    return std::is_same_v<S, float> ? 0u : 1u;
}

std::string read_file_checked(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 8 || buf.compare(0, 4, "GRNK") != 0) {
        throw ParseError("checkpoint: bad magic");
    }
    const std::size_t body = buf.size() - 4;
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) {
        stored |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[body + i])) << (8 * i);
    }
    if (crc32(buf.data(), body) != stored) throw ParseError("checkpoint: CRC mismatch");
    return buf.substr(0, body);
}

}  // namespace

template <class S>
void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     ModelParams<S>& params) {
    std::string buf;
    buf.reserve(1 << 20);
    buf.append("GRNK");
    append_u32(buf, 1u);  // version
    append_config(buf, meta);
    auto refs = tensor_refs(params);
    append_u64(buf, refs.size());
    for (const auto& ref : refs) {
        append_str(buf, ref.name);
        append_u32(buf, dtype_code<S>());
        append_u32(buf, static_cast<std::uint32_t>(ref.dims.size()));
        for (long dim : ref.dims) append_u64(buf, static_cast<std::uint64_t>(dim));
        for (long i = 0; i < ref.size; ++i) {
            if constexpr (std::is_same_v<S, float>) {
                std::uint32_t bits;
                std::memcpy(&bits, &ref.data[i], 4);
                append_u32(buf, bits);
            } else {
                std::uint64_t bits;
                std::memcpy(&bits, &ref.data[i], 8);
                append_u64(buf, bits);
            }
        }
    }
    const std::uint32_t crc = crc32(buf.data(), buf.size());
    append_u32(buf, crc);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write checkpoint: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

CheckpointMeta peek_checkpoint(const std::string& path) {
    Reader r{read_file_checked(path), 0};
    r.pos = 4;  // magic
    const std::uint32_t version = r.u32();
    if (version != 1u) throw ParseError("checkpoint: unsupported version");
    return read_config(r);
}

template <class S>
ModelParams<S> load_checkpoint(const std::string& path, CheckpointMeta* meta_out) {
    Reader r{read_file_checked(path), 0};
    r.pos = 4;
    const std::uint32_t version = r.u32();
    if (version != 1u) throw ParseError("checkpoint: unsupported version");
    CheckpointMeta meta = read_config(r);
    if ((meta.config.precision == Precision::kFloat32) != std::is_same_v<S, float>) {
        throw ParseError("checkpoint: precision mismatch with requested scalar type");
    }
    ModelParams<S> params = make_params<S>(meta.config);
    auto refs = tensor_refs(params);
    const std::uint64_t count = r.u64();
    if (count != refs.size()) throw ParseError("checkpoint: unexpected tensor count");
    for (auto& ref : refs) {
        const std::string name = r.str();
        if (name != ref.name) throw ParseError("checkpoint: tensor order mismatch at " + name);
        const std::uint32_t dtype = r.u32();
        if (dtype != dtype_code<S>()) throw ParseError("checkpoint: dtype mismatch for " + name);
        const std::uint32_t rank = r.u32();
        if (rank != ref.dims.size()) throw ParseError("checkpoint: rank mismatch for " + name);
        for (long dim : ref.dims) {
            if (r.u64() != static_cast<std::uint64_t>(dim)) {
                throw ParseError("checkpoint: shape mismatch for " + name);
            }
        }
        for (long i = 0; i < ref.size; ++i) {
            if constexpr (std::is_same_v<S, float>) {
                const std::uint32_t bits = r.u32();
                std::memcpy(&ref.data[i], &bits, 4);
            } else {
                const std::uint64_t bits = r.u64();
                std::memcpy(&ref.data[i], &bits, 8);
            }
        }
    }
    if (meta_out) *meta_out = meta;
    return params;
}

LoadedCheckpoint load_checkpoint_any(const std::string& path) {
    LoadedCheckpoint out;
    out.meta = peek_checkpoint(path);
    if (out.meta.config.precision == Precision::kFloat32) {
        out.params_f32 = load_checkpoint<float>(path);
    } else {
        out.params_f64 = load_checkpoint<double>(path);
    }
    return out;
}

template std::vector<TensorRef<float>> tensor_refs(ModelParams<float>&);
template std::vector<TensorRef<double>> tensor_refs(ModelParams<double>&);
template ModelParams<float> make_params(const ModelConfig&);
template ModelParams<double> make_params(const ModelConfig&);
template void init_params(const ModelConfig&, ModelParams<float>&, std::uint64_t);
template void init_params(const ModelConfig&, ModelParams<double>&, std::uint64_t);
template long param_count(const ModelParams<float>&);
template long param_count(const ModelParams<double>&);
template void save_checkpoint(const std::string&, const CheckpointMeta&, ModelParams<float>&);
template void save_checkpoint(const std::string&, const CheckpointMeta&, ModelParams<double>&);
template ModelParams<float> load_checkpoint(const std::string&, CheckpointMeta*);
template ModelParams<double> load_checkpoint(const std::string&, CheckpointMeta*);

}  // namespace genrank
