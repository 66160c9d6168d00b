#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace genrank {

template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

using MatXf = MatX<float>;
using MatXd = MatX<double>;
using VecXf = VecX<float>;
using VecXd = VecX<double>;

// Errors thrown by config validation, file parsing and invariant checks.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};
struct StalenessError : std::runtime_error {
    explicit StalenessError(const std::string& msg) : std::runtime_error(msg) {}
};

// splitmix64; used to derive independent deterministic substreams from one seed.
std::uint64_t splitmix64(std::uint64_t x);

// mt19937_64 seeded from (seed, stream) so per-user / per-purpose streams are
// independent of how many other streams exist.
std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream);

// CRC-32 (polynomial 0xEDB88320), incremental.
std::uint32_t crc32_update(std::uint32_t crc, const void* data, std::size_t len);
inline std::uint32_t crc32(const void* data, std::size_t len) {
    return crc32_update(0, data, len);
}

// key=value config text: '#' comments, blank lines ignored, whitespace trimmed.
using KvMap = std::map<std::string, std::string>;
KvMap parse_kv_text(const std::string& text);
KvMap parse_kv_file(const std::string& path);

std::string kv_get(const KvMap& kv, const std::string& key, const std::string& fallback);
long long kv_get_int(const KvMap& kv, const std::string& key, long long fallback);
double kv_get_double(const KvMap& kv, const std::string& key, double fallback);
bool kv_get_bool(const KvMap& kv, const std::string& key, bool fallback);
std::vector<std::string> split_csv(const std::string& s);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace genrank
