#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace tfm {

/// Deterministic RNG wrapper. Draws are defined here (not via std
/// distributions, whose output is implementation-defined) so that logs and
/// checkpoints are reproducible byte-for-byte on any platform.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1) with 53 bits of entropy.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Modulo bias is negligible for the n used here.
  std::uint64_t uniform_int(std::uint64_t n) { return n == 0 ? 0 : gen_() % n; }

private:
  std::mt19937_64 gen_;
};

/// SHA-256 of a byte buffer, lowercase hex. Used for run-manifest hashes.
std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file_hex(const std::string& path);

/// Shortest round-trip decimal form of a double (%.17g trimmed).
std::string format_double(double v);

/// Pearson correlation; returns 0 when either side has zero variance.
double pearson(const std::vector<double>& a, const std::vector<double>& b);

/// Spearman rank correlation with average ranks on ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

double median(std::vector<double> v);

} // namespace tfm
