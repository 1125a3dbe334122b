#pragma once

#include <map>
#include <string>
#include <vector>

#include "tfm/tensor.hpp"
#include "tfm/util.hpp"

namespace tfm::num {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Named parameters with gradients and Adam moments. std::map keeps iteration
// order stable, which fixes the reduction order everywhere downstream
// (checkpoints, clipping, updates).
class ParamStore {
 public:
  struct Entry {
    Tensor value;
    std::vector<double> grad, m, v;
  };

  Entry& add(const std::string& name, std::vector<std::size_t> shape);
  Entry& entry(const std::string& name);
  const Entry& entry(const std::string& name) const;
  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  std::map<std::string, Entry>& entries() { return entries_; }
  const std::map<std::string, Entry>& entries() const { return entries_; }

  std::size_t count() const; // total scalar parameters
  void zero_grad();
  double grad_norm() const;
  // Scales gradients so the global norm is at most max_norm; returns the
  // pre-clip norm.
  double clip_global_norm(double max_norm);
  void adam_step(const AdamConfig& cfg, long long t);

 private:
  std::map<std::string, Entry> entries_;
};

void init_uniform(ParamStore& ps, Rng& rng, const std::string& name,
                  std::vector<std::size_t> shape, double lo, double hi);

// W on [-sqrt(6/(in+out)), +...], b zero.
void init_affine(ParamStore& ps, Rng& rng, const std::string& prefix,
                 std::size_t out, std::size_t in);

void init_mlp2(ParamStore& ps, Rng& rng, const std::string& prefix,
               std::size_t in, std::size_t hidden, std::size_t out);

void init_gru(ParamStore& ps, Rng& rng, const std::string& prefix,
              std::size_t d_in, std::size_t d_h);

// w, b uniform on [-1, 1]; zero init would silence the gradients of b
// through the cosine at delta_t = 0.
void init_time_encoding(ParamStore& ps, Rng& rng, const std::string& prefix,
                        std::size_t d_w);

} // namespace tfm::num
