#include "tfm/params.hpp"

#include <cmath>

#include "tfm/errors.hpp"

namespace tfm::num {

const char* to_string(Precision p) { return p == Precision::f64 ? "f64" : "f32"; }

Precision parse_precision(const std::string& s) {
  if (s == "f64") return Precision::f64;
  if (s == "f32") return Precision::f32;
  throw bad_data("unknown precision: " + s);
}

ParamStore::Entry& ParamStore::add(const std::string& name,
                                   std::vector<std::size_t> shape) {
  if (entries_.count(name)) throw bad_args("duplicate parameter name: " + name);
  Entry& e = entries_[name];
  e.value = Tensor(std::move(shape));
  e.grad.assign(e.value.size(), 0.0);
  e.m.assign(e.value.size(), 0.0);
  e.v.assign(e.value.size(), 0.0);
  return e;
}

ParamStore::Entry& ParamStore::entry(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw bad_args("unknown parameter: " + name);
  return it->second;
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw bad_args("unknown parameter: " + name);
  return it->second;
}

std::size_t ParamStore::count() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) n += e.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, e] : entries_)
    std::fill(e.grad.begin(), e.grad.end(), 0.0);
}

double ParamStore::grad_norm() const {
  double s = 0;
  for (const auto& [name, e] : entries_)
    for (double g : e.grad) s += g * g;
  return std::sqrt(s);
}

double ParamStore::clip_global_norm(double max_norm) {
  double norm = grad_norm();
  if (norm > max_norm && norm > 0) {
    double f = max_norm / norm;
    for (auto& [name, e] : entries_)
      for (double& g : e.grad) g *= f;
  }
  return norm;
}

void ParamStore::adam_step(const AdamConfig& cfg, long long t) {
  if (t < 1) throw bad_args("adam step counter must be >= 1");
  double bc1 = 1.0 - std::pow(cfg.beta1, double(t));
  double bc2 = 1.0 - std::pow(cfg.beta2, double(t));
  for (auto& [name, e] : entries_) {
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      double g = e.grad[i];
      e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g;
      e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g * g;
      double mhat = e.m[i] / bc1;
      double vhat = e.v[i] / bc2;
      e.value.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

void init_uniform(ParamStore& ps, Rng& rng, const std::string& name,
                  std::vector<std::size_t> shape, double lo, double hi) {
  auto& e = ps.add(name, std::move(shape));
  for (double& x : e.value.data) x = rng.uniform(lo, hi);
}

void init_affine(ParamStore& ps, Rng& rng, const std::string& prefix,
                 std::size_t out, std::size_t in) {
  double r = std::sqrt(6.0 / double(in + out));
  init_uniform(ps, rng, prefix + ".w", {out, in}, -r, r);
  ps.add(prefix + ".b", {out});
}

void init_mlp2(ParamStore& ps, Rng& rng, const std::string& prefix,
               std::size_t in, std::size_t hidden, std::size_t out) {
  init_affine(ps, rng, prefix + ".l1", hidden, in);
  init_affine(ps, rng, prefix + ".l2", out, hidden);
}

void init_gru(ParamStore& ps, Rng& rng, const std::string& prefix,
              std::size_t d_in, std::size_t d_h) {
  init_affine(ps, rng, prefix + ".z", d_h, d_in + d_h);
  init_affine(ps, rng, prefix + ".r", d_h, d_in + d_h);
  init_affine(ps, rng, prefix + ".h", d_h, d_in + d_h);
}

void init_time_encoding(ParamStore& ps, Rng& rng, const std::string& prefix,
                        std::size_t d_w) {
  init_uniform(ps, rng, prefix + ".w", {d_w}, -1.0, 1.0);
  init_uniform(ps, rng, prefix + ".b", {d_w}, -1.0, 1.0);
}

} // namespace tfm::num
