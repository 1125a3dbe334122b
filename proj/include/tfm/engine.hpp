#pragma once

#include <map>
#include <string>
#include <vector>

#include "tfm/errors.hpp"
#include "tfm/kernels.hpp"
#include "tfm/params.hpp"
#include "tfm/tape.hpp"

namespace tfm::num {

// Value-only twin of Tape: identical method set and identical forward
// arithmetic (both delegate to kern::*), but no gradient bookkeeping. Model
// code is templated on the engine; training instantiates Tape, inference
// instantiates ValueEngine.
class ValueEngine {
 public:
  static constexpr bool kHasGrad = false;

  explicit ValueEngine(const ParamStore& ps) : ps_(&ps) {}

  Val input(std::vector<double> v) { return push(std::move(v)); }

  Val constant(double c, std::size_t n = 1) {
    return push(std::vector<double>(n, c));
  }

  Val param(const std::string& name) {
    auto it = param_cache_.find(name);
    if (it != param_cache_.end()) return it->second;
    Val v = push(ps_->entry(name).value.data);
    param_cache_.emplace(name, v);
    return v;
  }

  Val add(Val a, Val b) {
    require(val(a).size() == val(b).size(), "add: size mismatch");
    return push(kern::add(val(a), val(b)));
  }
  Val sub(Val a, Val b) {
    require(val(a).size() == val(b).size(), "sub: size mismatch");
    return push(kern::sub(val(a), val(b)));
  }
  Val mul(Val a, Val b) {
    require(val(a).size() == val(b).size(), "mul: size mismatch");
    return push(kern::mul(val(a), val(b)));
  }
  Val scale(Val a, double c) { return push(kern::scale(val(a), c)); }

  Val matvec(Val w, Val x, std::size_t m, std::size_t n) {
    require(val(w).size() == m * n, "matvec: weight size mismatch");
    require(val(x).size() == n, "matvec: vector size mismatch");
    return push(kern::matvec(val(w), val(x), m, n));
  }

  Val concat(const std::vector<Val>& parts) {
    require(!parts.empty(), "concat: empty");
    std::vector<double> out;
    for (Val p : parts) out.insert(out.end(), val(p).begin(), val(p).end());
    return push(std::move(out));
  }

  Val relu(Val a) { return push(kern::relu(val(a))); }
  Val tanh_(Val a) { return push(kern::tanh(val(a))); }
  Val sigmoid(Val a) { return push(kern::sigmoid(val(a))); }
  Val cos_(Val a) { return push(kern::cos(val(a))); }

  Val sum(Val a) { return push({kern::sum(val(a))}); }
  Val mean(Val a) {
    require(!val(a).empty(), "mean: empty");
    return push({kern::mean(val(a))});
  }
  Val dot(Val a, Val b) {
    require(val(a).size() == val(b).size(), "dot: size mismatch");
    return push({kern::dot(val(a), val(b))});
  }

  Val stack(const std::vector<Val>& scalars) {
    require(!scalars.empty(), "stack: empty");
    std::vector<double> out;
    out.reserve(scalars.size());
    for (Val s : scalars) {
      require(val(s).size() == 1, "stack: non-scalar element");
      out.push_back(val(s)[0]);
    }
    return push(std::move(out));
  }

  Val softmax(Val logits) {
    require(!val(logits).empty(), "softmax: empty");
    return push(kern::softmax(val(logits)));
  }
  Val log_softmax(Val logits) {
    require(!val(logits).empty(), "log_softmax: empty");
    return push(kern::log_softmax(val(logits)));
  }

  Val pick(Val a, std::size_t idx) {
    require(idx < val(a).size(), "pick: index out of range");
    return push({val(a)[idx]});
  }

  Val weighted_sum(Val coeffs, const std::vector<Val>& vecs) {
    require(val(coeffs).size() == vecs.size(), "weighted_sum: coeff count mismatch");
    require(!vecs.empty(), "weighted_sum: empty");
    std::vector<const std::vector<double>*> ptrs;
    ptrs.reserve(vecs.size());
    std::size_t d = val(vecs[0]).size();
    for (Val v : vecs) {
      require(val(v).size() == d, "weighted_sum: vector size mismatch");
      ptrs.push_back(&val(v));
    }
    return push(kern::weighted_sum(val(coeffs), ptrs));
  }

  const std::vector<double>& value(Val v) const { return val(v); }

  double scalar(Val v) const {
    require(val(v).size() == 1, "scalar: non-scalar value");
    return val(v)[0];
  }

  std::size_t size() const { return vals_.size(); }

 private:
  static void require(bool cond, const char* msg) {
    if (!cond) throw numeric_error(msg);
  }

  const std::vector<double>& val(Val v) const {
    require(v.id >= 0 && static_cast<std::size_t>(v.id) < vals_.size(),
            "engine: bad value handle");
    return vals_[static_cast<std::size_t>(v.id)];
  }

  Val push(std::vector<double> v) {
    for (double x : v) {
      if (!std::isfinite(x)) throw numeric_error("engine: non-finite value produced");
    }
    vals_.push_back(std::move(v));
    return Val{static_cast<int>(vals_.size()) - 1};
  }

  const ParamStore* ps_;
  std::vector<std::vector<double>> vals_;
  std::map<std::string, Val> param_cache_;
};

using TapeEngine = Tape;

} // namespace tfm::num
