#pragma once

#include <string>
#include <vector>

#include "tfm/params.hpp"

namespace tfm::num {

// Handle to a value recorded on a Tape.
struct Val {
  int id = -1;
  bool ok() const { return id >= 0; }
};

// Reverse-mode tape over vector-valued nodes. Parameters enter as leaves
// bound to ParamStore entries; backward() accumulates into entry gradients
// (callers zero them). Every op checks its output for NaN/Inf and throws.
class Tape {
 public:
  static constexpr bool kHasGrad = true;

  explicit Tape(ParamStore& ps) : ps_(&ps) {}

  Val input(std::vector<double> v);
  Val constant(double c, std::size_t n = 1);
  Val param(const std::string& name); // cached per tape

  Val add(Val a, Val b);
  Val sub(Val a, Val b);
  Val mul(Val a, Val b);
  Val scale(Val a, double c);
  Val matvec(Val w, Val x, std::size_t m, std::size_t n);
  Val concat(const std::vector<Val>& parts);
  Val relu(Val a);
  Val tanh_(Val a);
  Val sigmoid(Val a);
  Val cos_(Val a);
  Val sum(Val a);
  Val mean(Val a);
  Val dot(Val a, Val b);
  Val stack(const std::vector<Val>& scalars);
  Val softmax(Val logits);
  Val log_softmax(Val logits);
  Val pick(Val a, std::size_t idx);
  // y = sum_k coeffs[k] * vecs[k]
  Val weighted_sum(Val coeffs, const std::vector<Val>& vecs);

  const std::vector<double>& value(Val v) const;
  double scalar(Val v) const;
  std::size_t size() const { return nodes_.size(); }

  // Backpropagates from a scalar root and adds parameter gradients into the
  // bound ParamStore.
  void backward(Val root);

 private:
  enum class Op {
    Input, Const, Param, Add, Sub, Mul, Scale, MatVec, Concat, Relu, Tanh,
    Sigmoid, Cos, Sum, Mean, Dot, Stack, Softmax, LogSoftmax, Pick, WeightedSum
  };

  struct Node {
    Op op;
    std::vector<int> args;
    std::size_t m = 0, n = 0; // matvec dims / pick index
    double c = 0;             // scale factor
    std::vector<double> val;
    std::vector<double> grad;
    const std::string* pname = nullptr;
  };

  Val push(Node n);
  const Node& node(Val v) const;
  void check_finite(const Node& n) const;

  ParamStore* ps_;
  std::vector<Node> nodes_;
  std::map<std::string, Val> param_cache_;
};

} // namespace tfm::num
