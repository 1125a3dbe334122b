#include "tfm/tape.hpp"

#include <cmath>

#include "tfm/errors.hpp"
#include "tfm/kernels.hpp"

namespace tfm::num {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw numeric_error(msg);
}

} // namespace

const Tape::Node& Tape::node(Val v) const {
  require(v.id >= 0 && static_cast<std::size_t>(v.id) < nodes_.size(),
          "tape: bad value handle");
  return nodes_[static_cast<std::size_t>(v.id)];
}

void Tape::check_finite(const Node& n) const {
  for (double x : n.val) {
    if (!std::isfinite(x)) throw numeric_error("tape: non-finite value produced");
  }
}

Val Tape::push(Node n) {
  check_finite(n);
  nodes_.push_back(std::move(n));
  return Val{static_cast<int>(nodes_.size()) - 1};
}

Val Tape::input(std::vector<double> v) {
  Node n;
  n.op = Op::Input;
  n.val = std::move(v);
  return push(std::move(n));
}

Val Tape::constant(double c, std::size_t len) {
  Node n;
  n.op = Op::Const;
  n.val.assign(len, c);
  return push(std::move(n));
}

Val Tape::param(const std::string& name) {
  auto it = param_cache_.find(name);
  if (it != param_cache_.end()) return it->second;
  auto& e = ps_->entry(name);
  Node n;
  n.op = Op::Param;
  n.val = e.value.data;
  n.pname = &ps_->entries().find(name)->first;
  Val v = push(std::move(n));
  param_cache_.emplace(name, v);
  return v;
}

Val Tape::add(Val a, Val b) {
  const auto& na = node(a);
  const auto& nb = node(b);
  require(na.val.size() == nb.val.size(), "add: size mismatch");
  Node n;
  n.op = Op::Add;
  n.args = {a.id, b.id};
  n.val = kern::add(na.val, nb.val);
  return push(std::move(n));
}

Val Tape::sub(Val a, Val b) {
  const auto& na = node(a);
  const auto& nb = node(b);
  require(na.val.size() == nb.val.size(), "sub: size mismatch");
  Node n;
  n.op = Op::Sub;
  n.args = {a.id, b.id};
  n.val = kern::sub(na.val, nb.val);
  return push(std::move(n));
}

Val Tape::mul(Val a, Val b) {
  const auto& na = node(a);
  const auto& nb = node(b);
  require(na.val.size() == nb.val.size(), "mul: size mismatch");
  Node n;
  n.op = Op::Mul;
  n.args = {a.id, b.id};
  n.val = kern::mul(na.val, nb.val);
  return push(std::move(n));
}

Val Tape::scale(Val a, double c) {
  Node n;
  n.op = Op::Scale;
  n.args = {a.id};
  n.c = c;
  n.val = kern::scale(node(a).val, c);
  return push(std::move(n));
}

Val Tape::matvec(Val w, Val x, std::size_t m, std::size_t nn) {
  const auto& nw = node(w);
  const auto& nx = node(x);
  require(nw.val.size() == m * nn, "matvec: weight size mismatch");
  require(nx.val.size() == nn, "matvec: vector size mismatch");
  Node n;
  n.op = Op::MatVec;
  n.args = {w.id, x.id};
  n.m = m;
  n.n = nn;
  n.val = kern::matvec(nw.val, nx.val, m, nn);
  return push(std::move(n));
}

Val Tape::concat(const std::vector<Val>& parts) {
  require(!parts.empty(), "concat: empty");
  Node n;
  n.op = Op::Concat;
  for (Val p : parts) {
    n.args.push_back(p.id);
    const auto& np = node(p);
    n.val.insert(n.val.end(), np.val.begin(), np.val.end());
  }
  return push(std::move(n));
}

Val Tape::relu(Val a) {
  Node n;
  n.op = Op::Relu;
  n.args = {a.id};
  n.val = kern::relu(node(a).val);
  return push(std::move(n));
}

Val Tape::tanh_(Val a) {
  Node n;
  n.op = Op::Tanh;
  n.args = {a.id};
  n.val = kern::tanh(node(a).val);
  return push(std::move(n));
}

Val Tape::sigmoid(Val a) {
  Node n;
  n.op = Op::Sigmoid;
  n.args = {a.id};
  n.val = kern::sigmoid(node(a).val);
  return push(std::move(n));
}

Val Tape::cos_(Val a) {
  Node n;
  n.op = Op::Cos;
  n.args = {a.id};
  n.val = kern::cos(node(a).val);
  return push(std::move(n));
}

Val Tape::sum(Val a) {
  Node n;
  n.op = Op::Sum;
  n.args = {a.id};
  n.val = {kern::sum(node(a).val)};
  return push(std::move(n));
}

Val Tape::mean(Val a) {
  require(!node(a).val.empty(), "mean: empty");
  Node n;
  n.op = Op::Mean;
  n.args = {a.id};
  n.val = {kern::mean(node(a).val)};
  return push(std::move(n));
}

Val Tape::dot(Val a, Val b) {
  const auto& na = node(a);
  const auto& nb = node(b);
  require(na.val.size() == nb.val.size(), "dot: size mismatch");
  Node n;
  n.op = Op::Dot;
  n.args = {a.id, b.id};
  n.val = {kern::dot(na.val, nb.val)};
  return push(std::move(n));
}

Val Tape::stack(const std::vector<Val>& scalars) {
  require(!scalars.empty(), "stack: empty");
  Node n;
  n.op = Op::Stack;
  n.val.reserve(scalars.size());
  for (Val s : scalars) {
    const auto& ns = node(s);
    require(ns.val.size() == 1, "stack: non-scalar element");
    n.args.push_back(s.id);
    n.val.push_back(ns.val[0]);
  }
  return push(std::move(n));
}

Val Tape::softmax(Val logits) {
  require(!node(logits).val.empty(), "softmax: empty");
  Node n;
  n.op = Op::Softmax;
  n.args = {logits.id};
  n.val = kern::softmax(node(logits).val);
  return push(std::move(n));
}

Val Tape::log_softmax(Val logits) {
  require(!node(logits).val.empty(), "log_softmax: empty");
  Node n;
  n.op = Op::LogSoftmax;
  n.args = {logits.id};
  n.val = kern::log_softmax(node(logits).val);
  return push(std::move(n));
}

Val Tape::pick(Val a, std::size_t idx) {
  const auto& na = node(a);
  require(idx < na.val.size(), "pick: index out of range");
  Node n;
  n.op = Op::Pick;
  n.args = {a.id};
  n.n = idx;
  n.val = {na.val[idx]};
  return push(std::move(n));
}

Val Tape::weighted_sum(Val coeffs, const std::vector<Val>& vecs) {
  const auto& nc = node(coeffs);
  require(nc.val.size() == vecs.size(), "weighted_sum: coeff count mismatch");
  require(!vecs.empty(), "weighted_sum: empty");
  std::size_t d = node(vecs[0]).val.size();
  std::vector<const std::vector<double>*> ptrs;
  ptrs.reserve(vecs.size());
  Node n;
  n.op = Op::WeightedSum;
  n.args.push_back(coeffs.id);
  for (Val v : vecs) {
    const auto& nv = node(v);
    require(nv.val.size() == d, "weighted_sum: vector size mismatch");
    n.args.push_back(v.id);
    ptrs.push_back(&nv.val);
  }
  n.val = kern::weighted_sum(nc.val, ptrs);
  return push(std::move(n));
}

const std::vector<double>& Tape::value(Val v) const { return node(v).val; }

double Tape::scalar(Val v) const {
  const auto& n = node(v);
  require(n.val.size() == 1, "scalar: non-scalar value");
  return n.val[0];
}

void Tape::backward(Val root) {
  const auto& r = node(root);
  require(r.val.size() == 1, "backward: root must be scalar");
  for (auto& n : nodes_) n.grad.assign(n.val.size(), 0.0);
  nodes_[static_cast<std::size_t>(root.id)].grad[0] = 1.0;

  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    bool any = false;
    for (double g : n.grad) {
      if (g != 0.0) { any = true; break; }
    }
    if (!any) continue;
    switch (n.op) {
      case Op::Input:
      case Op::Const:
        break;
      case Op::Param: {
        auto& e = ps_->entry(*n.pname);
        for (std::size_t k = 0; k < n.grad.size(); ++k) e.grad[k] += n.grad[k];
        break;
      }
      case Op::Add: {
        Node& a = nodes_[static_cast<std::size_t>(n.args[0])];
        Node& b = nodes_[static_cast<std::size_t>(n.args[1])];
        for (std::size_t k = 0; k < n.grad.size(); ++k) {
          a.grad[k] += n.grad[k];
          b.grad[k] += n.grad[k];
        }
        break;
      }
      case Op::Sub: {
        Node& a = nodes_[static_cast<std::size_t>(n.args[0])];
        Node& b = nodes_[static_cast<std::size_t>(n.args[1])];
        for (std::size_t k = 0; k < n.grad.size(); ++k) {
          a.grad[k] += n.grad[k];
          b.grad[k] -= n.grad[k];
        }
        break;
      }
      case Op::Mul: {
        Node& a = nodes_[static_cast<std::size_t>(n.args[0])];
        Node& b = nodes_[static_cast<std::size_t>(n.args[1])];
        for (std::size_t k = 0; k < n.grad.size(); ++k) {
          a.grad[k] += n.grad[k] * b.val[k];
          b.grad[k] += n.grad[k] * a.val[k];
        }
        break;
      }
      case Op::Scale: {
        Node& a = nodes_[static_cast<std::size_t>(n.args[0])];
        for (std::size_t k = 0; k < n.grad.size(); ++k) a.grad[k] += n.c * n.grad[k];
        break;
      }
      case Op::MatVec: {
        Node& w = nodes_[static_cast<std::size_t>(n.args[0])];
        Node& x = nodes_[static_cast<std::size_t>(n.args[1])];
        for (std::size_t row = 0; row < n.m; ++row) {
          double g = n.grad[row];
          if (g == 0.0) continue;
          double* wg = w.grad.data() + row * n.n;
          const double* wv = w.val.data() + row * n.n;
          for (std::size_t j = 0; j < n.n; ++j) {
            wg[j] += g * x.val[j];
            x.grad[j] += g * wv[j];
          }
        }
        break;
      }
      case Op::Concat: {
        std::size_t off = 0;
        for (int aid : n.args) {
          Node& a = nodes_[static_cast<std::size_t>(aid)];
          for (std::size_t k = 0; k < a.val.size(); ++k) a.grad[k] += n.grad[off + k];
          off += a.val.size();
        }
        break;
      }
      case Op::Relu: {
        Node& a = nodes_[static_cast<std::size_t>(n.args[0])];
        for (std::size_t k = 0; k < n.grad.size(); ++k)
          if (a.val[k] > 0) a.grad[k] += n.grad[k];
        break;
      }
      case Op::Tanh: {
        Node& a = nodes_[static_cast<std::size_t>(n.args[0])];
        for (std::size_t k = 0; k < n.grad.size(); ++k)
          a.grad[k] += n.grad[k] * (1.0 - n.val[k] * n.val[k]);
        break;
      }
      case Op::Sigmoid: {
        Node& a = nodes_[static_cast<std::size_t>(n.args[0])];
        for (std::size_t k = 0; k < n.grad.size(); ++k)
          a.grad[k] += n.grad[k] * n.val[k] * (1.0 - n.val[k]);
        break;
      }
      case Op::Cos: {
        Node& a = nodes_[static_cast<std::size_t>(n.args[0])];
        for (std::size_t k = 0; k < n.grad.size(); ++k)
          a.grad[k] -= n.grad[k] * std::sin(a.val[k]);
        break;
      }
      case Op::Sum: {
        Node& a = nodes_[static_cast<std::size_t>(n.args[0])];
        for (double& g : a.grad) g += n.grad[0];
        break;
      }
      case Op::Mean: {
        Node& a = nodes_[static_cast<std::size_t>(n.args[0])];
        double g = n.grad[0] / static_cast<double>(a.val.size());
        for (double& ag : a.grad) ag += g;
        break;
      }
      case Op::Dot: {
        Node& a = nodes_[static_cast<std::size_t>(n.args[0])];
        Node& b = nodes_[static_cast<std::size_t>(n.args[1])];
        for (std::size_t k = 0; k < a.val.size(); ++k) {
          a.grad[k] += n.grad[0] * b.val[k];
          b.grad[k] += n.grad[0] * a.val[k];
        }
        break;
      }
      case Op::Stack: {
        for (std::size_t k = 0; k < n.args.size(); ++k)
          nodes_[static_cast<std::size_t>(n.args[k])].grad[0] += n.grad[k];
        break;
      }
      case Op::Softmax: {
        // dL/dx_j = p_j * (g_j - sum_k g_k p_k)
        Node& a = nodes_[static_cast<std::size_t>(n.args[0])];
        double gp = 0;
        for (std::size_t k = 0; k < n.val.size(); ++k) gp += n.grad[k] * n.val[k];
        for (std::size_t k = 0; k < n.val.size(); ++k)
          a.grad[k] += n.val[k] * (n.grad[k] - gp);
        break;
      }
      case Op::LogSoftmax: {
        // dL/dx_j = g_j - softmax(x)_j * sum_k g_k
        Node& a = nodes_[static_cast<std::size_t>(n.args[0])];
        double gs = 0;
        for (double g : n.grad) gs += g;
        for (std::size_t k = 0; k < n.val.size(); ++k)
          a.grad[k] += n.grad[k] - std::exp(n.val[k]) * gs;
        break;
      }
      case Op::Pick: {
        Node& a = nodes_[static_cast<std::size_t>(n.args[0])];
        a.grad[n.n] += n.grad[0];
        break;
      }
      case Op::WeightedSum: {
        Node& c = nodes_[static_cast<std::size_t>(n.args[0])];
        std::size_t d = n.val.size();
        for (std::size_t k = 1; k < n.args.size(); ++k) {
          Node& v = nodes_[static_cast<std::size_t>(n.args[k])];
          double ck = c.val[k - 1];
          double cg = 0;
          for (std::size_t i = 0; i < d; ++i) {
            v.grad[i] += n.grad[i] * ck;
            cg += n.grad[i] * v.val[i];
          }
          c.grad[k - 1] += cg;
        }
        break;
      }
    }
  }
}

} // namespace tfm::num
