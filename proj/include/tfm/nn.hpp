#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tfm/params.hpp"
#include "tfm/tape.hpp"

namespace tfm::num {

// Layer helpers templated on the engine. Parameter names follow the
// conventions of init_affine / init_mlp2 / init_gru / init_time_encoding;
// output sizes are inferred from the stored bias shapes.

template <class E>
Val affine(E& e, const std::string& prefix, Val x) {
  Val w = e.param(prefix + ".w");
  Val b = e.param(prefix + ".b");
  std::size_t in = e.value(x).size();
  std::size_t out = e.value(b).size();
  return e.add(e.matvec(w, x, out, in), b);
}

template <class E>
Val mlp2(E& e, const std::string& prefix, Val x) {
  return affine(e, prefix + ".l2", e.relu(affine(e, prefix + ".l1", x)));
}

// Standard GRU cell; gate weights act on [x || h].
template <class E>
Val gru_cell(E& e, const std::string& prefix, Val x, Val h) {
  Val xh = e.concat({x, h});
  Val z = e.sigmoid(affine(e, prefix + ".z", xh));
  Val r = e.sigmoid(affine(e, prefix + ".r", xh));
  Val cand = e.tanh_(affine(e, prefix + ".h", e.concat({x, e.mul(r, h)})));
  Val one = e.constant(1.0, e.value(h).size());
  return e.add(e.mul(e.sub(one, z), h), e.mul(z, cand));
}

// phi(dt) = cos(w*dt + b) / sqrt(d)
template <class E>
Val time_encode(E& e, const std::string& prefix, double dt) {
  Val w = e.param(prefix + ".w");
  Val b = e.param(prefix + ".b");
  std::size_t d = e.value(w).size();
  return e.scale(e.cos_(e.add(e.scale(w, dt), b)),
                 1.0 / std::sqrt(static_cast<double>(d)));
}

struct GradCheckResult {
  double max_rel_err = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
  std::size_t checked = 0;
};

// Central-difference check of d(loss)/d(theta) for every coordinate of every
// parameter. `loss` must rebuild its computation from the current ParamStore
// values on each call and run backward() only when asked. Relative error is
// |g_a - g_n| / max(|g_a|, |g_n|, 1e-8).
GradCheckResult grad_check(ParamStore& ps,
                           const std::function<double(bool)>& loss,
                           double h = 1e-5);

} // namespace tfm::num
