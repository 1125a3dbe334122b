#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

// Forward arithmetic shared by the tape and the value-only engine. Keeping a
// single definition per op guarantees both engines produce bit-identical
// forward results.

namespace tfm::num::kern {

using Vec = std::vector<double>;

inline Vec add(const Vec& a, const Vec& b) {
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

inline Vec sub(const Vec& a, const Vec& b) {
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

inline Vec mul(const Vec& a, const Vec& b) {
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

inline Vec scale(const Vec& a, double c) {
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = c * a[i];
  return out;
}

inline Vec matvec(const Vec& w, const Vec& x, std::size_t m, std::size_t n) {
  Vec out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0;
    const double* row = w.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) acc += row[j] * x[j];
    out[i] = acc;
  }
  return out;
}

inline Vec relu(const Vec& a) {
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > 0 ? a[i] : 0.0;
  return out;
}

inline Vec tanh(const Vec& a) {
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::tanh(a[i]);
  return out;
}

inline Vec sigmoid(const Vec& a) {
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a[i]));
  return out;
}

inline Vec cos(const Vec& a) {
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::cos(a[i]);
  return out;
}

inline double sum(const Vec& a) {
  double acc = 0;
  for (double x : a) acc += x;
  return acc;
}

inline double mean(const Vec& a) { return sum(a) / static_cast<double>(a.size()); }

inline double dot(const Vec& a, const Vec& b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline Vec softmax(const Vec& x) {
  Vec out(x.size());
  double mx = *std::max_element(x.begin(), x.end());
  double z = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    z += out[i];
  }
  for (double& p : out) p /= z;
  return out;
}

inline Vec log_softmax(const Vec& x) {
  double mx = *std::max_element(x.begin(), x.end());
  double z = 0;
  for (double v : x) z += std::exp(v - mx);
  double lz = mx + std::log(z);
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lz;
  return out;
}

inline Vec weighted_sum(const Vec& coeffs, const std::vector<const Vec*>& vecs) {
  Vec out(vecs.empty() ? 0 : vecs[0]->size(), 0.0);
  for (std::size_t k = 0; k < vecs.size(); ++k) {
    const Vec& v = *vecs[k];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += coeffs[k] * v[i];
  }
  return out;
}

} // namespace tfm::num::kern
