#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

namespace tfm::num {

enum class Precision { f64, f32 };

const char* to_string(Precision p);
Precision parse_precision(const std::string& s);

// Dense row-major buffer. Arithmetic always runs in double; the precision tag
// only controls how checkpoints store the data.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  Precision precision = Precision::f64;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s)
      : shape(std::move(s)),
        data(std::accumulate(shape.begin(), shape.end(), std::size_t(1),
                             std::multiplies<>()),
             0.0) {}

  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  double& at(std::size_t i) { return data[i]; }
  double& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }
};

} // namespace tfm::num
