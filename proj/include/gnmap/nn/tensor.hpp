#pragma once

#include <algorithm>
#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace gnmap::nn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor of doubles.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  /// 2-D element access.
  double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  bool operator==(const Tensor&) const = default;
};

/// A trainable tensor with a gradient slot of the same size.
struct Param {
  std::string name;
  Tensor value;
  std::vector<double> grad;

  Param(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.size(), 0.0) {}

  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

/// Owns parameters by unique name. Addresses are stable for the lifetime of
/// the set; iteration follows insertion order.
class ParamSet {
 public:
  Param& add(std::string name, Tensor value);
  Param* find(std::string_view name);
  const Param* find(std::string_view name) const;
  Param& at(std::string_view name);
  const Param& at(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  std::vector<Param*> all();
  std::vector<const Param*> all() const;
  /// Parameters whose name starts with any of the prefixes, in insertion order.
  std::vector<Param*> with_prefix(const std::vector<std::string>& prefixes);
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Param>> params_;
};

}  // namespace gnmap::nn
