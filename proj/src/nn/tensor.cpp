#include "gnmap/nn/tensor.hpp"

#include <numeric>
#include <stdexcept>

namespace gnmap::nn {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shape_size(shape)) {
    throw std::invalid_argument("tensor data does not match shape " + shape_str(shape));
  }
}

Param& ParamSet::add(std::string name, Tensor value) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  params_.push_back(std::make_unique<Param>(std::move(name), std::move(value)));
  return *params_.back();
}

Param* ParamSet::find(std::string_view name) {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

const Param* ParamSet::find(std::string_view name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

Param& ParamSet::at(std::string_view name) {
  Param* p = find(name);
  if (!p) throw std::out_of_range("no parameter named " + std::string(name));
  return *p;
}

const Param& ParamSet::at(std::string_view name) const {
  const Param* p = find(name);
  if (!p) throw std::out_of_range("no parameter named " + std::string(name));
  return *p;
}

std::vector<Param*> ParamSet::all() {
  std::vector<Param*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Param*> ParamSet::all() const {
  std::vector<const Param*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Param*> ParamSet::with_prefix(const std::vector<std::string>& prefixes) {
  std::vector<Param*> out;
  for (auto& p : params_) {
    for (const auto& pre : prefixes) {
      if (p->name.starts_with(pre)) {
        out.push_back(p.get());
        break;
      }
    }
  }
  return out;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

}  // namespace gnmap::nn
