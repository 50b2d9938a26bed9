#include "omf/parameters.hpp"

#include "omf/binary_io.hpp"

#include <cmath>
#include <fstream>

namespace omf {

template <typename Scalar>
void ParameterSet<Scalar>::add(const std::string& name, Tensor<Scalar> init) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
  index_[name] = names_.size();
  names_.push_back(name);
  values_.push_back(std::move(init));
}

template <typename Scalar>
Tensor<Scalar>& ParameterSet<Scalar>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return values_[it->second];
}

template <typename Scalar>
const Tensor<Scalar>& ParameterSet<Scalar>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return values_[it->second];
}

template <typename Scalar>
Index ParameterSet<Scalar>::scalar_count() const {
  Index n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

template <typename Scalar>
Var<Scalar> Binding<Scalar>::operator[](const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Var<Scalar> leaf = graph_->leaf(params_->get(name), trainable_);
  bound_.emplace(name, leaf);
  return leaf;
}

template <typename Scalar>
std::map<std::string, Tensor<Scalar>> Binding<Scalar>::gradients(GradientMap<Scalar>& grads) const {
  std::map<std::string, Tensor<Scalar>> out;
  for (const auto& [name, var] : bound_) {
    auto it = grads.find(var.id());
    if (it != grads.end()) out.emplace(name, std::move(it->second));
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> normal_init(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<Scalar> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(dist(rng));
  return t;
}

template <typename Scalar>
Tensor<Scalar> fan_in_init(Shape shape, Index fan_in, std::mt19937_64& rng) {
  return normal_init<Scalar>(std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

template <typename Scalar>
void save_parameters(const ParameterSet<Scalar>& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  le::write_magic(out, "OMFP");
  le::write<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& name : params.names()) {
    const auto& t = params.get(name);
    le::write<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    le::write<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) le::write<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    for (Index i = 0; i < t.size(); ++i) le::write<double>(out, static_cast<double>(t[i]));
  }
  if (!out) throw IoError("failed writing " + path);
}

template <typename Scalar>
ParameterSet<Scalar> load_parameters(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  le::expect_magic(in, "OMFP", path);
  ParameterSet<Scalar> params;
  const auto count = le::read<std::uint32_t>(in);
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name(le::read<std::uint32_t>(in), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    Shape shape(le::read<std::uint32_t>(in));
    for (auto& d : shape) d = static_cast<Index>(le::read<std::uint64_t>(in));
    Tensor<Scalar> t(shape);
    for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(le::read<double>(in));
    params.add(name, std::move(t));
  }
  return params;
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template class Binding<float>;
template class Binding<double>;
template Tensor<float> normal_init<float>(Shape, double, std::mt19937_64&);
template Tensor<double> normal_init<double>(Shape, double, std::mt19937_64&);
template Tensor<float> fan_in_init<float>(Shape, Index, std::mt19937_64&);
template Tensor<double> fan_in_init<double>(Shape, Index, std::mt19937_64&);
template void save_parameters<float>(const ParameterSet<float>&, const std::string&);
template void save_parameters<double>(const ParameterSet<double>&, const std::string&);
template ParameterSet<float> load_parameters<float>(const std::string&);
template ParameterSet<double> load_parameters<double>(const std::string&);

}  // namespace omf
