#pragma once

#include "omf/autodiff.hpp"

#include <map>
#include <random>
#include <string>
#include <vector>

namespace omf {

/// Named trainable tensors in registration order.
template <typename Scalar>
class ParameterSet {
 public:
  void add(const std::string& name, Tensor<Scalar> init);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  Tensor<Scalar>& get(const std::string& name);
  const Tensor<Scalar>& get(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  Index scalar_count() const;

  template <typename Other>
  ParameterSet<Other> cast() const {
    ParameterSet<Other> out;
    for (std::size_t i = 0; i < names_.size(); ++i) out.add(names_[i], values_[i].template cast<Other>());
    return out;
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    return a.names_ == b.names_ && a.values_ == b.values_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<Scalar>> values_;
  std::map<std::string, std::size_t> index_;
};

/// Per-forward view of a ParameterSet: leaves are created on first use so
/// untouched parameters never enter the graph.
template <typename Scalar>
class Binding {
 public:
  Binding(Graph<Scalar>& graph, const ParameterSet<Scalar>& params, bool trainable = true)
      : graph_(&graph), params_(&params), trainable_(trainable) {}

  Var<Scalar> operator[](const std::string& name);
  Graph<Scalar>& graph() const { return *graph_; }
  const ParameterSet<Scalar>& parameters() const { return *params_; }

  /// Gradients keyed by parameter name; parameters never bound are absent.
  std::map<std::string, Tensor<Scalar>> gradients(GradientMap<Scalar>& grads) const;

 private:
  Graph<Scalar>* graph_;
  const ParameterSet<Scalar>* params_;
  bool trainable_;
  std::map<std::string, Var<Scalar>> bound_;
};

/// Deterministic initializers.
template <typename Scalar>
Tensor<Scalar> normal_init(Shape shape, double stddev, std::mt19937_64& rng);
template <typename Scalar>
Tensor<Scalar> fan_in_init(Shape shape, Index fan_in, std::mt19937_64& rng);

/// Reads/writes a parameter blob: magic "OMFP", u32 count, then per entry
/// u32 name length, name bytes, u32 rank, u64 dims, f64 values (little-endian).
template <typename Scalar>
void save_parameters(const ParameterSet<Scalar>& params, const std::string& path);
template <typename Scalar>
ParameterSet<Scalar> load_parameters(const std::string& path);

}  // namespace omf
