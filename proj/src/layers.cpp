#include "omf/layers.hpp"

#include <cmath>
#include <numbers>

namespace omf {

template <typename Scalar>
void add_linear(ParameterSet<Scalar>& ps, const std::string& prefix, Index in, Index out, std::mt19937_64& rng) {
  ps.add(prefix + ".w", fan_in_init<Scalar>({in, out}, in, rng));
  ps.add(prefix + ".b", Tensor<Scalar>::zeros({out}));
}

template <typename Scalar>
void add_attention(ParameterSet<Scalar>& ps, const std::string& prefix, Index query_dim, Index key_dim, Index dim,
                   std::mt19937_64& rng) {
  add_linear(ps, prefix + ".q", query_dim, dim, rng);
  add_linear(ps, prefix + ".k", key_dim, dim, rng);
  add_linear(ps, prefix + ".v", key_dim, dim, rng);
  add_linear(ps, prefix + ".o", dim, dim, rng);
}

template <typename Scalar>
void add_layer_norm(ParameterSet<Scalar>& ps, const std::string& prefix, Index dim) {
  ps.add(prefix + ".gamma", Tensor<Scalar>::constant({dim}, 1));
  ps.add(prefix + ".beta", Tensor<Scalar>::zeros({dim}));
}

template <typename Scalar>
void add_conv(ParameterSet<Scalar>& ps, const std::string& prefix, Index in, Index out, Index kernel,
              std::mt19937_64& rng) {
  ps.add(prefix + ".w", normal_init<Scalar>({out, in, kernel, kernel}, std::sqrt(2.0 / static_cast<double>(in * kernel * kernel)), rng));
  ps.add(prefix + ".b", Tensor<Scalar>::zeros({out}));
}

template <typename Scalar>
Tensor<Scalar> sinusoidal_encoding(Index length, Index dim, Index first) {
  Tensor<Scalar> pe({length, dim});
  for (Index t = 0; t < length; ++t)
    for (Index i = 0; i < dim; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dim));
      const auto pos = static_cast<double>(first + t);
      pe.at({t, i}) = static_cast<Scalar>(std::sin(pos * freq));
      if (i + 1 < dim) pe.at({t, i + 1}) = static_cast<Scalar>(std::cos(pos * freq));
    }
  return pe;
}

template <typename Scalar>
Tensor<Scalar> grid_encoding(Index height, Index width, Index dim) {
  Tensor<Scalar> pe({height * width, dim});
  const Index half = dim / 2;
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) {
      const double py = (static_cast<double>(y) + 0.5) / static_cast<double>(height);
      const double px = (static_cast<double>(x) + 0.5) / static_cast<double>(width);
      for (Index i = 0; i + 1 < half; i += 2) {
        const double freq = std::numbers::pi * static_cast<double>(i / 2 + 1);
        pe.at({y * width + x, i}) = static_cast<Scalar>(std::sin(freq * py));
        pe.at({y * width + x, i + 1}) = static_cast<Scalar>(std::cos(freq * py));
        pe.at({y * width + x, half + i}) = static_cast<Scalar>(std::sin(freq * px));
        pe.at({y * width + x, half + i + 1}) = static_cast<Scalar>(std::cos(freq * px));
      }
    }
  return pe;
}

#define OMF_INSTANTIATE_LAYERS(S)                                                                          \
  template void add_linear<S>(ParameterSet<S>&, const std::string&, Index, Index, std::mt19937_64&);       \
  template void add_attention<S>(ParameterSet<S>&, const std::string&, Index, Index, Index, std::mt19937_64&); \
  template void add_layer_norm<S>(ParameterSet<S>&, const std::string&, Index);                            \
  template void add_conv<S>(ParameterSet<S>&, const std::string&, Index, Index, Index, std::mt19937_64&);  \
  template Tensor<S> sinusoidal_encoding<S>(Index, Index, Index);                                               \
  template Tensor<S> grid_encoding<S>(Index, Index, Index);

OMF_INSTANTIATE_LAYERS(float)
OMF_INSTANTIATE_LAYERS(double)

}  // namespace omf
