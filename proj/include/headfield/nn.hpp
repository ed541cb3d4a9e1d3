#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "headfield/ops.hpp"

namespace headfield {

template <class T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

/// Fully connected layer: weight [out, in], bias [out].
template <class T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  Linear() = default;

  /// Uniform fan-in initialisation scaled for leaky-ReLU networks; zero bias.
  Linear(std::int64_t in, std::int64_t out, std::mt19937_64& rng, double gain = 1.0) {
    const double bound = gain * std::sqrt(6.0 / ((1.0 + 0.04) * static_cast<double>(in)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> w(static_cast<std::size_t>(in * out));
    for (auto& v : w) v = static_cast<T>(dist(rng));
    weight = Tensor<T>::from({out, in}, std::move(w), true);
    bias = Tensor<T>::zeros({out}, true);
  }

  std::int64_t in_features() const { return weight.dim(1); }
  std::int64_t out_features() const { return weight.dim(0); }

  /// Rows of x [N, in] -> [N, out].
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
  /// Per-pixel form on [C, H, W].
  Tensor<T> conv(const Tensor<T>& x) const { return conv1x1(x, weight, bias); }

  void collect(const std::string& prefix, NamedTensors<T>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

/// Copies values of `src` into the same-named tensors of `dst`.
template <class T>
void assign_parameters(const NamedTensors<T>& dst, const std::vector<std::pair<std::string, Tensor<T>>>& src) {
  if (dst.size() != src.size()) throw ConfigurationError("parameter count mismatch while loading");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].first != src[i].first || dst[i].second.shape() != src[i].second.shape()) {
      throw ConfigurationError("parameter '" + src[i].first + "' does not match model layout ('" + dst[i].first + "' " +
                               shape_string(dst[i].second.shape()) + ")");
    }
    auto d = const_cast<Tensor<T>&>(dst[i].second).mutable_data();
    const auto& s = src[i].second.values();
    std::copy(s.begin(), s.end(), d.begin());
  }
}

/// FNV-1a over the raw bytes of every tensor, in order.
template <class T>
std::uint64_t checksum(const NamedTensors<T>& tensors) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, t] : tensors) {
    mix(name.data(), name.size());
    mix(t.values().data(), t.values().size() * sizeof(T));
  }
  return h;
}

}  // namespace headfield
