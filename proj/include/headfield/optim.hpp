#pragma once

// Adam with per-tensor state. Each tensor keeps its own step count, so codes
// that are only touched by some batches get correct bias correction.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "headfield/tensor.hpp"

namespace headfield {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
class Adam {
 public:
  struct Slot {
    Tensor<T> m;
    Tensor<T> v;
    std::int64_t step = 0;
  };

  Adam() = default;
  explicit Adam(AdamHyper h) : hyper_(h) {}

  const AdamHyper& hyper() const { return hyper_; }

  /// One update of `param` from its accumulated gradient. A zero rate leaves
  /// the parameter bit-identical.
  void update(const std::string& name, Tensor<T>& param, double lr) {
    if (!param.has_grad()) return;
    auto& s = slots_[name];
    if (!s.m.defined()) {
      s.m = Tensor<T>::zeros(param.shape());
      s.v = Tensor<T>::zeros(param.shape());
    }
    ++s.step;
    const double b1 = hyper_.beta1, b2 = hyper_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.step));
    const auto& g = param.grad();
    auto m = s.m.mutable_data();
    auto v = s.v.mutable_data();
    auto p = param.mutable_data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
      const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      if (lr != 0.0) p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * (mi / c1) / (std::sqrt(vi / c2) + hyper_.eps));
    }
  }

  std::map<std::string, Slot>& slots() { return slots_; }
  const std::map<std::string, Slot>& slots() const { return slots_; }

 private:
  AdamHyper hyper_;
  std::map<std::string, Slot> slots_;
};

}  // namespace headfield
