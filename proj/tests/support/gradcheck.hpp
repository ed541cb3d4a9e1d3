#pragma once

// Central finite-difference oracle for gradient tests.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "headfield/tensor.hpp"

namespace headfield::testing {

/// Uniform random values in [lo, hi].
inline std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

template <class T>
Tensor<T> make_tensor(const Shape& shape, const std::vector<double>& values, bool requires_grad = true) {
  return Tensor<T>::from(shape, std::vector<T>(values.begin(), values.end()), requires_grad);
}

/// Scalar function of several tensors, evaluable at any precision.
template <class T>
using ScalarFn = std::function<Tensor<T>(const std::vector<Tensor<T>>&)>;

/// || a - b ||_2 / max(||b||_2, floor); 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-12) {
  double diff = 0, ref = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    ref += b[i] * b[i];
  }
  if (diff == 0) return 0;
  return std::sqrt(diff) / std::max(std::sqrt(ref), floor);
}

/// Numerical gradient of f at `point` w.r.t. input `which`, evaluated in 64-bit.
inline std::vector<double> numeric_gradient(const ScalarFn<double>& f, const std::vector<Shape>& shapes,
                                            const std::vector<std::vector<double>>& point, std::size_t which,
                                            double step = 1e-6) {
  NoGradGuard guard;
  auto eval = [&](const std::vector<std::vector<double>>& p) {
    std::vector<Tensor<double>> ins;
    for (std::size_t i = 0; i < p.size(); ++i) ins.push_back(make_tensor<double>(shapes[i], p[i], false));
    return f(ins).item();
  };
  auto p = point;
  std::vector<double> g(point[which].size());
  for (std::size_t k = 0; k < g.size(); ++k) {
    const double orig = p[which][k];
    p[which][k] = orig + step;
    const double up = eval(p);
    p[which][k] = orig - step;
    const double down = eval(p);
    p[which][k] = orig;
    g[k] = (up - down) / (2 * step);
  }
  return g;
}

/// Analytic gradients of f at `point` at precision T, one vector per input.
template <class T>
std::vector<std::vector<double>> analytic_gradients(const ScalarFn<T>& f, const std::vector<Shape>& shapes,
                                                    const std::vector<std::vector<double>>& point) {
  std::vector<Tensor<T>> ins;
  for (std::size_t i = 0; i < point.size(); ++i) ins.push_back(make_tensor<T>(shapes[i], point[i], true));
  f(ins).backward();
  std::vector<std::vector<double>> out;
  for (auto& t : ins) {
    std::vector<double> g(static_cast<std::size_t>(t.numel()), 0.0);
    if (t.has_grad())
      for (std::size_t k = 0; k < g.size(); ++k) g[k] = static_cast<double>(t.grad()[k]);
    out.push_back(std::move(g));
  }
  return out;
}

/// Worst relative error over all inputs between analytic (precision T) and
/// 64-bit central-difference gradients.
template <class T>
double gradient_error(const ScalarFn<T>& f_t, const ScalarFn<double>& f_64, const std::vector<Shape>& shapes,
                      const std::vector<std::vector<double>>& point, double step = 1e-6) {
  const auto analytic = analytic_gradients<T>(f_t, shapes, point);
  double worst = 0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const auto numeric = numeric_gradient(f_64, shapes, point, i, step);
    worst = std::max(worst, relative_error(analytic[i], numeric));
  }
  return worst;
}

}  // namespace headfield::testing
