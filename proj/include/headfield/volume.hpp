#pragma once

// Emission-absorption quadrature along rays:
//   w_i = T_i (1 - exp(-sigma_i delta_i)),  T_i = exp(-sum_{j<i} sigma_j delta_j)
// so that sum_i w_i + T_final telescopes to 1.

#include "headfield/ops.hpp"

namespace headfield {

template <class T>
struct RenderWeights {
  Tensor<T> w;                    // [N,S]
  Tensor<T> transmittance_final;  // [N]
  Tensor<T> alpha;                // [N] = sum_i w_i
};

template <class T>
struct FeatureMap {
  Tensor<T> features;  // [F,h,w]
  Tensor<T> alpha;     // [h,w]
};

template <class T>
RenderWeights<T> compute_weights(const Tensor<T>& sigma, const Tensor<T>& deltas) {
  if (sigma.rank() != 2 || sigma.shape() != deltas.shape()) {
    throw DimensionError("compute_weights: sigma " + shape_string(sigma.shape()) + " and deltas " +
                         shape_string(deltas.shape()) + " must both be [N,S]");
  }
  for (T v : sigma.values())
    if (!(v >= T(0))) throw DomainError("compute_weights: negative or non-finite density");
  for (T v : deltas.values())
    if (!(v >= T(0))) throw DomainError("compute_weights: negative or non-finite segment length");
  const auto optical = mul(sigma, deltas);
  const auto transmittance = exp(neg(exclusive_cumsum_last(optical)));
  const auto absorbed = add_scalar(neg(exp(neg(optical))), T(1));
  auto w = mul(transmittance, absorbed);
  auto t_final = exp(neg(sum_last(optical)));
  auto alpha = sum_last(w);
  return {std::move(w), std::move(t_final), std::move(alpha)};
}

/// I_F(r) = sum_i w_i F_i, laid out as [F, grid_h, grid_w] with rays in row-major order.
template <class T>
FeatureMap<T> render_features(const RenderWeights<T>& weights, const Tensor<T>& feature, int grid_width, int grid_height) {
  const auto n = weights.w.dim(0);
  if (n != static_cast<std::int64_t>(grid_width) * grid_height) {
    throw DimensionError("render_features: " + std::to_string(n) + " rays do not fill a " + std::to_string(grid_width) +
                         "x" + std::to_string(grid_height) + " grid");
  }
  const auto per_ray = weighted_sum(weights.w, feature);  // [N,F]
  const auto f = per_ray.dim(1);
  return {reshape(transpose2d(per_ray), {f, grid_height, grid_width}), reshape(weights.alpha, {grid_height, grid_width})};
}

}  // namespace headfield
