#pragma once

#include <cmath>
#include <random>

#include "lcaunet/common.hpp"
#include "lcaunet/tensor.hpp"

namespace lcaunet::init {

// Normal(0, std) truncated to +-2 std by rejection.
template <typename T>
Array<T> trunc_normal(Rng& rng, Shape shape, double stddev = 0.02) {
  Array<T> a(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : a.data) {
    double x = dist(rng);
    while (std::abs(x) > 2.0 * stddev) x = dist(rng);
    v = static_cast<T>(x);
  }
  return a;
}

// He/Kaiming normal for ReLU-family convolutions: std = sqrt(2 / fan_in).
template <typename T>
Array<T> he_normal(Rng& rng, Shape shape, std::int64_t fan_in) {
  LCAUNET_CHECK_CONFIG(fan_in > 0, "he_normal: fan_in must be positive");
  Array<T> a(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : a.data) v = static_cast<T>(dist(rng));
  return a;
}

// Variance-preserving normal for purely linear maps (no nonlinearity after):
// std = sqrt(1 / fan_in).
template <typename T>
Array<T> xavier_normal(Rng& rng, Shape shape, std::int64_t fan_in) {
  LCAUNET_CHECK_CONFIG(fan_in > 0, "xavier_normal: fan_in must be positive");
  Array<T> a(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / static_cast<double>(fan_in)));
  for (auto& v : a.data) v = static_cast<T>(dist(rng));
  return a;
}

template <typename T>
Array<T> constant(Shape shape, T value) {
  return Array<T>(std::move(shape), value);
}

}  // namespace lcaunet::init
