#pragma once

#include <string>

#include "lcaunet/attention.hpp"
#include "lcaunet/conv_ops.hpp"
#include "lcaunet/init.hpp"
#include "lcaunet/params.hpp"

namespace lcaunet::nn {

using ag::ParamSet;
using ag::Var;

enum class WInit { He, Xavier, TruncNormal, Zero };

template <typename T>
Array<T> weight_init(Rng& rng, Shape shape, std::int64_t fan_in, WInit kind) {
  switch (kind) {
    case WInit::He: return init::he_normal<T>(rng, std::move(shape), fan_in);
    case WInit::Xavier: return init::xavier_normal<T>(rng, std::move(shape), fan_in);
    case WInit::TruncNormal: return init::trunc_normal<T>(rng, std::move(shape));
    default: return Array<T>(std::move(shape), T(0));
  }
}

template <typename T>
struct Conv2d {
  Var<T> w, b;
  std::int64_t stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(ParamSet<T>& ps, const std::string& name, Rng& rng, std::int64_t c_in,
         std::int64_t c_out, std::int64_t k, std::int64_t stride_, std::int64_t pad_,
         WInit kind = WInit::He, T bias_value = T(0))
      : stride(stride_), pad(pad_) {
    w = ps.add(name + ".w", weight_init<T>(rng, {c_out, c_in, k, k}, c_in * k * k, kind));
    b = ps.add(name + ".b", Array<T>(Shape{c_out}, bias_value));
  }
  Var<T> operator()(const Var<T>& x) const { return ag::conv2d(x, w, b, stride, pad); }
};

template <typename T>
struct PdcConv {
  Var<T> w, b;
  std::int64_t stride = 1, pad = 0, groups = 1;

  PdcConv() = default;
  PdcConv(ParamSet<T>& ps, const std::string& name, Rng& rng, std::int64_t c_in,
          std::int64_t c_out, std::int64_t k, std::int64_t stride_, std::int64_t pad_,
          std::int64_t groups_)
      : stride(stride_), pad(pad_), groups(groups_) {
    const std::int64_t cig = c_in / groups_;
    w = ps.add(name + ".w", init::he_normal<T>(rng, {c_out, cig, k, k}, cig * k * k));
    b = ps.add(name + ".b", Array<T>(Shape{c_out}, T(0)));
  }
  Var<T> operator()(const Var<T>& x) const {
    return ag::pdc_conv2d(x, w, b, stride, pad, groups);
  }
};

template <typename T>
struct Dense {
  Var<T> w, b;  // b undefined when bias-free

  Dense() = default;
  Dense(ParamSet<T>& ps, const std::string& name, Rng& rng, std::int64_t c_in,
        std::int64_t c_out, bool bias = true, WInit kind = WInit::TruncNormal) {
    w = ps.add(name + ".w", weight_init<T>(rng, {c_in, c_out}, c_in, kind));
    if (bias) b = ps.add(name + ".b", Array<T>(Shape{c_out}, T(0)));
  }
  Var<T> operator()(const Var<T>& x) const { return ag::linear(x, w, b); }
};

template <typename T>
struct LayerNorm {
  Var<T> gamma, beta;

  LayerNorm() = default;
  LayerNorm(ParamSet<T>& ps, const std::string& name, std::int64_t dim) {
    gamma = ps.add(name + ".gamma", Array<T>(Shape{dim}, T(1)));
    beta = ps.add(name + ".beta", Array<T>(Shape{dim}, T(0)));
  }
  Var<T> operator()(const Var<T>& x) const { return ag::layer_norm(x, gamma, beta); }
};

template <typename T>
struct InstanceNorm {
  Var<T> gamma, beta;

  InstanceNorm() = default;
  InstanceNorm(ParamSet<T>& ps, const std::string& name, std::int64_t channels) {
    gamma = ps.add(name + ".gamma", Array<T>(Shape{channels}, T(1)));
    beta = ps.add(name + ".beta", Array<T>(Shape{channels}, T(0)));
  }
  Var<T> operator()(const Var<T>& x) const { return ag::instance_norm(x, gamma, beta); }
};

// Transformer MLP: linear -> GELU -> linear.
template <typename T>
struct Mlp {
  Dense<T> fc1, fc2;

  Mlp() = default;
  Mlp(ParamSet<T>& ps, const std::string& name, Rng& rng, std::int64_t dim,
      std::int64_t hidden)
      : fc1(ps, name + ".fc1", rng, dim, hidden),
        fc2(ps, name + ".fc2", rng, hidden, dim) {}
  Var<T> operator()(const Var<T>& x) const { return fc2(ag::gelu(fc1(x))); }
};

}  // namespace lcaunet::nn
