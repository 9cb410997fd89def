#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "lcaunet/params.hpp"

namespace lcaunet {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Adaptive-moment optimizer with decoupled weight decay:
//   p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
// Moments live in parameter precision so checkpoints round-trip bit-exactly;
// per-element math runs in double. Decay is applied uniformly (no exclusion
// list) — zero-init heads start with zero penalty anyway.
template <typename T>
class AdamW {
 public:
  AdamW(ag::ParamSet<T>& params, const AdamWConfig& cfg)
      : params_(&params), cfg_(cfg) {
    LCAUNET_CHECK_CONFIG(cfg.lr > 0 && cfg.eps > 0 && cfg.beta1 >= 0 &&
                             cfg.beta1 < 1 && cfg.beta2 >= 0 && cfg.beta2 < 1 &&
                             cfg.weight_decay >= 0,
                         "AdamW: invalid hyperparameters");
    m_.resize(params.count());
    v_.resize(params.count());
    for (std::size_t i = 0; i < params.count(); ++i) {
      const auto n = static_cast<std::size_t>(params.entries()[i].var.size());
      m_[i].assign(n, T(0));
      v_[i].assign(n, T(0));
    }
  }

  void step() {
    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_->count(); ++i) {
      auto& node = params_->entries()[i].var.node();
      node.ensure_grad();
      T* p = node.value.data.data();
      const T* g = node.grad.data();
      T* m = m_[i].data();
      T* v = v_[i].data();
      const std::size_t n = m_[i].size();
      for (std::size_t j = 0; j < n; ++j) {
        const double gj = static_cast<double>(g[j]);
        const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * gj;
        const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        const double update = (mj / bc1) / (std::sqrt(vj / bc2) + cfg_.eps) +
                              cfg_.weight_decay * static_cast<double>(p[j]);
        p[j] = static_cast<T>(static_cast<double>(p[j]) - cfg_.lr * update);
      }
    }
  }

  void zero_grad() { params_->zero_grad(); }

  double lr() const { return cfg_.lr; }
  void set_lr(double lr) {
    LCAUNET_CHECK_CONFIG(lr > 0, "AdamW: lr must be positive");
    cfg_.lr = lr;
  }

  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }
  std::vector<std::vector<T>>& moment1() { return m_; }
  std::vector<std::vector<T>>& moment2() { return v_; }
  const std::vector<std::vector<T>>& moment1() const { return m_; }
  const std::vector<std::vector<T>>& moment2() const { return v_; }

 private:
  ag::ParamSet<T>* params_;
  AdamWConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

struct PlateauConfig {
  double factor = 0.5;
  std::int64_t patience = 5;
  double min_lr = 0.0;
};

// Max-mode plateau scheduler: tolerates `patience` consecutive epochs without
// improvement of the monitored value; one more triggers lr *= factor.
class ReduceLROnPlateau {
 public:
  explicit ReduceLROnPlateau(const PlateauConfig& cfg = {}) : cfg_(cfg) {
    LCAUNET_CHECK_CONFIG(cfg.factor > 0 && cfg.factor < 1 && cfg.patience >= 0,
                         "plateau scheduler: need 0 < factor < 1 and patience >= 0");
  }

  // Feed the epoch's metric; returns the (possibly reduced) lr.
  double step(double metric, double lr) {
    if (metric > best_) {
      best_ = metric;
      bad_epochs_ = 0;
    } else if (++bad_epochs_ > cfg_.patience) {
      lr = std::max(lr * cfg_.factor, cfg_.min_lr);
      bad_epochs_ = 0;
    }
    return lr;
  }

  double best() const { return best_; }
  std::int64_t bad_epochs() const { return bad_epochs_; }
  void restore(double best, std::int64_t bad) {
    best_ = best;
    bad_epochs_ = bad;
  }

 private:
  PlateauConfig cfg_;
  double best_ = -std::numeric_limits<double>::infinity();
  std::int64_t bad_epochs_ = 0;
};

}  // namespace lcaunet
