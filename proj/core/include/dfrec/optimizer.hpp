#pragma once

#include <cmath>

#include "dfrec/nn.hpp"

namespace dfrec {

// AdamW: adaptive moments with decoupled weight decay. Norms and bias decay
// too; at these scales the simplicity outweighs the usual exemption.
struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global gradient-norm clip; <= 0 disables
};

template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }

  // One update over every trainable parameter; grads must already be
  // populated and are left untouched (caller zeroes them).
  void step(ParamStore<T>& params) {
    double scale = 1.0;
    if (cfg_.clip_norm > 0.0) {
      double sq = 0.0;
      for (const auto& p : params.all()) {
        if (!p->trainable) continue;
        for (T gv : p->grad) sq += static_cast<double>(gv) * static_cast<double>(gv);
      }
      const double norm = std::sqrt(sq);
      if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& p : params.all()) {
      if (!p->trainable) continue;
      if (p->adam_m.empty()) {
        p->adam_m.assign(p->value.size(), T(0));
        p->adam_v.assign(p->value.size(), T(0));
      }
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        const double g = static_cast<double>(p->grad[i]) * scale;
        const double m = cfg_.beta1 * static_cast<double>(p->adam_m[i]) + (1.0 - cfg_.beta1) * g;
        const double v = cfg_.beta2 * static_cast<double>(p->adam_v[i]) + (1.0 - cfg_.beta2) * g * g;
        p->adam_m[i] = static_cast<T>(m);
        p->adam_v[i] = static_cast<T>(v);
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        const double upd = mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * static_cast<double>(p->value[i]);
        p->value[i] = static_cast<T>(static_cast<double>(p->value[i]) - cfg_.lr * upd);
      }
    }
  }

 private:
  AdamWConfig cfg_;
  std::int64_t t_ = 0;
};

}  // namespace dfrec
