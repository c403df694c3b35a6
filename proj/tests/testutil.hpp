#pragma once

#include <functional>
#include <vector>

#include "dfrec/nn.hpp"
#include "dfrec/rng.hpp"

namespace dfrec::testutil {

// Central-difference gradient probe. `build` must construct a fresh graph
// from the current parameter values and return the scalar loss value; the
// autodiff gradient is taken from one backward pass and compared against
// (f(w+h) - f(w-h)) / 2h at randomly chosen parameter coordinates.
struct FdResult {
  double max_rel_err = 0.0;
  int probes = 0;
};

template <typename T>
FdResult fd_check_params(ParamStore<T>& params,
                         const std::function<double(bool /*with_grad*/)>& build_eval,
                         int probes, Rng& rng, double step = 1e-5) {
  // One backward pass to populate gradients.
  params.zero_grads();
  build_eval(true);

  std::vector<ParamTensor<T>*> trainable;
  for (auto& p : params.all())
    if (p->trainable && p->size() > 0) trainable.push_back(p.get());

  FdResult res;
  for (int k = 0; k < probes; ++k) {
    ParamTensor<T>* p = trainable[rng.next_below(trainable.size())];
    const auto i = static_cast<std::size_t>(rng.next_below(static_cast<std::uint64_t>(p->size())));
    const T saved = p->value[i];
    p->value[i] = saved + static_cast<T>(step);
    const double fp = build_eval(false);
    p->value[i] = saved - static_cast<T>(step);
    const double fm = build_eval(false);
    p->value[i] = saved;

    const double fd = (fp - fm) / (2.0 * step);
    const double ad = static_cast<double>(p->grad[i]);
    const double denom = std::max({std::abs(fd), std::abs(ad), 1e-6});
    res.max_rel_err = std::max(res.max_rel_err, std::abs(fd - ad) / denom);
    ++res.probes;
  }
  return res;
}

}  // namespace dfrec::testutil
