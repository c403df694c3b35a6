#include "dfrec/masking.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

#include "dfrec/error.hpp"

namespace dfrec {

std::string MaskSelection::to_json() const {
  nlohmann::json j{{"masked", masked}, {"kept", kept}, {"n", n}, {"rho", rho}, {"lambda", lambda}};
  return j.dump();
}

std::vector<double> mask_noise(Rng& rng, std::int64_t n) {
  std::vector<double> nu(static_cast<std::size_t>(n));
  for (auto& v : nu) v = rng.uniform(0.0, 0.1);
  return nu;
}

MaskSelection semantic_guided_mask(const Tensor<double>& m_s, std::int64_t rho, double lambda,
                                   const std::vector<double>& nu) {
  if (m_s.shape.size() != 2) throw InputError("semantic_guided_mask expects an [H,W] map");
  const std::int64_t H = m_s.shape[0], W = m_s.shape[1];
  if (rho <= 0 || H % rho != 0 || W % rho != 0)
    throw InputError("segmentation map size not divisible by patch size");
  if (lambda <= 0.0 || lambda >= 1.0) throw InputError("mask ratio must lie in (0,1)");
  const std::int64_t rows = H / rho, cols = W / rho, n = rows * cols;
  if (static_cast<std::int64_t>(nu.size()) != n)
    throw InputError("jitter vector length " + std::to_string(nu.size()) + " != patch count " + std::to_string(n));
  for (double v : nu)
    if (v < 0.0 || v > 0.1) throw InputError("jitter entries must lie in [0, 0.1]");

  double mu = 0.0;
  for (double v : m_s.data) mu += v;
  mu /= static_cast<double>(H * W);

  std::vector<double> omega(static_cast<std::size_t>(n));
  for (std::int64_t pr = 0; pr < rows; ++pr)
    for (std::int64_t pc = 0; pc < cols; ++pc) {
      double acc = 0.0;
      for (std::int64_t y = 0; y < rho; ++y)
        for (std::int64_t x = 0; x < rho; ++x) acc += m_s.data[static_cast<std::size_t>((pr * rho + y) * W + pc * rho + x)];
      omega[static_cast<std::size_t>(pr * cols + pc)] = acc / static_cast<double>(rho * rho);
    }

  // Saturated maps fall back to purely random masking.
  if (mu >= 0.9) omega = nu;
  for (std::int64_t i = 0; i < n; ++i)
    if (omega[static_cast<std::size_t>(i)] < 0.5) omega[static_cast<std::size_t>(i)] = nu[static_cast<std::size_t>(i)];

  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    return omega[static_cast<std::size_t>(a)] > omega[static_cast<std::size_t>(b)];
  });

  const auto m = static_cast<std::int64_t>(std::floor(static_cast<double>(n) * lambda));
  MaskSelection sel;
  sel.n = n;
  sel.rho = rho;
  sel.lambda = lambda;
  sel.masked.assign(order.begin(), order.begin() + m);
  sel.kept.assign(order.begin() + m, order.end());
  return sel;
}

}  // namespace dfrec
