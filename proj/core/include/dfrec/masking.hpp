#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dfrec/rng.hpp"
#include "dfrec/tensor.hpp"

namespace dfrec {

// Output of semantic-guided masking: masked/kept patch index lists in
// descending-weight order, plus the geometry they were computed under.
struct MaskSelection {
  std::vector<std::int64_t> masked;  // highest-weight floor(n*lambda) patches
  std::vector<std::int64_t> kept;    // the remainder
  std::int64_t n = 0;
  std::int64_t rho = 0;
  double lambda = 0.0;

  std::string to_json() const;  // keys: masked, kept, n, rho, lambda
};

// Selects patches to mask from a segmentation map:
//   mu    = mean(m_s); omega_i = mean of patch i
//   if mu >= 0.9, omega <- nu wholesale
//   any omega_i < 0.5 is replaced by nu_i
//   sort descending (ties by ascending index); mask the top floor(n*lambda).
// m_s is an [H, W] map; nu must have one jitter entry in [0, 0.1] per patch.
MaskSelection semantic_guided_mask(const Tensor<double>& m_s, std::int64_t rho, double lambda,
                                   const std::vector<double>& nu);

// Per-patch jitter vector for a grid of n patches.
std::vector<double> mask_noise(Rng& rng, std::int64_t n);

}  // namespace dfrec
