#pragma once

#include <string>

#include "dfrec/image.hpp"
#include "dfrec/rng.hpp"

namespace dfrec {

enum class PerturbKind { Blur, Jpeg, Noise };

PerturbKind parse_perturb_kind(const std::string& name);  // "blur" | "jpeg" | "noise"

// Robustness perturbations with the paper's parameter ranges:
//   blur  - Gaussian kernel, size drawn from {3, 5, 7}
//   jpeg  - encode/decode round trip, quality uniform in [50, 99]
//   noise - additive Gaussian, variance uniform in [10, 50] on the 0-255
//           scale, clamped back to [0, 1]
Image perturb(const Image& img, PerturbKind kind, Rng& rng);

}  // namespace dfrec
