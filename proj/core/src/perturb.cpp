#include "dfrec/perturb.hpp"

#include <cmath>

#include "dfrec/blend.hpp"
#include "dfrec/error.hpp"

namespace dfrec {

PerturbKind parse_perturb_kind(const std::string& name) {
  if (name == "blur") return PerturbKind::Blur;
  if (name == "jpeg") return PerturbKind::Jpeg;
  if (name == "noise") return PerturbKind::Noise;
  throw InputError("unknown perturbation kind: " + name);
}

Image perturb(const Image& img, PerturbKind kind, Rng& rng) {
  switch (kind) {
    case PerturbKind::Blur: {
      const std::int64_t k = 3 + 2 * static_cast<std::int64_t>(rng.next_below(3));  // {3,5,7}
      const double sigma = 0.3 * ((static_cast<double>(k) - 1.0) * 0.5 - 1.0) + 0.8;
      return gaussian_blur(img, sigma, (k - 1) / 2);
    }
    case PerturbKind::Jpeg: {
      const int quality = rng.uniform_int(50, 99);
      return decode_jpeg(encode_jpeg(img, quality));
    }
    case PerturbKind::Noise: {
      const double variance = rng.uniform(10.0, 50.0);  // 0-255 scale
      const double sigma = std::sqrt(variance) / 255.0;
      Image out = img;
      for (auto& v : out.data) v = std::min(1.0, std::max(0.0, v + rng.normal(0.0, sigma)));
      return out;
    }
  }
  throw InputError("unknown perturbation kind");
}

}  // namespace dfrec
