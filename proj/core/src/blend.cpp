#include "dfrec/blend.hpp"

#include <cmath>

#include "dfrec/error.hpp"

namespace dfrec {

Image alpha_blend(const Image& source, const Image& target, const Image& mask) {
  if (!source.same_geometry(target)) throw InputError("alpha_blend: source/target size mismatch");
  if (mask.height != source.height || mask.width != source.width || mask.channels != 1)
    throw InputError("alpha_blend: mask must be H x W x 1 matching the images");
  Image out(source.height, source.width, source.channels);
  for (std::int64_t y = 0; y < out.height; ++y)
    for (std::int64_t x = 0; x < out.width; ++x) {
      const double m = mask.at(y, x, 0);
      for (std::int64_t c = 0; c < out.channels; ++c)
        out.at(y, x, c) = m * source.at(y, x, c) + (1.0 - m) * target.at(y, x, c);
    }
  return out;
}

Image gaussian_blur(const Image& img, double sigma, std::int64_t radius) {
  if (sigma <= 0.0 || radius < 1) return img;
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double norm = 0.0;
  for (std::int64_t i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    norm += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (auto& k : kernel) k /= norm;

  const auto clampi = [](std::int64_t v, std::int64_t lo, std::int64_t hi) {
    return std::min(hi, std::max(lo, v));
  };
  Image tmp(img.height, img.width, img.channels);
  for (std::int64_t y = 0; y < img.height; ++y)
    for (std::int64_t x = 0; x < img.width; ++x)
      for (std::int64_t c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (std::int64_t i = -radius; i <= radius; ++i)
          acc += kernel[static_cast<std::size_t>(i + radius)] * img.at(y, clampi(x + i, 0, img.width - 1), c);
        tmp.at(y, x, c) = acc;
      }
  Image out(img.height, img.width, img.channels);
  for (std::int64_t y = 0; y < img.height; ++y)
    for (std::int64_t x = 0; x < img.width; ++x)
      for (std::int64_t c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (std::int64_t i = -radius; i <= radius; ++i)
          acc += kernel[static_cast<std::size_t>(i + radius)] * tmp.at(clampi(y + i, 0, img.height - 1), x, c);
        out.at(y, x, c) = acc;
      }
  return out;
}

Image make_blend_mask(std::int64_t size, const FaceRegion& region, Rng& rng, const BlendOptions& opts) {
  // Low-frequency radial deformation of the ellipse boundary.
  double amp[3] = {0.0, 0.0, 0.0};
  double phase[3] = {0.0, 0.0, 0.0};
  if (opts.deform) {
    for (int k = 0; k < 3; ++k) {
      amp[k] = rng.uniform(-0.12, 0.12) / (k + 1);
      phase[k] = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    }
  }
  const double cosr = std::cos(region.roll), sinr = std::sin(region.roll);
  Image mask(size, size, 1);
  for (std::int64_t y = 0; y < size; ++y)
    for (std::int64_t x = 0; x < size; ++x) {
      const double pu = (x + 0.5) / static_cast<double>(size);
      const double pv = (y + 0.5) / static_cast<double>(size);
      const double du0 = pu - region.cx, dv0 = pv - region.cy;
      const double du = (cosr * du0 + sinr * dv0) / region.rx;
      const double dv = (-sinr * du0 + cosr * dv0) / region.ry;
      const double rho = std::sqrt(du * du + dv * dv);
      const double theta = std::atan2(dv, du);
      double boundary = 1.0;
      for (int k = 0; k < 3; ++k) boundary += amp[k] * std::cos((k + 1) * theta + phase[k]);
      mask.at(y, x, 0) = rho < boundary ? 1.0 : 0.0;
    }
  if (opts.feather) {
    const double sigma = 0.05 * static_cast<double>(size);
    mask = gaussian_blur(mask, sigma, static_cast<std::int64_t>(std::ceil(2.5 * sigma)));
    for (auto& v : mask.data) v = std::min(1.0, std::max(0.0, v));
  }
  return mask;
}

Image transfer_color(const Image& source, const Image& target, const Image& mask) {
  if (!source.same_geometry(target)) throw InputError("transfer_color: size mismatch");
  double n = 0.0;
  double mu_s[3] = {0, 0, 0}, mu_t[3] = {0, 0, 0};
  for (std::int64_t y = 0; y < source.height; ++y)
    for (std::int64_t x = 0; x < source.width; ++x) {
      if (mask.at(y, x, 0) <= 0.5) continue;
      n += 1.0;
      for (std::int64_t c = 0; c < 3; ++c) {
        mu_s[c] += source.at(y, x, c);
        mu_t[c] += target.at(y, x, c);
      }
    }
  if (n < 2.0) return source;  // degenerate support: nothing to match
  double var_s[3] = {0, 0, 0}, var_t[3] = {0, 0, 0};
  for (std::int64_t c = 0; c < 3; ++c) {
    mu_s[c] /= n;
    mu_t[c] /= n;
  }
  for (std::int64_t y = 0; y < source.height; ++y)
    for (std::int64_t x = 0; x < source.width; ++x) {
      if (mask.at(y, x, 0) <= 0.5) continue;
      for (std::int64_t c = 0; c < 3; ++c) {
        var_s[c] += (source.at(y, x, c) - mu_s[c]) * (source.at(y, x, c) - mu_s[c]);
        var_t[c] += (target.at(y, x, c) - mu_t[c]) * (target.at(y, x, c) - mu_t[c]);
      }
    }
  double scale[3];
  for (std::int64_t c = 0; c < 3; ++c) {
    const double sd_s = std::sqrt(var_s[c] / (n - 1.0));
    const double sd_t = std::sqrt(var_t[c] / (n - 1.0));
    scale[c] = sd_t / std::max(sd_s, 1e-4);
  }
  Image out = source;
  for (std::int64_t y = 0; y < source.height; ++y)
    for (std::int64_t x = 0; x < source.width; ++x)
      for (std::int64_t c = 0; c < 3; ++c) {
        const double v = (source.at(y, x, c) - mu_s[c]) * scale[c] + mu_t[c];
        out.at(y, x, c) = std::min(1.0, std::max(0.0, v));
      }
  return out;
}

BlendResult blend_swap(const Image& source, const Image& target, Rng& rng,
                       const FaceRegion& region, const BlendOptions& opts) {
  if (!source.same_geometry(target)) throw InputError("blend_swap: source/target size mismatch");
  BlendResult res;
  Image mask = make_blend_mask(source.height, region, rng, opts);
  // Quantizing first makes the stored mask exactly the blending mask, so the
  // forgery equals the target wherever the stored mask is zero.
  res.gt_mask = quantized(mask);
  const Image adjusted = opts.color_transfer ? transfer_color(source, target, res.gt_mask) : source;
  res.forgery = alpha_blend(adjusted, target, res.gt_mask);
  return res;
}

}  // namespace dfrec
