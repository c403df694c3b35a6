#pragma once

#include "dfrec/image.hpp"
#include "dfrec/renderer.hpp"
#include "dfrec/rng.hpp"

namespace dfrec {

struct BlendOptions {
  bool deform = true;          // random elastic boundary deformation
  bool feather = true;         // Gaussian feathering, sigma = 5% of image side
  bool color_transfer = true;  // per-channel mean/std transfer inside the mask
};

// forgery = mask * source + (1 - mask) * target, exact at mask 0 and 1.
Image alpha_blend(const Image& source, const Image& target, const Image& mask);

// Soft face mask over `region`, randomly deformed and feathered.
Image make_blend_mask(std::int64_t size, const FaceRegion& region, Rng& rng, const BlendOptions& opts);

// Matches the source's per-channel mean/std inside the mask support to the
// target's, the BI-style color correction step.
Image transfer_color(const Image& source, const Image& target, const Image& mask);

// Full BI-style swap: mask from the target's face area, color-corrected
// source, alpha blend. The returned gt_mask is quantized to the 8-bit grid so
// the on-disk mask is exactly the one used for blending.
struct BlendResult {
  Image forgery;
  Image gt_mask;  // H x W x 1
};
BlendResult blend_swap(const Image& source, const Image& target, Rng& rng,
                       const FaceRegion& region = canonical_face_region(),
                       const BlendOptions& opts = {});

// Unit-sum separable Gaussian blur with replicate borders (constant images
// are fixed points). Shared by mask feathering and the blur perturbation.
Image gaussian_blur(const Image& img, double sigma, std::int64_t radius);

}  // namespace dfrec
