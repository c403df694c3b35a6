#pragma once

#include <cstdint>
#include <vector>

#include "dfrec/image.hpp"
#include "dfrec/rng.hpp"

namespace dfrec {

// Procedural identity: a fixed-length vector of raw uniforms in [0,1] that
// the renderer maps onto face geometry and colors. Same (id, seed) always
// yields the same vector.
struct IdentityParams {
  std::int64_t identity_id = 0;
  std::vector<double> feature_vector;  // length kIdentityFeatureDim

  static constexpr std::int64_t kFeatureDim = 16;
};

struct AttributeParams {
  double yaw = 0.0;         // [-1, 1], horizontal shift
  double roll = 0.0;        // [-1, 1], in-plane rotation
  double mouth_open = 0.0;  // [0, 1]
  double brow_raise = 0.0;  // [-1, 1]
  double lighting = 1.0;    // [0.7, 1.3], global brightness multiplier

  void validate() const;
  static AttributeParams sample(Rng& rng);
};

// Face placement in unit coordinates, exposed so the blender can reuse the
// renderer's known geometry instead of a landmark detector.
struct FaceRegion {
  double cx = 0.5;
  double cy = 0.55;
  double rx = 0.30;
  double ry = 0.36;
  double roll = 0.0;  // radians
};

IdentityParams synth_identity(std::int64_t identity_id, std::uint64_t corpus_seed);

// Renders a size x size x 3 face in [0,1]. Deterministic in its inputs.
Image render_face(const IdentityParams& identity, const AttributeParams& attrs, std::int64_t size);

// The face-ellipse placement the renderer used for (identity, attrs).
FaceRegion face_region(const IdentityParams& identity, const AttributeParams& attrs);

// Canonical region assumed when the true geometry is unknown.
FaceRegion canonical_face_region();

}  // namespace dfrec
