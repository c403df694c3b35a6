#include "dfrec/renderer.hpp"

#include <cmath>

#include "dfrec/error.hpp"

namespace dfrec {

namespace {

// Feature-vector slots (raw uniforms in [0,1], mapped to ranges below).
enum Slot {
  kSkinR, kSkinG, kSkinB,
  kHairR, kHairG, kHairB,
  kEyeSpacing, kEyeSize,
  kIrisR, kIrisG, kIrisB,
  kMouthWidth, kNoseSize,
  kFaceRx, kFaceRy,
  kHairline,
};

double lerp(double a, double b, double t) { return a + (b - a) * t; }

double smoothstep(double e0, double e1, double x) {
  const double t = std::min(1.0, std::max(0.0, (x - e0) / (e1 - e0)));
  return t * t * (3.0 - 2.0 * t);
}

struct Rgb {
  double r, g, b;
};

void blend_pixel(Rgb& px, const Rgb& layer, double coverage) {
  px.r = lerp(px.r, layer.r, coverage);
  px.g = lerp(px.g, layer.g, coverage);
  px.b = lerp(px.b, layer.b, coverage);
}

// Soft-edged ellipse coverage: 1 well inside, 0 well outside.
double ellipse_cov(double u, double v, double cx, double cy, double rx, double ry, double edge = 0.15) {
  const double du = (u - cx) / rx;
  const double dv = (v - cy) / ry;
  const double q = du * du + dv * dv;
  return 1.0 - smoothstep(1.0 - edge, 1.0 + edge, q);
}

}  // namespace

void AttributeParams::validate() const {
  if (yaw < -1.0 || yaw > 1.0 || roll < -1.0 || roll > 1.0)
    throw InputError("pose attributes out of [-1,1]");
  if (mouth_open < 0.0 || mouth_open > 1.0) throw InputError("mouth_open out of [0,1]");
  if (brow_raise < -1.0 || brow_raise > 1.0) throw InputError("brow_raise out of [-1,1]");
  if (lighting < 0.7 || lighting > 1.3) throw InputError("lighting out of [0.7,1.3]");
}

AttributeParams AttributeParams::sample(Rng& rng) {
  AttributeParams a;
  a.yaw = rng.uniform(-1.0, 1.0);
  a.roll = rng.uniform(-1.0, 1.0);
  a.mouth_open = rng.uniform(0.0, 1.0);
  a.brow_raise = rng.uniform(-1.0, 1.0);
  a.lighting = rng.uniform(0.7, 1.3);
  return a;
}

IdentityParams synth_identity(std::int64_t identity_id, std::uint64_t corpus_seed) {
  if (identity_id < 0) throw InputError("identity_id must be nonnegative");
  IdentityParams id;
  id.identity_id = identity_id;
  Rng rng = Rng::keyed(corpus_seed, {0x1DE57171ULL, static_cast<std::uint64_t>(identity_id)});
  id.feature_vector.resize(IdentityParams::kFeatureDim);
  for (auto& f : id.feature_vector) f = rng.uniform();
  return id;
}

FaceRegion face_region(const IdentityParams& id, const AttributeParams& attrs) {
  const auto& f = id.feature_vector;
  FaceRegion r;
  r.cx = 0.5 + 0.06 * attrs.yaw;
  r.cy = 0.55;
  r.rx = lerp(0.24, 0.32, f[kFaceRx]);
  r.ry = lerp(0.30, 0.38, f[kFaceRy]);
  r.roll = 0.15 * attrs.roll;
  return r;
}

FaceRegion canonical_face_region() { return FaceRegion{}; }

Image render_face(const IdentityParams& identity, const AttributeParams& attrs, std::int64_t size) {
  if (size < 16) throw ConfigError("render size must be at least 16");
  if (static_cast<std::int64_t>(identity.feature_vector.size()) != IdentityParams::kFeatureDim)
    throw InputError("identity feature vector has wrong length");
  attrs.validate();

  const auto& f = identity.feature_vector;
  const Rgb bg{0.82, 0.84, 0.86};
  const Rgb skin{lerp(0.45, 0.95, f[kSkinR]), lerp(0.30, 0.80, f[kSkinG]), lerp(0.22, 0.72, f[kSkinB])};
  const Rgb hair{lerp(0.02, 0.95, f[kHairR]), lerp(0.02, 0.85, f[kHairG]), lerp(0.02, 0.90, f[kHairB])};
  const Rgb iris{lerp(0.05, 0.75, f[kIrisR]), lerp(0.05, 0.70, f[kIrisG]), lerp(0.05, 0.85, f[kIrisB])};
  const Rgb brow{0.15, 0.10, 0.08};
  const Rgb mouth{0.58, 0.16, 0.20};
  const Rgb nose{skin.r * 0.78, skin.g * 0.72, skin.b * 0.70};

  const FaceRegion fr = face_region(identity, attrs);
  const double eye_dx = lerp(0.13, 0.22, f[kEyeSpacing]);
  const double eye_r = lerp(0.030, 0.055, f[kEyeSize]);
  const double mouth_w = lerp(0.09, 0.17, f[kMouthWidth]);
  const double mouth_h = 0.012 + 0.035 * attrs.mouth_open;
  const double nose_r = lerp(0.020, 0.045, f[kNoseSize]);
  const double hairline = lerp(0.18, 0.34, f[kHairline]);
  const double brow_dy = 0.085 + 0.025 * attrs.brow_raise;

  const double cosr = std::cos(fr.roll), sinr = std::sin(fr.roll);

  Image img(size, size, 3);
  for (std::int64_t y = 0; y < size; ++y) {
    for (std::int64_t x = 0; x < size; ++x) {
      const double pu = (x + 0.5) / static_cast<double>(size);
      const double pv = (y + 0.5) / static_cast<double>(size);
      // Rotate into the face frame (inverse roll about the face center).
      const double du = pu - fr.cx, dv = pv - fr.cy;
      const double u = fr.cx + cosr * du + sinr * dv;
      const double v = fr.cy - sinr * du + cosr * dv;

      Rgb px = bg;
      // Hair cap: slightly larger ellipse, visible above the hairline.
      const double hair_cov = ellipse_cov(u, v, fr.cx, fr.cy, fr.rx * 1.16, fr.ry * 1.10) *
                              smoothstep(fr.cy - fr.ry * (1.0 - hairline) + 0.02,
                                         fr.cy - fr.ry * (1.0 - hairline) - 0.02, v);
      blend_pixel(px, hair, hair_cov);
      // Skin covers everything below the hairline.
      const double face_cov = ellipse_cov(u, v, fr.cx, fr.cy, fr.rx, fr.ry) *
                              smoothstep(fr.cy - fr.ry * (1.0 - hairline) - 0.02,
                                         fr.cy - fr.ry * (1.0 - hairline) + 0.02, v);
      blend_pixel(px, skin, face_cov);
      // Eyes, brows, nose, mouth ride on the face.
      for (const double sgn : {-1.0, 1.0}) {
        const double ex = fr.cx + sgn * eye_dx;
        const double ey = fr.cy - 0.08;
        blend_pixel(px, iris, face_cov * ellipse_cov(u, v, ex, ey, eye_r, eye_r * 0.8, 0.4));
        blend_pixel(px, brow, face_cov * ellipse_cov(u, v, ex, ey - brow_dy, eye_r * 1.5, 0.016, 0.5));
      }
      blend_pixel(px, nose, face_cov * ellipse_cov(u, v, fr.cx, fr.cy + 0.05, nose_r, nose_r * 1.4, 0.4));
      blend_pixel(px, mouth, face_cov * ellipse_cov(u, v, fr.cx, fr.cy + 0.17, mouth_w, mouth_h, 0.35));

      img.at(y, x, 0) = std::min(1.0, px.r * attrs.lighting);
      img.at(y, x, 1) = std::min(1.0, px.g * attrs.lighting);
      img.at(y, x, 2) = std::min(1.0, px.b * attrs.lighting);
    }
  }
  return img;
}

}  // namespace dfrec
