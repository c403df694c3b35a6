#pragma once

#include <filesystem>

#include "dfrec/corpus.hpp"
#include "dfrec/image.hpp"
#include "dfrec/nn.hpp"

namespace dfrec {

// Desk-scale embedding provider: stands in for the pretrained identity,
// perceptual and attribute networks. The identity tower is a small convnet
// trained on (real image -> identity) from the corpus train split; the
// perceptual pyramid is a fixed random convnet; the attribute tower is a
// regressor onto the renderer's attribute vector. After building, every
// parameter is frozen: pipeline training backpropagates through these
// networks into the recovered images but never updates them.
template <typename T>
class DeskProvider {
 public:
  static constexpr std::int64_t kEmbedDim = 64;
  static constexpr std::int64_t kAttrDim = 5;
  static constexpr std::int64_t kIdentityTaps = 4;
  static constexpr std::int64_t kPerceptualTaps = 5;

  ParamStore<T> params;
  std::vector<ConvBlock<T>> id_stages;    // 4 tap stages
  LinearLayer<T> id_proj;                 // signed penultimate projection
  ParamTensor<T>* cls_weight = nullptr;   // [n_identities, embed], cosine head
  std::vector<ConvBlock<T>> perc_stages;  // 5 tap stages, never trained
  std::vector<ConvBlock<T>> attr_stages;
  LinearLayer<T> attr_head;
  std::int64_t n_identities = 0;
  std::int64_t image_size = 0;
  std::uint64_t seed = 0;
  std::uint64_t corpus_fingerprint = 0;

  static DeskProvider create(std::int64_t n_identities, std::int64_t image_size, std::uint64_t seed) {
    DeskProvider p;
    p.n_identities = n_identities;
    p.image_size = image_size;
    p.seed = seed;
    const std::int64_t id_w[4] = {12, 24, 40, kEmbedDim};
    std::int64_t ci = 3;
    for (int i = 0; i < 4; ++i) {
      p.id_stages.push_back(ConvBlock<T>::create(p.params, "prov.id" + std::to_string(i), ci, id_w[i], 2, seed));
      ci = id_w[i];
    }
    p.id_head = LinearLayer<T>::create(p.params, "prov.idhead", kEmbedDim, n_identities, seed);
    const std::int64_t pw[5] = {8, 12, 16, 24, 32};
    const std::int64_t pstride[5] = {1, 2, 2, 2, 2};
    ci = 3;
    for (int i = 0; i < 5; ++i) {
      // Plain conv + relu: a fixed random feature pyramid.
      p.perc_stages.push_back(ConvBlock<T>::create(p.params, "prov.perc" + std::to_string(i), ci, pw[i],
                                                   pstride[i], seed ^ 0x9e37, /*use_norm=*/false));
      ci = pw[i];
    }
    const std::int64_t aw[3] = {10, 20, 32};
    ci = 3;
    for (int i = 0; i < 3; ++i) {
      p.attr_stages.push_back(ConvBlock<T>::create(p.params, "prov.attr" + std::to_string(i), ci, aw[i], 2, seed));
      ci = aw[i];
    }
    p.attr_head = LinearLayer<T>::create(p.params, "prov.attrhead", 32, kAttrDim, seed);
    return p;
  }

  // E_id^1..4: the four stage outputs.
  std::vector<Value<T>> identity_taps(Graph<T>& g, const Value<T>& image) const {
    std::vector<Value<T>> taps;
    Value<T> x = image;
    for (const auto& stage : id_stages) {
      x = stage.forward(g, x);
      taps.push_back(x);
    }
    return taps;
  }

  // Penultimate pooled identity features (pre-normalization).
  Value<T> embedding_value(Graph<T>& g, const Value<T>& image) const {
    Value<T> x = image;
    for (const auto& stage : id_stages) x = stage.forward(g, x);
    return global_avg_pool(x);
  }

  // psi_1..5: the perceptual pyramid taps.
  std::vector<Value<T>> perceptual_taps(Graph<T>& g, const Value<T>& image) const {
    std::vector<Value<T>> taps;
    Value<T> x = image;
    for (const auto& stage : perc_stages) {
      x = stage.forward(g, x);
      taps.push_back(x);
    }
    return taps;
  }

  Value<T> attributes(Graph<T>& g, const Value<T>& image) const {
    Value<T> x = image;
    for (const auto& stage : attr_stages) x = stage.forward(g, x);
    return attr_head.forward_vec(g, global_avg_pool(x));
  }

  // L2-normalized identity embedding of an image (metrics side).
  std::vector<double> embed(const Image& img) const {
    Graph<T> g;
    Value<T> x = g.constant(image_to_chw<T>(img));
    Value<T> e = embedding_value(const_cast<Graph<T>&>(g), x);
    std::vector<double> v(e.val().begin(), e.val().end());
    double norm = 0.0;
    for (double d : v) norm += d * d;
    norm = std::sqrt(norm);
    if (norm <= 0.0) throw NumericError("identity embedding has zero norm");
    for (double& d : v) d /= norm;
    return v;
  }

  std::vector<double> attributes_of(const Image& img) const {
    Graph<T> g;
    Value<T> a = attributes(const_cast<Graph<T>&>(g), g.constant(image_to_chw<T>(img)));
    return {a.val().begin(), a.val().end()};
  }

  void freeze() { params.set_trainable(false); }
  std::uint64_t weight_hash() const { return params.value_hash(); }
};

// Normalized regression target for the attribute tower: pose, expression and
// a centered lighting coordinate, all roughly in [-1, 1].
inline std::vector<double> attribute_target(const AttributeParams& attrs) {
  return {attrs.yaw, attrs.roll, attrs.mouth_open, attrs.brow_raise, (attrs.lighting - 1.0) / 0.3};
}

// Trains the identity and attribute towers on the corpus train split, then
// freezes everything.
template <typename T>
DeskProvider<T> build_desk_provider(const CorpusManifest& corpus, std::uint64_t seed);

template <typename T>
void save_provider(const std::filesystem::path& dir, const DeskProvider<T>& provider);

template <typename T>
DeskProvider<T> load_provider(const std::filesystem::path& dir);

}  // namespace dfrec
