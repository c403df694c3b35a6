#pragma once

#include "dfrec/image.hpp"
#include "dfrec/nn.hpp"

namespace dfrec {

// Identity Segmentation Module: a dilated-convolution backbone with a
// segmentation head (per-pixel source-affiliation probability) and a
// classification head (pre-sigmoid forgery score).
struct IsmSpec {
  std::vector<std::int64_t> stage_widths = {16, 32, 64, 128};
  std::vector<std::int64_t> dilations = {1, 2, 4};  // parallel rates, final stage
  bool detach_cls = false;  // block the classifier gradient from the backbone

  void validate() const {
    if (stage_widths.size() < 2) throw ConfigError("ISM needs at least 2 stages");
    bool has_dilated = false;
    for (auto d : dilations) has_dilated = has_dilated || d > 1;
    if (dilations.empty() || !has_dilated)
      throw ConfigError("ISM final stage needs at least one dilation rate > 1");
  }

  std::int64_t total_stride() const { return std::int64_t(1) << stage_widths.size(); }
};

// Value-level output of a single forward pass.
struct SegOutput {
  Tensor<double> m_s;       // [H, W], every entry in [0, 1]
  double fake_logit = 0.0;  // pre-sigmoid forgery score
};

template <typename T>
struct IsmModel {
  IsmSpec spec;
  std::vector<ConvBlock<T>> stages;      // stride-2 stages, minus the last
  std::vector<Conv2dLayer<T>> aspp;      // parallel dilated convs, summed
  InstanceNormLayer<T> aspp_norm;
  Conv2dLayer<T> seg_conv;               // 3x3 over concat(low, upsampled high)
  LinearLayer<T> cls_head;

  static IsmModel create(ParamStore<T>& ps, const IsmSpec& spec, std::uint64_t seed) {
    spec.validate();
    IsmModel m;
    m.spec = spec;
    std::int64_t ci = 3;
    for (std::size_t i = 0; i + 1 < spec.stage_widths.size(); ++i) {
      m.stages.push_back(ConvBlock<T>::create(ps, "ism.stage" + std::to_string(i), ci, spec.stage_widths[i], 2, seed));
      ci = spec.stage_widths[i];
    }
    const std::int64_t co = spec.stage_widths.back();
    for (std::size_t k = 0; k < spec.dilations.size(); ++k)
      m.aspp.push_back(Conv2dLayer<T>::create(ps, "ism.aspp" + std::to_string(k), ci, co, 3, 2,
                                              spec.dilations[k], spec.dilations[k], seed));
    m.aspp_norm = InstanceNormLayer<T>::create(ps, "ism.aspp.in", co);
    m.seg_conv = Conv2dLayer<T>::create(ps, "ism.seg", spec.stage_widths[0] + co, 1, 3, 1, 1, 1, seed);
    m.cls_head = LinearLayer<T>::create(ps, "ism.cls", co, 1, seed);
    return m;
  }

  struct Out {
    Value<T> m_s;    // [1, H, W]
    Value<T> logit;  // [1]
  };

  // Full stride-16 forward; the segmentation head fuses stage-1 (low-level)
  // features with bilinearly upsampled high-level features.
  Out forward(Graph<T>& g, const Value<T>& image) const {
    const Shape& s = image.shape();
    if (s.size() != 3 || s[0] != 3) throw InputError("ISM expects a [3,H,W] image");
    const std::int64_t H = s[1], W = s[2];
    const std::int64_t stride = spec.total_stride();
    if (H % stride != 0 || W % stride != 0)
      throw ConfigError("ISM input size must be divisible by the backbone stride " + std::to_string(stride));

    Value<T> x = image;
    Value<T> low;
    for (std::size_t i = 0; i < stages.size(); ++i) {
      x = stages[i].forward(g, x);
      if (i == 0) low = x;
    }
    Value<T> high;
    for (std::size_t k = 0; k < aspp.size(); ++k) {
      Value<T> branch = aspp[k].forward(g, x);
      high = k == 0 ? branch : add(high, branch);
    }
    high = relu(aspp_norm.forward(g, high));

    Value<T> cls_in = spec.detach_cls ? stop_gradient(high) : high;
    Value<T> logit = reshape(cls_head.forward_vec(g, global_avg_pool(cls_in)), Shape{1});

    Value<T> up = upsample_bilinear(high, H / 2, W / 2);
    Value<T> fused = seg_conv.forward(g, concat0(low, up));
    Value<T> m_half = sigmoid(fused);
    Value<T> m_s = upsample_bilinear(m_half, H, W);
    return {m_s, logit};
  }
};

// I_src^seg = I * m_s, the probability map broadcast over channels.
template <typename T>
Value<T> segment_source(const Value<T>& image, const Value<T>& m_s) {
  return broadcast_mul_channel(image, m_s);
}

}  // namespace dfrec
