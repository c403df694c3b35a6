#pragma once

#include "dfrec/nn.hpp"

namespace dfrec {

// Source Identity Recovery Module: U-Net encoder/decoder with attention
// gates on the skip connections. The bottleneck is split evenly along the
// channel axis: the first half stays spatial (f_s) and drives the decoder,
// the second half is pooled into the latent target identity vector f_t,
// which never enters the decode path.
struct SirmSpec {
  std::vector<std::int64_t> widths = {32, 64, 128};  // per level; last = bottleneck
  std::int64_t gate_width = 16;

  void validate() const {
    if (widths.size() < 2) throw ConfigError("SIRM needs at least 2 levels");
    if (widths.back() % 2 != 0) throw ConfigError("SIRM bottleneck width must be even");
    if (gate_width < 1) throw ConfigError("SIRM gate width must be positive");
  }

  std::int64_t bottleneck() const { return widths.back(); }
  std::int64_t ft_dim() const { return widths.back() / 2; }
};

// Additive attention gate: skip * sigmoid(psi(relu(Ws skip + Wg gating))).
template <typename T>
struct AttentionGate {
  Conv2dLayer<T> skip_proj, gate_proj, psi;

  static AttentionGate create(ParamStore<T>& ps, const std::string& name, std::int64_t skip_c,
                              std::int64_t gate_c, std::int64_t inner, std::uint64_t seed) {
    AttentionGate a;
    a.skip_proj = Conv2dLayer<T>::create(ps, name + ".ws", skip_c, inner, 1, 1, 0, 1, seed);
    a.gate_proj = Conv2dLayer<T>::create(ps, name + ".wg", gate_c, inner, 1, 1, 0, 1, seed);
    a.psi = Conv2dLayer<T>::create(ps, name + ".psi", inner, 1, 1, 1, 0, 1, seed);
    return a;
  }

  Value<T> forward(Graph<T>& g, const Value<T>& skip, const Value<T>& gating) const {
    if (skip.shape()[1] != gating.shape()[1] || skip.shape()[2] != gating.shape()[2])
      throw InputError("attention gate: gating must match the skip's spatial size");
    Value<T> a = relu(add(skip_proj.forward(g, skip), gate_proj.forward(g, gating)));
    Value<T> coeff = sigmoid(psi.forward(g, a));  // [1,H,W] in (0,1)
    return broadcast_mul_channel(skip, coeff);
  }
};

template <typename T>
struct SirmModel {
  SirmSpec spec;
  std::vector<ConvBlock<T>> enc;          // enc[0] stride 1, rest stride 2
  std::vector<AttentionGate<T>> gates;    // one per skip level
  std::vector<ConvBlock<T>> dec;          // after upsample+concat per level
  Conv2dLayer<T> out_conv;

  static SirmModel create(ParamStore<T>& ps, const SirmSpec& spec, std::uint64_t seed) {
    spec.validate();
    SirmModel m;
    m.spec = spec;
    const std::size_t levels = spec.widths.size();
    std::int64_t ci = 3;
    for (std::size_t i = 0; i < levels; ++i) {
      m.enc.push_back(ConvBlock<T>::create(ps, "sirm.enc" + std::to_string(i), ci, spec.widths[i],
                                           i == 0 ? 1 : 2, seed));
      ci = spec.widths[i];
    }
    // Decoder widths halve the incoming channel count per level.
    std::int64_t up_c = spec.bottleneck() / 2;  // f_s channels
    for (std::size_t i = levels - 1; i-- > 0;) {
      const std::int64_t skip_c = spec.widths[i];
      m.gates.push_back(AttentionGate<T>::create(ps, "sirm.gate" + std::to_string(i), skip_c, up_c,
                                                 spec.gate_width, seed));
      const std::int64_t dec_c = std::max<std::int64_t>(8, skip_c / 2);
      m.dec.push_back(ConvBlock<T>::create(ps, "sirm.dec" + std::to_string(i), up_c + skip_c, dec_c, 1, seed));
      up_c = dec_c;
    }
    m.out_conv = Conv2dLayer<T>::create(ps, "sirm.out", up_c, 3, 3, 1, 1, 1, seed);
    return m;
  }

  struct Encoded {
    Value<T> f_s;                 // [bottleneck/2, H', W']
    Value<T> f_t;                 // [bottleneck/2], pooled
    std::vector<Value<T>> skips;  // one per non-bottleneck level
  };

  Encoded encode(Graph<T>& g, const Value<T>& seg_image) const {
    const Shape& s = seg_image.shape();
    if (s.size() != 3 || s[0] != 3) throw InputError("SIRM expects a [3,H,W] image");
    const std::int64_t down = std::int64_t(1) << (spec.widths.size() - 1);
    if (s[1] % down != 0 || s[2] % down != 0)
      throw ConfigError("SIRM input size incompatible with downsampling depth");
    Encoded e;
    Value<T> x = seg_image;
    for (std::size_t i = 0; i < enc.size(); ++i) {
      x = enc[i].forward(g, x);
      if (i + 1 < enc.size()) e.skips.push_back(x);
    }
    const std::int64_t half = spec.bottleneck() / 2;
    e.f_s = slice0(x, 0, half);
    e.f_t = global_avg_pool(slice0(x, half, spec.bottleneck()));
    return e;
  }

  // Decodes the source recovery from f_s and the gated skips; f_t is not an
  // input, so no gradient can reach it through this path.
  Value<T> decode(Graph<T>& g, const Value<T>& f_s, const std::vector<Value<T>>& skips) const {
    if (skips.size() != gates.size()) throw InputError("SIRM decode: skip count mismatch");
    Value<T> x = f_s;
    for (std::size_t k = 0; k < gates.size(); ++k) {
      const Value<T>& skip = skips[skips.size() - 1 - k];
      Value<T> up = upsample_nearest2x(x);
      if (up.shape()[1] != skip.shape()[1] || up.shape()[2] != skip.shape()[2])
        throw InputError("SIRM decode: skip spatial size mismatch");
      Value<T> gated = gates[k].forward(g, skip, up);
      x = dec[k].forward(g, concat0(up, gated));
    }
    return sigmoid(out_conv.forward(g, x));
  }
};

}  // namespace dfrec
