#pragma once

#include "dfrec/ism.hpp"
#include "dfrec/losses.hpp"
#include "dfrec/sirm.hpp"
#include "dfrec/tirm.hpp"

namespace dfrec {

struct ModelSpec {
  IsmSpec ism;
  SirmSpec sirm;
  MaeSpec mae;

  void validate() const {
    ism.validate();
    sirm.validate();
    mae.validate();
    if (mae.ft_dim != sirm.ft_dim())
      throw ConfigError("TIRM identity-fusion width must equal the SIRM f_t dimension");
    if (mae.image_size % ism.total_stride() != 0)
      throw ConfigError("image size must be divisible by the ISM backbone stride");
    const std::int64_t sirm_down = std::int64_t(1) << (sirm.widths.size() - 1);
    if (mae.image_size % sirm_down != 0)
      throw ConfigError("image size incompatible with the SIRM depth");
  }
};

// ISM + SIRM + TIRM over one shared parameter store; parameter names carry
// module prefixes so checkpoints can store one weights file per module.
template <typename T>
struct Pipeline {
  ModelSpec spec;
  ParamStore<T> params;
  IsmModel<T> ism;
  SirmModel<T> sirm;
  TirmModel<T> tirm;

  static Pipeline create(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Pipeline p;
    p.spec = spec;
    p.ism = IsmModel<T>::create(p.params, spec.ism, seed);
    p.sirm = SirmModel<T>::create(p.params, spec.sirm, seed);
    p.tirm = TirmModel<T>::create(p.params, spec.mae, seed);
    return p;
  }

  struct ForwardOut {
    typename IsmModel<T>::Out ism_out;
    Value<T> seg;
    typename SirmModel<T>::Encoded enc;
    Value<T> src_rec;
    typename TirmModel<T>::Recovery rec;
  };

  // Full pipeline flow on one image: segmentation, source recovery, masked
  // target recovery.
  ForwardOut forward(Graph<T>& g, const Value<T>& image, double lambda, const std::vector<double>& nu) const {
    ForwardOut o;
    o.ism_out = ism.forward(g, image);
    o.seg = segment_source(image, o.ism_out.m_s);
    o.enc = sirm.encode(g, o.seg);
    o.src_rec = sirm.decode(g, o.enc.f_s, o.enc.skips);
    // Patch selection is inherently non-differentiable; it consumes the
    // segmentation values only. Gradients still reach the ISM through
    // segment_source.
    const std::int64_t H = image.shape()[1], W = image.shape()[2];
    Tensor<double> m_s_map({H, W});
    auto mv = o.ism_out.m_s.val();
    for (std::int64_t i = 0; i < H * W; ++i) m_s_map.data[static_cast<std::size_t>(i)] = static_cast<double>(mv[i]);
    o.rec = tirm.recover_target(g, image, m_s_map, o.enc.f_t, lambda, nu);
    return o;
  }
};

// One sample's losses; for real samples the caller passes the input itself
// as both source and target ground truth.
template <typename T>
struct SampleLoss {
  LossReport report;
  Value<T> total;
  MaskSelection selection;
};

template <typename T>
SampleLoss<T> forward_losses(const Pipeline<T>& pipeline, Graph<T>& g, const DeskProvider<T>& provider,
                             const Tensor<T>& input_chw, const Tensor<T>& src_chw, const Tensor<T>& tgt_chw,
                             bool is_fake, const LossWeights& weights, double lambda,
                             const std::vector<double>& nu, bool ism_warmup = false) {
  SampleLoss<T> out;
  Value<T> x = g.constant(input_chw);

  if (ism_warmup) {
    auto ism_out = pipeline.ism.forward(g, x);
    Value<T> aux = bce_with_logits(ism_out.logit, is_fake ? T(1) : T(0));
    out.report.aux = static_cast<double>(aux.scalar());
    out.total = scale(aux, T(weights.aux_cls));
    out.report.total = static_cast<double>(out.total.scalar());
    return out;
  }

  auto fwd = pipeline.forward(g, x, lambda, nu);
  out.selection = fwd.rec.selection;

  Value<T> src = g.constant(src_chw);
  Value<T> tgt = g.constant(tgt_chw);

  auto id = identity_loss(g, provider, src, fwd.src_rec, tgt, fwd.rec.image, T(weights.alpha));
  auto perc = perceptual_loss(g, provider, src, fwd.src_rec, tgt, fwd.rec.image, T(weights.beta));
  Value<T> attr = attribute_loss(provider.attributes(g, tgt), provider.attributes(g, fwd.rec.image));

  Value<T> patch;
  if (fwd.rec.selection.masked.empty()) {
    patch = g.scalar_const(T(0));
  } else {
    // x^tm: the target's tokens at the masked positions (constants).
    Value<T> tgt_tokens = patchify_op(tgt, pipeline.spec.mae.patch);
    Value<T> x_tm = gather_rows(tgt_tokens, fwd.rec.selection.masked);
    patch = patch_loss(x_tm, fwd.rec.predicted);
  }

  Value<T> aux = bce_with_logits(fwd.ism_out.logit, is_fake ? T(1) : T(0));
  out.total = total_loss(id.combined, perc.combined, attr, patch, aux, weights);

  out.report.srcid = static_cast<double>(id.src.scalar());
  out.report.tgtid = static_cast<double>(id.tgt.scalar());
  out.report.id = static_cast<double>(id.combined.scalar());
  out.report.srcperc = static_cast<double>(perc.src.scalar());
  out.report.tgtperc = static_cast<double>(perc.tgt.scalar());
  out.report.perc = static_cast<double>(perc.combined.scalar());
  out.report.attr = static_cast<double>(attr.scalar());
  out.report.patch = static_cast<double>(patch.scalar());
  out.report.aux = static_cast<double>(aux.scalar());
  out.report.total = static_cast<double>(out.total.scalar());
  return out;
}

// Inference on one image: all intermediates, deterministic given nu_seed.
struct RecoveryOutput {
  Image src_rec;
  Image tgt_rec;
  Image m_s;  // H x W x 1
  double fake_logit = 0.0;
  MaskSelection selection;
};

template <typename T>
RecoveryOutput recover(const Pipeline<T>& pipeline, const Image& input, double lambda, std::uint64_t nu_seed) {
  if (input.height != pipeline.spec.mae.image_size || input.width != pipeline.spec.mae.image_size ||
      input.channels != 3)
    throw InputError("recover: input image does not match the model's configured size");
  Graph<T> g;
  Value<T> x = g.constant(image_to_chw<T>(input));
  Rng rng = Rng::keyed(nu_seed, {0x7ec0fe5ULL});
  const std::vector<double> nu = mask_noise(rng, pipeline.spec.mae.tokens());
  auto fwd = pipeline.forward(g, x, lambda, nu);

  RecoveryOutput out;
  out.src_rec = chw_to_image(to_tensor(fwd.src_rec));
  out.tgt_rec = chw_to_image(to_tensor(fwd.rec.image));
  Tensor<T> m = to_tensor(fwd.ism_out.m_s);
  out.m_s = Image(m.shape[1], m.shape[2], 1);
  for (std::size_t i = 0; i < out.m_s.data.size(); ++i) out.m_s.data[i] = static_cast<double>(m.data[i]);
  out.fake_logit = static_cast<double>(fwd.ism_out.logit.scalar());
  out.selection = fwd.rec.selection;
  return out;
}

}  // namespace dfrec
