#pragma once

#include <json.hpp>

#include "dfrec/provider.hpp"

namespace dfrec {

struct LossWeights {
  double alpha = 2.0;    // target identity term
  double beta = 2.0;     // target perceptual term
  double lambda1 = 0.5;  // perceptual
  double lambda2 = 0.5;  // attribute
  double lambda3 = 0.5;  // patch recovery
  double aux_cls = 0.1;  // auxiliary forgery-classification extension

  void validate() const {
    if (alpha < 0 || beta < 0 || lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || aux_cls < 0)
      throw ConfigError("loss weights must be nonnegative");
  }
};

// Per-term scalars of one forward pass.
struct LossReport {
  double srcid = 0, tgtid = 0, id = 0;
  double srcperc = 0, tgtperc = 0, perc = 0;
  double attr = 0, patch = 0, aux = 0, total = 0;

  // total must equal the weighted combination of its parts.
  bool consistent(const LossWeights& w, double rel_tol = 1e-6) const {
    const double expect = id + w.lambda1 * perc + w.lambda2 * attr + w.lambda3 * patch + w.aux_cls * aux;
    return std::abs(total - expect) <= rel_tol * std::max(1.0, std::abs(expect));
  }

  nlohmann::json to_json() const {
    return {{"L_srcid", srcid}, {"L_tgtid", tgtid}, {"L_id", id},
            {"L_srcperc", srcperc}, {"L_tgtperc", tgtperc}, {"L_perc", perc},
            {"L_attr", attr}, {"L_patch", patch}, {"aux_cls", aux}, {"L_total", total}};
  }

  LossReport& operator+=(const LossReport& o) {
    srcid += o.srcid; tgtid += o.tgtid; id += o.id;
    srcperc += o.srcperc; tgtperc += o.tgtperc; perc += o.perc;
    attr += o.attr; patch += o.patch; aux += o.aux; total += o.total;
    return *this;
  }
  LossReport& operator/=(double d) {
    srcid /= d; tgtid /= d; id /= d;
    srcperc /= d; tgtperc /= d; perc /= d;
    attr /= d; patch /= d; aux /= d; total /= d;
    return *this;
  }
};

// Sum over taps of the L2 norm of the flattened tap difference.
template <typename T>
Value<T> tap_distance(const std::vector<Value<T>>& a, const std::vector<Value<T>>& b) {
  if (a.size() != b.size()) throw InputError("tap_distance: tap count mismatch");
  Value<T> acc;
  for (std::size_t i = 0; i < a.size(); ++i) {
    Value<T> term = l2_norm(sub(a[i], b[i]));
    acc = i == 0 ? term : add(acc, term);
  }
  return acc;
}

// L_srcid, L_tgtid and L_id = L_srcid + alpha * L_tgtid over the provider's
// four identity taps.
template <typename T>
struct IdentityLossOut {
  Value<T> src, tgt, combined;
};

template <typename T>
IdentityLossOut<T> identity_loss(Graph<T>& g, const DeskProvider<T>& provider, const Value<T>& src,
                                 const Value<T>& src_rec, const Value<T>& tgt, const Value<T>& tgt_rec,
                                 T alpha) {
  IdentityLossOut<T> out;
  out.src = tap_distance(provider.identity_taps(g, src), provider.identity_taps(g, src_rec));
  out.tgt = tap_distance(provider.identity_taps(g, tgt), provider.identity_taps(g, tgt_rec));
  out.combined = add(out.src, scale(out.tgt, alpha));
  return out;
}

// Same shape over the five perceptual taps; L_perc = L_srcperc + beta * L_tgtperc.
template <typename T>
IdentityLossOut<T> perceptual_loss(Graph<T>& g, const DeskProvider<T>& provider, const Value<T>& src,
                                   const Value<T>& src_rec, const Value<T>& tgt, const Value<T>& tgt_rec,
                                   T beta) {
  IdentityLossOut<T> out;
  out.src = tap_distance(provider.perceptual_taps(g, src), provider.perceptual_taps(g, src_rec));
  out.tgt = tap_distance(provider.perceptual_taps(g, tgt), provider.perceptual_taps(g, tgt_rec));
  out.combined = add(out.src, scale(out.tgt, beta));
  return out;
}

// Smooth-L1 between attribute vectors, mean over dimensions.
template <typename T>
Value<T> attribute_loss(const Value<T>& a_tgt, const Value<T>& a_rec) {
  if (a_tgt.shape() != a_rec.shape()) throw InputError("attribute_loss: vector length mismatch");
  return smooth_l1_mean(a_tgt, a_rec);
}

// Mean over masked patches of the per-patch L2 distance (Eq. 9 with a mean
// reduction so magnitudes are grid-size free).
template <typename T>
Value<T> patch_loss(const Value<T>& x_tm, const Value<T>& x_recm) {
  if (x_tm.shape() != x_recm.shape()) throw InputError("patch_loss: token matrix shape mismatch");
  const std::int64_t n = x_tm.shape()[0];
  Graph<T>* g = x_tm.graph();
  if (n == 0) return g->scalar_const(T(0));
  Value<T> diff = sub(x_tm, x_recm);
  Value<T> acc;
  for (std::int64_t i = 0; i < n; ++i) {
    Value<T> term = l2_norm(slice0(diff, i, i + 1));
    acc = i == 0 ? term : add(acc, term);
  }
  return scale(acc, T(1) / T(n));
}

// The overall loss: L = L_id + l1 L_perc + l2 L_attr + l3 L_patch, plus the
// documented auxiliary-classifier extension.
template <typename T>
Value<T> total_loss(const Value<T>& id, const Value<T>& perc, const Value<T>& attr, const Value<T>& patch,
                    const Value<T>& aux, const LossWeights& w) {
  w.validate();
  auto check = [](const Value<T>& v, const char* name) {
    if (!std::isfinite(static_cast<double>(v.scalar())))
      throw NumericError(std::string("non-finite loss term ") + name);
  };
  check(id, "L_id");
  check(perc, "L_perc");
  check(attr, "L_attr");
  check(patch, "L_patch");
  Value<T> out = add(id, scale(perc, T(w.lambda1)));
  out = add(out, scale(attr, T(w.lambda2)));
  out = add(out, scale(patch, T(w.lambda3)));
  if (aux.defined()) {
    check(aux, "aux_cls");
    out = add(out, scale(aux, T(w.aux_cls)));
  }
  return out;
}

}  // namespace dfrec
