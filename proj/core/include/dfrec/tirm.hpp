#pragma once

#include "dfrec/image.hpp"
#include "dfrec/masking.hpp"
#include "dfrec/nn.hpp"

namespace dfrec {

// Pure tokenization: patches row-major over the grid, token entries ordered
// (y, x, c) within a patch. unpatchify(patchify(I)) == I exactly.
struct TokenSequence {
  Tensor<double> tokens;  // [N, rho*rho*3]
  std::int64_t rows = 0, cols = 0, rho = 0;
};

inline TokenSequence patchify(const Image& img, std::int64_t rho) {
  if (rho <= 0 || img.height % rho != 0 || img.width % rho != 0)
    throw InputError("patchify: image size not divisible by patch size");
  TokenSequence seq;
  seq.rows = img.height / rho;
  seq.cols = img.width / rho;
  seq.rho = rho;
  const std::int64_t D = rho * rho * img.channels;
  seq.tokens = Tensor<double>({seq.rows * seq.cols, D});
  for (std::int64_t pr = 0; pr < seq.rows; ++pr)
    for (std::int64_t pc = 0; pc < seq.cols; ++pc) {
      double* tok = seq.tokens.ptr() + (pr * seq.cols + pc) * D;
      std::int64_t k = 0;
      for (std::int64_t y = 0; y < rho; ++y)
        for (std::int64_t x = 0; x < rho; ++x)
          for (std::int64_t c = 0; c < img.channels; ++c, ++k) tok[k] = img.at(pr * rho + y, pc * rho + x, c);
    }
  return seq;
}

inline Image unpatchify(const TokenSequence& seq, std::int64_t channels = 3) {
  const std::int64_t D = seq.rho * seq.rho * channels;
  if (seq.tokens.shape.size() != 2 || seq.tokens.shape[0] != seq.rows * seq.cols || seq.tokens.shape[1] != D)
    throw InputError("unpatchify: token matrix does not match grid geometry");
  Image img(seq.rows * seq.rho, seq.cols * seq.rho, channels);
  for (std::int64_t pr = 0; pr < seq.rows; ++pr)
    for (std::int64_t pc = 0; pc < seq.cols; ++pc) {
      const double* tok = seq.tokens.ptr() + (pr * seq.cols + pc) * D;
      std::int64_t k = 0;
      for (std::int64_t y = 0; y < seq.rho; ++y)
        for (std::int64_t x = 0; x < seq.rho; ++x)
          for (std::int64_t c = 0; c < channels; ++c, ++k) img.at(pr * seq.rho + y, pc * seq.rho + x, c) = tok[k];
    }
  return img;
}

// Target Identity Recovery Module: MAE encoder over visible tokens plus an
// identity-fusion decoder that appends the projected f_t as one extra token.
struct MaeSpec {
  std::int64_t image_size = 32;
  std::int64_t patch = 4;
  std::int64_t enc_depth = 4, enc_width = 128, enc_heads = 4;
  std::int64_t dec_depth = 2, dec_width = 64, dec_heads = 4;
  std::int64_t ft_dim = 64;
  std::int64_t mlp_ratio = 4;

  void validate() const {
    if (patch <= 0 || image_size % patch != 0) throw ConfigError("image size must be divisible by patch size");
    if (enc_width % enc_heads != 0 || dec_width % dec_heads != 0)
      throw ConfigError("transformer width must be divisible by head count");
    if (enc_width % 4 != 0 || dec_width % 4 != 0) throw ConfigError("transformer width must be divisible by 4");
    if (enc_depth < 1 || dec_depth < 1) throw ConfigError("transformer depth must be >= 1");
  }

  std::int64_t grid() const { return image_size / patch; }
  std::int64_t tokens() const { return grid() * grid(); }
  std::int64_t token_dim() const { return patch * patch * 3; }
};

template <typename T>
struct TirmModel {
  MaeSpec spec;
  LinearLayer<T> embed;  // the linear transformation over visible tokens
  Tensor<T> pos_enc;     // fixed 2-D sinusoidal table, encoder width
  std::vector<TransformerBlock<T>> enc_blocks;
  LinearLayer<T> enc_to_dec;
  ParamTensor<T>* mask_token = nullptr;  // [dec_width]
  Tensor<T> pos_dec;     // fixed table, decoder width
  LinearLayer<T> ft_proj;  // f_t -> decoder width (the identity token)
  std::vector<TransformerBlock<T>> dec_blocks;
  LinearLayer<T> pixel_head;  // decoder width -> patch pixels

  static TirmModel create(ParamStore<T>& ps, const MaeSpec& spec, std::uint64_t seed) {
    spec.validate();
    TirmModel m;
    m.spec = spec;
    m.embed = LinearLayer<T>::create(ps, "tirm.embed", spec.token_dim(), spec.enc_width, seed);
    m.pos_enc = sincos_position_table<T>(spec.grid(), spec.grid(), spec.enc_width);
    for (std::int64_t i = 0; i < spec.enc_depth; ++i)
      m.enc_blocks.push_back(TransformerBlock<T>::create(ps, "tirm.enc" + std::to_string(i), spec.enc_width,
                                                         spec.enc_heads, spec.mlp_ratio, seed));
    m.enc_to_dec = LinearLayer<T>::create(ps, "tirm.enc2dec", spec.enc_width, spec.dec_width, seed);
    m.mask_token = &ps.add("tirm.mask_token", {spec.dec_width});
    init::normal(*m.mask_token, 0.02, seed);
    m.pos_dec = sincos_position_table<T>(spec.grid(), spec.grid(), spec.dec_width);
    m.ft_proj = LinearLayer<T>::create(ps, "tirm.ftproj", spec.ft_dim, spec.dec_width, seed);
    for (std::int64_t i = 0; i < spec.dec_depth; ++i)
      m.dec_blocks.push_back(TransformerBlock<T>::create(ps, "tirm.dec" + std::to_string(i), spec.dec_width,
                                                         spec.dec_heads, spec.mlp_ratio, seed));
    m.pixel_head = LinearLayer<T>::create(ps, "tirm.head", spec.dec_width, spec.token_dim(), seed);
    return m;
  }

  // Gathers a selection's rows out of a fixed table as a graph constant.
  Value<T> gather_table(Graph<T>& g, const Tensor<T>& table, const std::vector<std::int64_t>& idx) const {
    Tensor<T> out({static_cast<std::int64_t>(idx.size()), table.shape[1]});
    for (std::size_t r = 0; r < idx.size(); ++r)
      std::copy(table.ptr() + idx[r] * table.shape[1], table.ptr() + (idx[r] + 1) * table.shape[1],
                out.ptr() + static_cast<std::int64_t>(r) * table.shape[1]);
    return g.constant(out);
  }

  void check_selection(const MaskSelection& sel, std::int64_t token_count) const {
    if (sel.n != token_count) throw InputError("mask selection does not match token count");
    if (sel.kept.empty()) throw InputError("mask selection keeps no visible tokens");
    for (auto i : sel.masked)
      if (i < 0 || i >= token_count) throw InputError("masked index out of range");
    for (auto i : sel.kept)
      if (i < 0 || i >= token_count) throw InputError("kept index out of range");
  }

  // Encoder: l(x^sv) + p^sv through the transformer blocks.
  Value<T> encode(Graph<T>& g, const Value<T>& tokens, const MaskSelection& sel) const {
    if (tokens.shape().size() != 2 || tokens.shape()[1] != spec.token_dim())
      throw InputError("TIRM encode: token matrix has wrong width");
    check_selection(sel, tokens.shape()[0]);
    Value<T> visible = gather_rows(tokens, sel.kept);
    Value<T> x = add(embed.forward(g, visible), gather_table(g, pos_enc, sel.kept));
    for (const auto& blk : enc_blocks) x = blk.forward(g, x);
    return x;
  }

  // Identity-fusion decoder: visible embeddings at their positions, the
  // learned mask token at masked positions, and the projected f_t appended
  // as one identity token. Returns predictions for the masked patches, rows
  // in masked-index order.
  Value<T> fuse_and_decode(Graph<T>& g, const Value<T>& visible_emb, const Value<T>& f_t,
                           const MaskSelection& sel) const {
    if (f_t.shape() != Shape{spec.ft_dim})
      throw ConfigError("f_t dimension does not match the fusion projection input");
    const std::int64_t n = sel.n;
    const auto k = static_cast<std::int64_t>(sel.kept.size());
    const auto m = static_cast<std::int64_t>(sel.masked.size());
    if (visible_emb.shape() != Shape{k, spec.enc_width})
      throw InputError("visible embeddings do not match the selection");

    Value<T> vis = enc_to_dec.forward(g, visible_emb);  // [k, dec_width]
    // Tile the mask token to the masked rows: ones[m,1] x token[1,dec].
    Value<T> dec_in;
    if (m > 0) {
      Tensor<T> ones_t({m, 1});
      std::fill(ones_t.data.begin(), ones_t.data.end(), T(1));
      Value<T> masked_rows = matmul(g.constant(ones_t), reshape(g.param(*mask_token), Shape{1, spec.dec_width}));
      Value<T> stacked = concat0(vis, masked_rows);  // kept rows, then masked rows
      std::vector<std::int64_t> order(static_cast<std::size_t>(n));
      for (std::int64_t r = 0; r < k; ++r) order[static_cast<std::size_t>(sel.kept[static_cast<std::size_t>(r)])] = r;
      for (std::int64_t r = 0; r < m; ++r) order[static_cast<std::size_t>(sel.masked[static_cast<std::size_t>(r)])] = k + r;
      dec_in = gather_rows(stacked, order);  // original patch order
    } else {
      std::vector<std::int64_t> order(static_cast<std::size_t>(n));
      for (std::int64_t r = 0; r < k; ++r) order[static_cast<std::size_t>(sel.kept[static_cast<std::size_t>(r)])] = r;
      dec_in = gather_rows(vis, order);
    }
    dec_in = add(dec_in, g.constant(pos_dec));
    Value<T> id_token = reshape(ft_proj.forward_vec(g, f_t), Shape{1, spec.dec_width});
    Value<T> x = concat0(dec_in, id_token);  // [n + 1, dec_width]
    for (const auto& blk : dec_blocks) x = blk.forward(g, x);
    // The identity token's output is discarded; only masked rows are decoded.
    Value<T> masked_out = gather_rows(x, sel.masked);
    return pixel_head.forward(g, masked_out);  // [m, patch pixels]
  }

  struct Recovery {
    Value<T> image;      // [3, H, W], clamped to [0, 1]
    Value<T> predicted;  // x^recm, [m, patch pixels]; undefined when m = 0
    MaskSelection selection;
  };

  // Composes the recovered target: predictions at masked positions, original
  // tokens at visible positions, then unpatchify and clamp.
  Recovery recover_target(Graph<T>& g, const Value<T>& image, const Tensor<double>& m_s,
                          const Value<T>& f_t, double lambda, const std::vector<double>& nu) const {
    const Shape& s = image.shape();
    if (s.size() != 3 || s[0] != 3 || s[1] != spec.image_size || s[2] != spec.image_size)
      throw InputError("TIRM expects a [3," + std::to_string(spec.image_size) + "," +
                       std::to_string(spec.image_size) + "] image");
    Recovery rec;
    rec.selection = semantic_guided_mask(m_s, spec.patch, lambda, nu);
    Value<T> tokens = patchify_op(image, spec.patch);
    if (rec.selection.masked.empty()) {
      rec.image = clamp01(image);
      return rec;
    }
    Value<T> vis_emb = encode(g, tokens, rec.selection);
    rec.predicted = fuse_and_decode(g, vis_emb, f_t, rec.selection);
    Value<T> kept_tokens = gather_rows(tokens, rec.selection.kept);
    Value<T> stacked = concat0(kept_tokens, rec.predicted);
    const auto k = static_cast<std::int64_t>(rec.selection.kept.size());
    std::vector<std::int64_t> order(static_cast<std::size_t>(rec.selection.n));
    for (std::int64_t r = 0; r < k; ++r)
      order[static_cast<std::size_t>(rec.selection.kept[static_cast<std::size_t>(r)])] = r;
    for (std::size_t r = 0; r < rec.selection.masked.size(); ++r)
      order[static_cast<std::size_t>(rec.selection.masked[r])] = k + static_cast<std::int64_t>(r);
    Value<T> composed = gather_rows(stacked, order);
    rec.image = clamp01(unpatchify_op(composed, 3, spec.image_size, spec.image_size, spec.patch));
    return rec;
  }
};

}  // namespace dfrec
