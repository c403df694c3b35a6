#include <gtest/gtest.h>

#include <json.hpp>

#include "dfrec/rng.hpp"
#include "dfrec/tirm.hpp"

using namespace dfrec;

namespace {

// A small MAE used across these tests (4x4 grid on a 16px image).
MaeSpec toy_spec() {
  MaeSpec s;
  s.image_size = 8;
  s.patch = 4;
  s.enc_depth = 2;
  s.enc_width = 16;
  s.enc_heads = 2;
  s.dec_depth = 1;
  s.dec_width = 8;
  s.dec_heads = 2;
  s.ft_dim = 6;
  s.mlp_ratio = 2;
  return s;
}

Tensor<double> random_chw(std::int64_t size, Rng& rng) {
  Tensor<double> t({3, size, size});
  for (auto& v : t.data) v = rng.uniform();
  return t;
}

// Builds an [H,W] map whose patch means are exactly the given grid values.
Tensor<double> map_with_patch_means(const std::vector<double>& means, std::int64_t grid, std::int64_t rho) {
  Tensor<double> m({grid * rho, grid * rho});
  for (std::int64_t pr = 0; pr < grid; ++pr)
    for (std::int64_t pc = 0; pc < grid; ++pc)
      for (std::int64_t y = 0; y < rho; ++y)
        for (std::int64_t x = 0; x < rho; ++x)
          m.data[static_cast<std::size_t>((pr * rho + y) * grid * rho + pc * rho + x)] =
              means[static_cast<std::size_t>(pr * grid + pc)];
  return m;
}

TEST(Tokens, PatchifyArithmeticAndConstancy) {
  Image img(4, 4, 3);
  std::fill(img.data.begin(), img.data.end(), 0.3);
  const TokenSequence seq = patchify(img, 2);
  EXPECT_EQ(seq.tokens.shape, (Shape{4, 12}));
  for (double v : seq.tokens.data) EXPECT_EQ(v, 0.3);
}

TEST(Tokens, RoundTripExact) {
  Rng rng(1);
  Image img(16, 16, 3);
  for (auto& v : img.data) v = rng.uniform();
  const Image back = unpatchify(patchify(img, 4));
  EXPECT_EQ(back.data, img.data);

  // Single-token grid: the token reshapes to the whole image.
  Image tiny(4, 4, 3);
  for (auto& v : tiny.data) v = rng.uniform();
  const TokenSequence one = patchify(tiny, 4);
  EXPECT_EQ(one.tokens.shape, (Shape{1, 48}));
  EXPECT_EQ(unpatchify(one).data, tiny.data);

  // Zero tokens give a zero image.
  TokenSequence zeros = one;
  std::fill(zeros.tokens.data.begin(), zeros.tokens.data.end(), 0.0);
  for (double v : unpatchify(zeros).data) EXPECT_EQ(v, 0.0);

  Image odd(5, 5, 3);
  EXPECT_THROW(patchify(odd, 2), InputError);
}

TEST(Masking, SpecExampleMixedRegime) {
  // Patch means 0.9/0.8/0.2/0.1, mu = 0.5: the two low patches are replaced
  // by jitter and the two source-heavy patches are masked.
  const Tensor<double> m = map_with_patch_means({0.9, 0.8, 0.2, 0.1}, 2, 2);
  const MaskSelection sel = semantic_guided_mask(m, 2, 0.5, {0.05, 0.02, 0.07, 0.01});
  EXPECT_EQ(sel.masked, (std::vector<std::int64_t>{0, 1}));
  EXPECT_EQ(sel.kept, (std::vector<std::int64_t>{2, 3}));
}

TEST(Masking, SpecExampleAllZeros) {
  const Tensor<double> m = map_with_patch_means({0, 0, 0, 0}, 2, 2);
  const MaskSelection sel = semantic_guided_mask(m, 2, 0.5, {0.01, 0.09, 0.03, 0.05});
  EXPECT_EQ(sel.masked, (std::vector<std::int64_t>{1, 3}));
}

TEST(Masking, SpecExampleSaturated) {
  const Tensor<double> m = map_with_patch_means({1, 1, 1, 1}, 2, 2);
  const MaskSelection sel = semantic_guided_mask(m, 2, 0.5, {0.08, 0.01, 0.02, 0.03});
  EXPECT_EQ(sel.masked, (std::vector<std::int64_t>{0, 3}));
}

TEST(Masking, PartitionAndSourcePriorityProperties) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::int64_t grid = 2 + static_cast<std::int64_t>(rng.next_below(3));  // 2..4
    const std::int64_t rho = 2;
    const std::int64_t n = grid * grid;
    std::vector<double> means(static_cast<std::size_t>(n));
    for (auto& v : means) v = rng.uniform();
    const Tensor<double> m = map_with_patch_means(means, grid, rho);
    const double lambda = rng.uniform(0.1, 0.9);
    std::vector<double> nu(static_cast<std::size_t>(n));
    for (auto& v : nu) v = rng.uniform(0.0, 0.1);

    const MaskSelection sel = semantic_guided_mask(m, rho, lambda, nu);
    const auto expected_m = static_cast<std::int64_t>(std::floor(static_cast<double>(n) * lambda));
    EXPECT_EQ(static_cast<std::int64_t>(sel.masked.size()), expected_m);

    std::vector<bool> seen(static_cast<std::size_t>(n), false);
    for (auto i : sel.masked) seen[static_cast<std::size_t>(i)] = true;
    for (auto i : sel.kept) {
      EXPECT_FALSE(seen[static_cast<std::size_t>(i)]);
      seen[static_cast<std::size_t>(i)] = true;
    }
    for (bool b : seen) EXPECT_TRUE(b);

    double mu = 0.0;
    for (double v : m.data) mu += v;
    mu /= static_cast<double>(m.data.size());
    if (mu < 0.9) {
      // Un-replaced patches (mean >= 0.5) outrank all jittered ones.
      std::int64_t c = 0;
      for (double w : means)
        if (w >= 0.5) ++c;
      const std::int64_t want = std::min(c, expected_m);
      std::int64_t got = 0;
      for (std::int64_t k = 0; k < expected_m; ++k)
        if (means[static_cast<std::size_t>(sel.masked[static_cast<std::size_t>(k)])] >= 0.5) ++got;
      EXPECT_GE(got, want);
    }
  }
}

TEST(Masking, GroundTruthCoverage) {
  // With lambda at least the fraction of mask-covered patches, every patch
  // whose gt-mask mean is >= 0.5 ends up masked.
  Rng rng(8);
  const std::int64_t grid = 4, rho = 4, n = grid * grid;
  std::vector<double> means(static_cast<std::size_t>(n));
  for (auto& v : means) v = rng.uniform() < 0.4 ? rng.uniform(0.5, 1.0) : rng.uniform(0.0, 0.45);
  const Tensor<double> m = map_with_patch_means(means, grid, rho);
  std::int64_t covered = 0;
  for (double v : means)
    if (v >= 0.5) ++covered;
  double mu = 0.0;
  for (double v : m.data) mu += v;
  mu /= static_cast<double>(m.data.size());
  ASSERT_LT(mu, 0.9);
  const double lambda = std::min(0.95, static_cast<double>(covered + 1) / static_cast<double>(n));
  std::vector<double> nu(static_cast<std::size_t>(n), 0.05);
  const MaskSelection sel = semantic_guided_mask(m, rho, lambda, nu);
  for (std::int64_t i = 0; i < n; ++i) {
    if (means[static_cast<std::size_t>(i)] >= 0.5)
      EXPECT_NE(std::find(sel.masked.begin(), sel.masked.end(), i), sel.masked.end());
  }
}

TEST(Masking, ErrorsAndSerialization) {
  const Tensor<double> m = map_with_patch_means({0.5, 0.5, 0.5, 0.5}, 2, 2);
  EXPECT_THROW(semantic_guided_mask(m, 2, 0.5, {0.1, 0.1}), InputError);       // nu length
  EXPECT_THROW(semantic_guided_mask(m, 2, 0.5, {0.1, 0.1, 0.1, 0.2}), InputError);  // nu range
  EXPECT_THROW(semantic_guided_mask(m, 3, 0.5, {0.1, 0.1, 0.1, 0.1}), InputError);  // divisibility
  EXPECT_THROW(semantic_guided_mask(m, 2, 1.0, {0.1, 0.1, 0.1, 0.1}), InputError);  // lambda range

  const MaskSelection sel = semantic_guided_mask(m, 2, 0.5, {0.0, 0.0, 0.0, 0.0});
  const auto j = nlohmann::json::parse(sel.to_json());
  EXPECT_TRUE(j.contains("masked"));
  EXPECT_TRUE(j.contains("kept"));
  EXPECT_EQ(j.at("n").get<std::int64_t>(), 4);
  EXPECT_EQ(j.at("rho").get<std::int64_t>(), 2);
  EXPECT_DOUBLE_EQ(j.at("lambda").get<double>(), 0.5);
}

TEST(Mae, EncodeCardinalityAndZeroWeights) {
  ParamStore<double> ps;
  TirmModel<double> model = TirmModel<double>::create(ps, toy_spec(), 1);
  Rng rng(2);
  const Tensor<double> img = random_chw(8, rng);

  Graph<double> g;
  Value<double> tokens = patchify_op(g.input(img), 4);
  const Tensor<double> m = map_with_patch_means({0.9, 0.8, 0.2, 0.1}, 2, 4);
  const MaskSelection sel = semantic_guided_mask(m, 4, 0.5, {0.05, 0.02, 0.07, 0.01});
  Value<double> enc = model.encode(g, tokens, sel);
  EXPECT_EQ(enc.shape(), (Shape{2, 16}));  // n - floor(n*lambda) = 2 visible

  // Zero-weight blocks reduce to the identity residual path: the encoder
  // output equals l(x^sv) + p^sv.
  for (auto& p : ps.all())
    if (p->name.rfind("tirm.enc", 0) == 0 && p->name.find("embed") == std::string::npos)
      std::fill(p->value.begin(), p->value.end(), 0.0);
  Graph<double> g2;
  Value<double> tokens2 = patchify_op(g2.input(img), 4);
  Value<double> enc2 = model.encode(g2, tokens2, sel);
  Value<double> expect = add(model.embed.forward(g2, gather_rows(tokens2, sel.kept)),
                             model.gather_table(g2, model.pos_enc, sel.kept));
  for (std::int64_t i = 0; i < enc2.size(); ++i) EXPECT_DOUBLE_EQ(enc2.val()[i], expect.val()[i]);
}

TEST(Mae, EncoderPermutationEquivariance) {
  ParamStore<double> ps;
  TirmModel<double> model = TirmModel<double>::create(ps, toy_spec(), 3);
  Rng rng(4);
  const Tensor<double> img = random_chw(8, rng);

  MaskSelection sel;
  sel.n = 4;
  sel.rho = 4;
  sel.lambda = 0.25;
  sel.masked = {2};
  sel.kept = {0, 1, 3};
  MaskSelection perm = sel;
  perm.kept = {3, 0, 1};

  Graph<double> g;
  Value<double> tokens = patchify_op(g.input(img), 4);
  Value<double> a = model.encode(g, tokens, sel);
  Value<double> b = model.encode(g, tokens, perm);
  // Row r of `a` is token sel.kept[r]; find it in the permuted output.
  for (std::size_t r = 0; r < sel.kept.size(); ++r) {
    const auto pr = std::distance(perm.kept.begin(), std::find(perm.kept.begin(), perm.kept.end(), sel.kept[r]));
    for (std::int64_t c = 0; c < 16; ++c)
      EXPECT_NEAR(a.val()[r * 16 + c], b.val()[static_cast<std::size_t>(pr) * 16 + c], 1e-6);
  }
}

TEST(Mae, FuseAndDecodeShapesAndFtSensitivity) {
  ParamStore<double> ps;
  TirmModel<double> model = TirmModel<double>::create(ps, toy_spec(), 5);
  Rng rng(6);
  const Tensor<double> img = random_chw(8, rng);
  const Tensor<double> m = map_with_patch_means({0.9, 0.8, 0.2, 0.1}, 2, 4);
  const MaskSelection sel = semantic_guided_mask(m, 4, 0.5, {0.05, 0.02, 0.07, 0.01});

  Tensor<double> ft({6});
  for (auto& v : ft.data) v = rng.uniform(-1, 1);

  auto eval = [&](const Tensor<double>& ftv) {
    Graph<double> g;
    Value<double> tokens = patchify_op(g.input(img), 4);
    Value<double> enc = model.encode(g, tokens, sel);
    Value<double> pred = model.fuse_and_decode(g, enc, g.input(ftv), sel);
    EXPECT_EQ(pred.shape(), (Shape{2, 48}));
    return to_tensor(pred);
  };
  const Tensor<double> base = eval(ft);
  Tensor<double> ft2 = ft;
  ft2.data[3] += 1e-3;
  const Tensor<double> moved = eval(ft2);
  double diff = 0.0;
  for (std::size_t i = 0; i < base.data.size(); ++i) diff = std::max(diff, std::abs(base.data[i] - moved.data[i]));
  EXPECT_GT(diff, 0.0);  // f_t genuinely steers the prediction

  // Wrong f_t width is a configuration error.
  Graph<double> g;
  Value<double> tokens = patchify_op(g.input(img), 4);
  Value<double> enc = model.encode(g, tokens, sel);
  Tensor<double> bad({5});
  EXPECT_THROW(model.fuse_and_decode(g, enc, g.input(bad), sel), ConfigError);
}

TEST(Mae, RecoverTargetPassthroughAndDeterminism) {
  ParamStore<double> ps;
  TirmModel<double> model = TirmModel<double>::create(ps, toy_spec(), 7);
  Rng rng(8);
  const Tensor<double> img = random_chw(8, rng);
  Tensor<double> ft({6});
  for (auto& v : ft.data) v = rng.uniform(-1, 1);
  Tensor<double> m({8, 8});
  for (auto& v : m.data) v = rng.uniform();
  const std::vector<double> nu = {0.05, 0.02, 0.07, 0.01};

  // lambda small enough that floor(n*lambda) = 0: nothing masked.
  {
    Graph<double> g;
    auto rec = model.recover_target(g, g.input(img), m, g.input(ft), 0.2, nu);
    EXPECT_TRUE(rec.selection.masked.empty());
    for (std::int64_t i = 0; i < rec.image.size(); ++i) EXPECT_EQ(rec.image.val()[i], img.data[i]);
  }
  // Visible patches pass through unchanged; output deterministic.
  {
    Graph<double> g1, g2;
    auto r1 = model.recover_target(g1, g1.input(img), m, g1.input(ft), 0.5, nu);
    auto r2 = model.recover_target(g2, g2.input(img), m, g2.input(ft), 0.5, nu);
    for (std::int64_t i = 0; i < r1.image.size(); ++i) EXPECT_EQ(r1.image.val()[i], r2.image.val()[i]);

    const Image in_img = chw_to_image(img);
    const Image out_img = chw_to_image(to_tensor(r1.image));
    const TokenSequence in_tok = patchify(in_img, 4);
    const TokenSequence out_tok = patchify(out_img, 4);
    for (auto k : r1.selection.kept)
      for (std::int64_t c = 0; c < 48; ++c)
        EXPECT_EQ(out_tok.tokens.data[static_cast<std::size_t>(k * 48 + c)],
                  in_tok.tokens.data[static_cast<std::size_t>(k * 48 + c)]);
  }
}

TEST(Mae, Eq1GradientChecks) {
  // d(scalar of x^recm) w.r.t. one encoder weight, one decoder weight and
  // one f_t entry, against central differences on a 4-token toy.
  ParamStore<double> ps;
  TirmModel<double> model = TirmModel<double>::create(ps, toy_spec(), 9);
  Rng rng(10);
  const Tensor<double> img = random_chw(8, rng);
  const Tensor<double> m = map_with_patch_means({0.9, 0.8, 0.2, 0.1}, 2, 4);
  const MaskSelection sel = semantic_guided_mask(m, 4, 0.5, {0.05, 0.02, 0.07, 0.01});
  Tensor<double> ft({6});
  for (auto& v : ft.data) v = rng.uniform(-1, 1);

  std::vector<double> ft_grad;
  auto eval = [&](bool with_grad) {
    Graph<double> g;
    Value<double> ftv = g.input(ft, with_grad);
    Value<double> tokens = patchify_op(g.input(img), 4);
    Value<double> pred = model.fuse_and_decode(g, model.encode(g, tokens, sel), ftv, sel);
    Value<double> loss = sum(pred);
    if (with_grad) {
      g.backward(loss);
      g.harvest_param_grads();
      auto fg = ftv.node()->ensure_grad();
      ft_grad.assign(fg.begin(), fg.end());
    }
    return loss.scalar();
  };

  ps.zero_grads();
  eval(true);
  const double h = 1e-5;
  double max_rel = 0.0;
  auto probe_param = [&](const std::string& name, std::size_t idx) {
    ParamTensor<double>& p = ps.at(name);
    const double saved = p.value[idx];
    p.value[idx] = saved + h;
    const double fp = eval(false);
    p.value[idx] = saved - h;
    const double fm = eval(false);
    p.value[idx] = saved;
    const double fd = (fp - fm) / (2 * h);
    max_rel = std::max(max_rel, std::abs(fd - p.grad[idx]) / std::max({std::abs(fd), std::abs(p.grad[idx]), 1e-8}));
  };
  probe_param("tirm.enc0.attn.q.w", 5);
  probe_param("tirm.enc1.fc1.w", 11);
  probe_param("tirm.dec0.attn.v.w", 3);
  probe_param("tirm.head.w", 17);
  probe_param("tirm.ftproj.w", 7);
  probe_param("tirm.mask_token", 2);
  EXPECT_LT(max_rel, 1e-4);

  // f_t finite differences.
  for (std::size_t i = 0; i < ft.data.size(); ++i) {
    const double saved = ft.data[i];
    ft.data[i] = saved + h;
    const double fp = eval(false);
    ft.data[i] = saved - h;
    const double fm = eval(false);
    ft.data[i] = saved;
    const double fd = (fp - fm) / (2 * h);
    max_rel = std::max(max_rel, std::abs(fd - ft_grad[i]) / std::max({std::abs(fd), std::abs(ft_grad[i]), 1e-8}));
  }
  EXPECT_LT(max_rel, 1e-4);
}

}  // namespace
