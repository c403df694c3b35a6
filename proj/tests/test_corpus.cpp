#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dfrec/corpus.hpp"
#include "dfrec/error.hpp"

using namespace dfrec;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("dfrec_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

TEST(Renderer, IdentityDeterminismAndDistinctness) {
  const IdentityParams a1 = synth_identity(5, 7);
  const IdentityParams a2 = synth_identity(5, 7);
  EXPECT_EQ(a1.feature_vector, a2.feature_vector);

  const IdentityParams b = synth_identity(6, 7);
  EXPECT_NE(a1.feature_vector, b.feature_vector);
  const IdentityParams c = synth_identity(5, 8);
  EXPECT_NE(a1.feature_vector, c.feature_vector);

  EXPECT_THROW(synth_identity(-1, 7), InputError);
}

TEST(Renderer, ShapeRangeAndDeterminism) {
  const IdentityParams id = synth_identity(3, 1);
  AttributeParams attrs;  // defaults
  const Image img = render_face(id, attrs, 32);
  EXPECT_EQ(img.height, 32);
  EXPECT_EQ(img.width, 32);
  EXPECT_EQ(img.channels, 3);
  for (double v : img.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  const Image img2 = render_face(id, attrs, 32);
  EXPECT_EQ(img.data, img2.data);

  EXPECT_THROW(render_face(id, attrs, 8), ConfigError);
}

TEST(Renderer, LightingIsGlobalClampedScale) {
  const IdentityParams id = synth_identity(2, 9);
  AttributeParams base;
  base.lighting = 1.0;
  AttributeParams lit = base;
  lit.lighting = 1.3;
  const Image a = render_face(id, base, 32);
  const Image b = render_face(id, lit, 32);
  for (std::size_t i = 0; i < a.data.size(); ++i)
    EXPECT_DOUBLE_EQ(b.data[i], std::min(1.0, a.data[i] * 1.3));
}

TEST(Renderer, AttributesChangeTheImage) {
  const IdentityParams id = synth_identity(0, 3);
  Rng rng(4);
  const AttributeParams a1 = AttributeParams::sample(rng);
  const AttributeParams a2 = AttributeParams::sample(rng);
  EXPECT_NE(render_face(id, a1, 32).data, render_face(id, a2, 32).data);
}

TEST(Blend, AlphaBlendIdentities) {
  Rng rng(11);
  const IdentityParams ida = synth_identity(0, 5), idb = synth_identity(1, 5);
  AttributeParams attrs;
  const Image src = render_face(ida, attrs, 32);
  const Image tgt = render_face(idb, attrs, 32);

  Image zeros(32, 32, 1);
  const Image all_tgt = alpha_blend(src, tgt, zeros);
  EXPECT_EQ(all_tgt.data, tgt.data);

  Image ones(32, 32, 1);
  std::fill(ones.data.begin(), ones.data.end(), 1.0);
  const Image all_src = alpha_blend(src, tgt, ones);
  EXPECT_EQ(all_src.data, src.data);

  // Binary half-plane: left half source, right half target.
  Image half(32, 32, 1);
  for (std::int64_t y = 0; y < 32; ++y)
    for (std::int64_t x = 0; x < 16; ++x) half.at(y, x, 0) = 1.0;
  const Image split = alpha_blend(src, tgt, half);
  for (std::int64_t y = 0; y < 32; ++y)
    for (std::int64_t x = 0; x < 32; ++x)
      for (std::int64_t c = 0; c < 3; ++c)
        EXPECT_EQ(split.at(y, x, c), x < 16 ? src.at(y, x, c) : tgt.at(y, x, c));

  Image bad(16, 16, 1);
  EXPECT_THROW(alpha_blend(src, tgt, bad), InputError);
}

TEST(Blend, ConstantImageIsBlurFixedPoint) {
  Image c(24, 24, 3);
  std::fill(c.data.begin(), c.data.end(), 0.37);
  const Image blurred = gaussian_blur(c, 1.2, 3);
  for (double v : blurred.data) EXPECT_NEAR(v, 0.37, 1e-12);
}

TEST(Blend, SwapMaskSupportInvariant) {
  const CorpusConfig cfg{.identities = 4, .swaps = 2, .seed = 42};
  Rng rng(17);
  const ForgerySample s = synth_swap(cfg, {0, 1, 2, 3}, rng);
  EXPECT_NE(s.source_identity, s.target_identity);
  // Wherever the stored mask is zero the forgery equals the target exactly.
  for (std::int64_t y = 0; y < 32; ++y)
    for (std::int64_t x = 0; x < 32; ++x)
      if (s.gt_mask.at(y, x, 0) == 0.0)
        for (std::int64_t c = 0; c < 3; ++c) EXPECT_EQ(s.forgery.at(y, x, c), s.target.at(y, x, c));
  // And somewhere inside the mask the faces genuinely differ.
  EXPECT_GT(max_abs_diff(s.forgery, s.target), 0.05);
}

TEST(Corpus, BuildCountsSplitsAndInvariants) {
  const fs::path root = temp_dir("corpus_counts");
  CorpusConfig cfg;
  cfg.identities = 10;
  cfg.images_per_identity = 4;
  cfg.swaps = 40;
  cfg.seed = 1;
  const CorpusManifest m = build_corpus(cfg, root);

  EXPECT_EQ(m.select(std::nullopt, "real").size(), 40u);
  EXPECT_EQ(m.select(std::nullopt, "fake").size(), 40u);

  // 8:1:1 by identity.
  const auto splits = identity_splits(cfg);
  std::int64_t tr = 0, va = 0, te = 0;
  for (const auto& s : splits) (s == "train" ? tr : s == "val" ? va : te)++;
  EXPECT_EQ(tr, 8);
  EXPECT_EQ(va, 1);
  EXPECT_EQ(te, 1);

  for (const auto& r : m.records) {
    if (r.label == "fake") {
      EXPECT_NE(r.source_identity, r.target_identity);
      EXPECT_EQ(splits[static_cast<std::size_t>(r.source_identity)], r.split);
      EXPECT_EQ(splits[static_cast<std::size_t>(r.target_identity)], r.split);
    } else {
      EXPECT_EQ(r.source_identity, r.target_identity);
    }
  }
}

TEST(Corpus, RebuildIsByteIdentical) {
  const fs::path a = temp_dir("corpus_det_a");
  const fs::path b = temp_dir("corpus_det_b");
  CorpusConfig cfg;
  cfg.identities = 5;
  cfg.images_per_identity = 2;
  cfg.swaps = 6;
  cfg.seed = 99;
  build_corpus(cfg, a);
  build_corpus(cfg, b);
  EXPECT_EQ(slurp(a / "manifest.jsonl"), slurp(b / "manifest.jsonl"));
  EXPECT_EQ(slurp(a / "corpus_config.json"), slurp(b / "corpus_config.json"));
  EXPECT_EQ(corpus_hash(a), corpus_hash(b));
  // Image bytes too, not just the manifest.
  const CorpusManifest m = load_manifest(a);
  for (const auto& r : m.records) EXPECT_EQ(slurp(a / r.forgery), slurp(b / r.forgery));
}

TEST(Corpus, LoadSampleRoundTripExact) {
  const fs::path root = temp_dir("corpus_roundtrip");
  CorpusConfig cfg;
  cfg.identities = 4;
  cfg.images_per_identity = 2;
  cfg.swaps = 4;
  cfg.seed = 7;
  const CorpusManifest built = build_corpus(cfg, root);
  const CorpusManifest loaded = load_manifest(root);
  ASSERT_EQ(built.records.size(), loaded.records.size());

  for (const auto& r : loaded.records) {
    const ForgerySample s = load_sample(loaded, r.sample_id);
    if (r.label == "real") {
      EXPECT_EQ(s.forgery.data, s.source.data);
      EXPECT_EQ(s.forgery.data, s.target.data);
      for (double v : s.gt_mask.data) EXPECT_EQ(v, 0.0);
    } else {
      double max_outside = 0.0;
      for (std::int64_t y = 0; y < s.forgery.height; ++y)
        for (std::int64_t x = 0; x < s.forgery.width; ++x)
          if (s.gt_mask.at(y, x, 0) == 0.0)
            for (std::int64_t c = 0; c < 3; ++c)
              max_outside = std::max(max_outside, std::abs(s.forgery.at(y, x, c) - s.target.at(y, x, c)));
      EXPECT_EQ(max_outside, 0.0);
    }
  }

  // Pixel-exact equality between what was written and what loads back.
  const ForgerySample direct = load_sample(built, 0);
  const ForgerySample reread = load_sample(loaded, 0);
  EXPECT_EQ(direct.forgery.data, reread.forgery.data);

  EXPECT_THROW(load_sample(loaded, 10'000), InputError);
}

TEST(Corpus, ValidationErrors) {
  CorpusConfig cfg;
  cfg.identities = 2;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.identities = 4;
  cfg.image_size = 30;
  cfg.patch_size = 4;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Corpus, MissingFileGivesContextualIoError) {
  const fs::path root = temp_dir("corpus_missing");
  CorpusConfig cfg;
  cfg.identities = 4;
  cfg.images_per_identity = 1;
  cfg.swaps = 0;
  const CorpusManifest m = build_corpus(cfg, root);
  fs::remove(root / m.records[0].forgery);
  try {
    load_sample(m, 0);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("sample 0"), std::string::npos);
  }
}

TEST(Corpus, PngJpegCodecs) {
  const fs::path root = temp_dir("codecs");
  Rng rng(3);
  Image img(32, 32, 3);
  for (auto& v : img.data) v = rng.uniform();
  img = quantized(img);
  write_png(root / "x.png", img);
  const Image back = read_png(root / "x.png");
  EXPECT_EQ(back.data, img.data);

  // Smooth gradient survives a q=99 jpeg round trip within 0.05.
  Image grad(32, 32, 3);
  for (std::int64_t y = 0; y < 32; ++y)
    for (std::int64_t x = 0; x < 32; ++x)
      for (std::int64_t c = 0; c < 3; ++c) grad.at(y, x, c) = (x + y) / 62.0;
  const Image jp = decode_jpeg(encode_jpeg(grad, 99));
  EXPECT_LT(max_abs_diff(jp, quantized(grad)), 0.05);
}

}  // namespace
