#pragma once

#include <json.hpp>

#include <fstream>

#include "dfrec/checkpoint.hpp"
#include "dfrec/optimizer.hpp"
#include "dfrec/provider.hpp"

namespace dfrec {

namespace provider_detail {

constexpr std::uint64_t kIdPhaseTag = 0x1dfa5e;
constexpr std::uint64_t kAttrPhaseTag = 0xa77fa5e;
constexpr std::int64_t kSteps = 500;
constexpr std::int64_t kBatch = 8;
constexpr double kNoiseStd = 0.015;

template <typename T>
void set_trainable_prefix(ParamStore<T>& store, const std::string& prefix, bool trainable) {
  for (auto& p : store.all())
    if (p->name.rfind(prefix, 0) == 0) p->trainable = trainable;
}

// Input jitter keeps the embeddings tolerant of reconstruction artifacts.
template <typename T>
Tensor<T> noisy(const Tensor<T>& img, Rng& rng, double std) {
  Tensor<T> out = img;
  for (auto& v : out.data)
    v = static_cast<T>(std::min(1.0, std::max(0.0, static_cast<double>(v) + rng.normal(0.0, std))));
  return out;
}

}  // namespace provider_detail

template <typename T>
DeskProvider<T> build_desk_provider(const CorpusManifest& corpus, std::uint64_t seed) {
  if (corpus.config.identities < 4) throw ConfigError("desk provider needs at least 4 identities");
  using namespace provider_detail;

  DeskProvider<T> provider = DeskProvider<T>::create(corpus.config.identities, corpus.config.image_size, seed);
  provider.corpus_fingerprint = corpus_hash(corpus.root);

  // Identity tower: classify (real train image -> identity id).
  std::vector<Tensor<T>> images;
  std::vector<std::int64_t> labels;
  for (const ManifestRecord* r : corpus.select("train", "real")) {
    images.push_back(image_to_chw<T>(load_sample(corpus, r->sample_id).source));
    labels.push_back(r->source_identity);
  }
  if (images.empty()) throw ConfigError("corpus train split has no real samples");

  provider.params.set_trainable(false);
  set_trainable_prefix(provider.params, "prov.id", true);
  set_trainable_prefix(provider.params, "prov.idhead", true);
  {
    AdamW<T> opt({.lr = 2e-3, .weight_decay = 1e-4, .clip_norm = 5.0});
    for (std::int64_t step = 0; step < kSteps; ++step) {
      Rng rng = Rng::keyed(seed, {kIdPhaseTag, static_cast<std::uint64_t>(step)});
      provider.params.zero_grads();
      for (std::int64_t b = 0; b < kBatch; ++b) {
        const auto i = static_cast<std::size_t>(rng.next_below(images.size()));
        Graph<T> g;
        Value<T> x = g.input(noisy(images[i], rng, kNoiseStd));
        Value<T> emb = provider.embedding_value(g, x);
        Value<T> logits = provider.id_head.forward_vec(g, emb);
        Value<T> loss = softmax_cross_entropy(logits, labels[i]);
        g.backward(loss, T(1) / T(kBatch));
        g.harvest_param_grads();
      }
      opt.step(provider.params);
    }
  }

  // Attribute tower: regress the renderer's attribute vector from the image.
  std::vector<Tensor<T>> attr_images;
  std::vector<Tensor<T>> attr_targets;
  const std::vector<std::string> splits = identity_splits(corpus.config);
  for (std::int64_t id = 0; id < corpus.config.identities; ++id) {
    if (splits[static_cast<std::size_t>(id)] != "train") continue;
    for (std::int64_t j = 0; j < corpus.config.images_per_identity; ++j) {
      attr_images.push_back(image_to_chw<T>(render_real_sample(corpus.config, id, j)));
      const std::vector<double> t = attribute_target(real_sample_attrs(corpus.config, id, j));
      Tensor<T> tt({static_cast<std::int64_t>(t.size())});
      for (std::size_t k = 0; k < t.size(); ++k) tt.data[k] = static_cast<T>(t[k]);
      attr_targets.push_back(std::move(tt));
    }
  }
  provider.params.set_trainable(false);
  set_trainable_prefix(provider.params, "prov.attr", true);
  {
    AdamW<T> opt({.lr = 2e-3, .weight_decay = 1e-4, .clip_norm = 5.0});
    for (std::int64_t step = 0; step < kSteps; ++step) {
      Rng rng = Rng::keyed(seed, {kAttrPhaseTag, static_cast<std::uint64_t>(step)});
      provider.params.zero_grads();
      for (std::int64_t b = 0; b < kBatch; ++b) {
        const auto i = static_cast<std::size_t>(rng.next_below(attr_images.size()));
        Graph<T> g;
        Value<T> x = g.input(noisy(attr_images[i], rng, kNoiseStd));
        Value<T> pred = provider.attributes(g, x);
        Value<T> diff = sub(pred, g.constant(attr_targets[i]));
        Value<T> loss = mean(mul(diff, diff));
        g.backward(loss, T(1) / T(kBatch));
        g.harvest_param_grads();
      }
      opt.step(provider.params);
    }
  }

  provider.freeze();
  return provider;
}

template <typename T>
void save_provider(const std::filesystem::path& dir, const DeskProvider<T>& provider) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  save_params(dir / "provider.bin", provider.params);
  nlohmann::json j{{"format_version", 1},
                   {"kind", "desk"},
                   {"seed", provider.seed},
                   {"n_identities", provider.n_identities},
                   {"image_size", provider.image_size},
                   {"corpus_hash", provider.corpus_fingerprint},
                   {"precision", std::is_same_v<T, float> ? "f32" : "f64"},
                   {"weight_hash", provider.weight_hash()}};
  std::ofstream f(dir / "provider_manifest.json");
  if (!f) throw IoError("cannot write provider manifest under " + dir.string());
  f << j.dump(2) << "\n";
}

template <typename T>
DeskProvider<T> load_provider(const std::filesystem::path& dir) {
  std::ifstream f(dir / "provider_manifest.json");
  if (!f) throw IoError("missing provider_manifest.json under " + dir.string());
  nlohmann::json j = nlohmann::json::parse(f);
  const std::string precision = j.at("precision").get<std::string>();
  if (precision != (std::is_same_v<T, float> ? "f32" : "f64"))
    throw ConfigError("provider precision " + precision + " does not match the requested mode");
  DeskProvider<T> provider = DeskProvider<T>::create(j.at("n_identities").get<std::int64_t>(),
                                                     j.at("image_size").get<std::int64_t>(),
                                                     j.at("seed").get<std::uint64_t>());
  provider.corpus_fingerprint = j.at("corpus_hash").get<std::uint64_t>();
  load_params(dir / "provider.bin", provider.params);
  provider.freeze();
  return provider;
}

}  // namespace dfrec
