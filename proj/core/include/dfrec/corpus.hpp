#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dfrec/blend.hpp"
#include "dfrec/image.hpp"
#include "dfrec/renderer.hpp"

namespace dfrec {

struct CorpusConfig {
  std::int64_t identities = 10;
  std::int64_t images_per_identity = 4;
  std::int64_t swaps = 40;
  std::int64_t image_size = 32;
  std::int64_t patch_size = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ManifestRecord {
  std::int64_t sample_id = 0;
  std::string forgery, source, target, mask;  // paths relative to the root
  std::int64_t source_identity = 0;
  std::int64_t target_identity = 0;
  std::string label;  // "real" | "fake"
  std::string split;  // "train" | "val" | "test"
};

struct CorpusManifest {
  std::filesystem::path root;
  CorpusConfig config;
  std::vector<ManifestRecord> records;

  const ManifestRecord& at(std::int64_t sample_id) const;
  std::vector<const ManifestRecord*> select(std::optional<std::string> split,
                                            std::optional<std::string> label = std::nullopt) const;
};

// One swap instance: images in [0,1] quantized to the on-disk 8-bit grid.
struct ForgerySample {
  Image forgery, source, target;
  Image gt_mask;  // H x W x 1
  std::int64_t source_identity = 0;
  std::int64_t target_identity = 0;
  bool fake = false;
};

// Identity -> split assignment: 8:1:1 by identity, no identity crosses
// splits. Returns one of "train"/"val"/"test" per identity id.
std::vector<std::string> identity_splits(const CorpusConfig& config);

// The attribute draw used for real sample j of an identity; exposed so the
// provider can re-derive (image, attributes) training pairs from the config.
AttributeParams real_sample_attrs(const CorpusConfig& config, std::int64_t identity_id, std::int64_t j);

// Renders real sample j of an identity (already 8-bit quantized).
Image render_real_sample(const CorpusConfig& config, std::int64_t identity_id, std::int64_t j);

// Generates a fresh BI-style swap between two identities from `pool`
// (online augmentation and corpus construction share this path).
ForgerySample synth_swap(const CorpusConfig& config, const std::vector<std::int64_t>& pool, Rng& rng);

CorpusManifest build_corpus(const CorpusConfig& config, const std::filesystem::path& root);
CorpusManifest load_manifest(const std::filesystem::path& root);
ForgerySample load_sample(const CorpusManifest& manifest, std::int64_t sample_id);

// Fingerprint of manifest.jsonl bytes; recorded in checkpoints.
std::uint64_t corpus_hash(const std::filesystem::path& root);

}  // namespace dfrec
