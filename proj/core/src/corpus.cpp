#include "dfrec/corpus.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

#include "dfrec/error.hpp"

namespace dfrec {

namespace {

using nlohmann::json;

constexpr std::uint64_t kSplitTag = 0x5b117;
constexpr std::uint64_t kAttrsTag = 0xa771;
constexpr std::uint64_t kSwapTag = 0x53a9;

std::string sample_name(std::int64_t id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06lld", static_cast<long long>(id));
  return buf;
}

json record_to_json(const ManifestRecord& r) {
  return json{{"sample_id", r.sample_id}, {"forgery", r.forgery},   {"source", r.source},
              {"target", r.target},       {"mask", r.mask},         {"source_identity", r.source_identity},
              {"target_identity", r.target_identity}, {"label", r.label}, {"split", r.split}};
}

ManifestRecord record_from_json(const json& j) {
  ManifestRecord r;
  r.sample_id = j.at("sample_id").get<std::int64_t>();
  r.forgery = j.at("forgery").get<std::string>();
  r.source = j.at("source").get<std::string>();
  r.target = j.at("target").get<std::string>();
  r.mask = j.at("mask").get<std::string>();
  r.source_identity = j.at("source_identity").get<std::int64_t>();
  r.target_identity = j.at("target_identity").get<std::int64_t>();
  r.label = j.at("label").get<std::string>();
  r.split = j.at("split").get<std::string>();
  return r;
}

}  // namespace

void CorpusConfig::validate() const {
  if (identities < 4) throw ConfigError("corpus needs at least 4 identities");
  if (images_per_identity < 1) throw ConfigError("images_per_identity must be >= 1");
  if (swaps < 0) throw ConfigError("swaps must be >= 0");
  if (image_size < 16) throw ConfigError("image_size must be >= 16");
  if (patch_size < 1 || image_size % patch_size != 0)
    throw ConfigError("image_size must be divisible by patch_size");
}

const ManifestRecord& CorpusManifest::at(std::int64_t sample_id) const {
  for (const auto& r : records)
    if (r.sample_id == sample_id) return r;
  throw InputError("sample_id not in manifest: " + std::to_string(sample_id));
}

std::vector<const ManifestRecord*> CorpusManifest::select(std::optional<std::string> split,
                                                          std::optional<std::string> label) const {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : records) {
    if (split && r.split != *split) continue;
    if (label && r.label != *label) continue;
    out.push_back(&r);
  }
  return out;
}

std::vector<std::string> identity_splits(const CorpusConfig& config) {
  const std::int64_t n = config.identities;
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng = Rng::keyed(config.seed, {kSplitTag});
  for (std::int64_t i = n - 1; i > 0; --i)
    std::swap(order[static_cast<std::size_t>(i)],
              order[static_cast<std::size_t>(rng.next_below(static_cast<std::uint64_t>(i + 1)))]);
  const auto n_val = std::max<std::int64_t>(1, std::llround(0.1 * static_cast<double>(n)));
  const auto n_test = std::max<std::int64_t>(1, std::llround(0.1 * static_cast<double>(n)));
  std::vector<std::string> split(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t id = order[static_cast<std::size_t>(i)];
    split[static_cast<std::size_t>(id)] = i < n - n_val - n_test ? "train" : (i < n - n_test ? "val" : "test");
  }
  return split;
}

AttributeParams real_sample_attrs(const CorpusConfig& config, std::int64_t identity_id, std::int64_t j) {
  Rng rng = Rng::keyed(config.seed, {kAttrsTag, static_cast<std::uint64_t>(identity_id), static_cast<std::uint64_t>(j)});
  return AttributeParams::sample(rng);
}

Image render_real_sample(const CorpusConfig& config, std::int64_t identity_id, std::int64_t j) {
  const IdentityParams id = synth_identity(identity_id, config.seed);
  return quantized(render_face(id, real_sample_attrs(config, identity_id, j), config.image_size));
}

ForgerySample synth_swap(const CorpusConfig& config, const std::vector<std::int64_t>& pool, Rng& rng) {
  if (pool.size() < 2) throw ConfigError("swap synthesis needs at least 2 identities");
  const std::size_t si = static_cast<std::size_t>(rng.next_below(pool.size()));
  const std::size_t ti = (si + 1 + static_cast<std::size_t>(rng.next_below(pool.size() - 1))) % pool.size();
  const IdentityParams src_id = synth_identity(pool[si], config.seed);
  const IdentityParams tgt_id = synth_identity(pool[ti], config.seed);
  const AttributeParams src_attrs = AttributeParams::sample(rng);
  const AttributeParams tgt_attrs = AttributeParams::sample(rng);

  ForgerySample s;
  s.source = quantized(render_face(src_id, src_attrs, config.image_size));
  s.target = quantized(render_face(tgt_id, tgt_attrs, config.image_size));
  BlendResult blend = blend_swap(s.source, s.target, rng, face_region(tgt_id, tgt_attrs));
  s.forgery = quantized(blend.forgery);
  s.gt_mask = blend.gt_mask;
  s.source_identity = pool[si];
  s.target_identity = pool[ti];
  s.fake = true;
  return s;
}

CorpusManifest build_corpus(const CorpusConfig& config, const std::filesystem::path& root) {
  config.validate();
  std::error_code ec;
  std::filesystem::create_directories(root / "images", ec);
  std::filesystem::create_directories(root / "masks", ec);
  if (!std::filesystem::is_directory(root / "images") || !std::filesystem::is_directory(root / "masks"))
    throw IoError("cannot create corpus directories under " + root.string());

  const std::vector<std::string> splits = identity_splits(config);
  CorpusManifest manifest;
  manifest.root = root;
  manifest.config = config;

  auto write_sample = [&](const ForgerySample& s, const std::string& split) {
    ManifestRecord r;
    r.sample_id = static_cast<std::int64_t>(manifest.records.size());
    const std::string base = sample_name(r.sample_id);
    r.forgery = "images/" + base + "_f.png";
    r.source = "images/" + base + "_s.png";
    r.target = "images/" + base + "_t.png";
    r.mask = "masks/" + base + ".png";
    r.source_identity = s.source_identity;
    r.target_identity = s.target_identity;
    r.label = s.fake ? "fake" : "real";
    r.split = split;
    write_png(root / r.forgery, s.forgery);
    write_png(root / r.source, s.source);
    write_png(root / r.target, s.target);
    write_png(root / r.mask, s.gt_mask);
    manifest.records.push_back(r);
  };

  // Real samples, ordered by identity then image index.
  for (std::int64_t id = 0; id < config.identities; ++id) {
    for (std::int64_t j = 0; j < config.images_per_identity; ++j) {
      ForgerySample s;
      s.source = render_real_sample(config, id, j);
      s.target = s.source;
      s.forgery = s.source;
      s.gt_mask = Image(config.image_size, config.image_size, 1);
      s.source_identity = id;
      s.target_identity = id;
      s.fake = false;
      write_sample(s, splits[static_cast<std::size_t>(id)]);
    }
  }

  // Swaps pair identities within a split; splits with fewer than two
  // identities cannot host a swap, so their share goes to the others.
  std::vector<std::int64_t> pools[3];
  const char* split_names[3] = {"train", "val", "test"};
  for (std::int64_t id = 0; id < config.identities; ++id)
    for (int k = 0; k < 3; ++k)
      if (splits[static_cast<std::size_t>(id)] == split_names[k]) pools[k].push_back(id);
  std::int64_t eligible_total = 0;
  for (const auto& pool : pools)
    if (pool.size() >= 2) eligible_total += static_cast<std::int64_t>(pool.size());
  std::int64_t quotas[3] = {0, 0, 0};
  std::int64_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    if (pools[k].size() < 2 || eligible_total == 0) continue;
    quotas[k] = config.swaps * static_cast<std::int64_t>(pools[k].size()) / eligible_total;
    assigned += quotas[k];
  }
  for (int k = 0; k < 3 && assigned < config.swaps; ++k) {
    if (pools[k].size() < 2) continue;
    quotas[k] += config.swaps - assigned;
    assigned = config.swaps;
  }

  std::int64_t fake_index = 0;
  for (int k = 0; k < 3; ++k) {
    for (std::int64_t i = 0; i < quotas[k]; ++i, ++fake_index) {
      Rng rng = Rng::keyed(config.seed, {kSwapTag, static_cast<std::uint64_t>(fake_index)});
      write_sample(synth_swap(config, pools[k], rng), split_names[k]);
    }
  }

  // Manifest and config, one JSON object per line.
  std::ofstream mf(root / "manifest.jsonl", std::ios::binary);
  if (!mf) throw IoError("cannot write manifest under " + root.string());
  for (const auto& r : manifest.records) mf << record_to_json(r).dump() << "\n";
  mf.close();

  json cfg{{"format_version", 1},
           {"identities", config.identities},
           {"images_per_identity", config.images_per_identity},
           {"swaps", config.swaps},
           {"image_size", config.image_size},
           {"patch_size", config.patch_size},
           {"seed", config.seed}};
  std::ofstream cf(root / "corpus_config.json", std::ios::binary);
  cf << cfg.dump(2) << "\n";
  return manifest;
}

CorpusManifest load_manifest(const std::filesystem::path& root) {
  std::ifstream cf(root / "corpus_config.json");
  if (!cf) throw IoError("missing corpus_config.json under " + root.string());
  json cfg = json::parse(cf, nullptr, true);
  CorpusManifest manifest;
  manifest.root = root;
  manifest.config.identities = cfg.at("identities").get<std::int64_t>();
  manifest.config.images_per_identity = cfg.at("images_per_identity").get<std::int64_t>();
  manifest.config.swaps = cfg.at("swaps").get<std::int64_t>();
  manifest.config.image_size = cfg.at("image_size").get<std::int64_t>();
  manifest.config.patch_size = cfg.at("patch_size").get<std::int64_t>();
  manifest.config.seed = cfg.at("seed").get<std::uint64_t>();

  std::ifstream mf(root / "manifest.jsonl");
  if (!mf) throw IoError("missing manifest.jsonl under " + root.string());
  std::string line;
  while (std::getline(mf, line)) {
    if (line.empty()) continue;
    manifest.records.push_back(record_from_json(json::parse(line)));
  }
  return manifest;
}

ForgerySample load_sample(const CorpusManifest& manifest, std::int64_t sample_id) {
  const ManifestRecord& r = manifest.at(sample_id);
  ForgerySample s;
  auto read = [&](const std::string& rel) {
    try {
      return read_png(manifest.root / rel);
    } catch (const IoError& e) {
      throw IoError("sample " + std::to_string(sample_id) + ": " + e.what());
    }
  };
  s.forgery = read(r.forgery);
  s.source = read(r.source);
  s.target = read(r.target);
  s.gt_mask = read(r.mask);
  s.source_identity = r.source_identity;
  s.target_identity = r.target_identity;
  s.fake = r.label == "fake";
  return s;
}

std::uint64_t corpus_hash(const std::filesystem::path& root) {
  std::ifstream mf(root / "manifest.jsonl", std::ios::binary);
  if (!mf) throw IoError("missing manifest.jsonl under " + root.string());
  std::stringstream ss;
  ss << mf.rdbuf();
  const std::string bytes = ss.str();
  return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace dfrec
