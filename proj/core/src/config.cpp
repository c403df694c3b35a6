#include "dfrec/config.hpp"

#include <fstream>
#include <set>

namespace dfrec {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& context) {
  if (!obj.is_object()) throw ConfigError("config section '" + context + "' must be a JSON object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) throw ConfigError("unknown config key '" + key + "' in " + context);
}

template <typename V>
void maybe(const json& obj, const char* key, V& out) {
  if (obj.contains(key)) out = obj.at(key).get<V>();
}

}  // namespace

RunConfig RunConfig::defaults() { return RunConfig{}; }

void RunConfig::propagate_seed() {
  corpus.seed = seed;
  train.seed = seed;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  check_keys(j, {"corpus", "model", "train", "eval", "seed"}, "top level");
  maybe(j, "seed", c.seed);

  if (j.contains("corpus")) {
    const json& jc = j.at("corpus");
    check_keys(jc, {"identities", "images_per_identity", "swaps", "image_size", "patch_size"}, "corpus");
    maybe(jc, "identities", c.corpus.identities);
    maybe(jc, "images_per_identity", c.corpus.images_per_identity);
    maybe(jc, "swaps", c.corpus.swaps);
    maybe(jc, "image_size", c.corpus.image_size);
    maybe(jc, "patch_size", c.corpus.patch_size);
  }
  if (j.contains("model")) {
    const json& jm = j.at("model");
    check_keys(jm, {"ism", "sirm", "mae"}, "model");
    if (jm.contains("ism")) {
      const json& ji = jm.at("ism");
      check_keys(ji, {"stage_widths", "dilations", "detach_cls"}, "model.ism");
      maybe(ji, "stage_widths", c.ism.stage_widths);
      maybe(ji, "dilations", c.ism.dilations);
      maybe(ji, "detach_cls", c.ism.detach_cls);
    }
    if (jm.contains("sirm")) {
      const json& js = jm.at("sirm");
      check_keys(js, {"widths", "gate_width"}, "model.sirm");
      maybe(js, "widths", c.sirm.widths);
      maybe(js, "gate_width", c.sirm.gate_width);
    }
    if (jm.contains("mae")) {
      const json& ja = jm.at("mae");
      check_keys(ja, {"enc_depth", "enc_width", "enc_heads", "dec_depth", "dec_width", "dec_heads", "mlp_ratio"},
                 "model.mae");
      maybe(ja, "enc_depth", c.mae.enc_depth);
      maybe(ja, "enc_width", c.mae.enc_width);
      maybe(ja, "enc_heads", c.mae.enc_heads);
      maybe(ja, "dec_depth", c.mae.dec_depth);
      maybe(ja, "dec_width", c.mae.dec_width);
      maybe(ja, "dec_heads", c.mae.dec_heads);
      maybe(ja, "mlp_ratio", c.mae.mlp_ratio);
    }
  }
  if (j.contains("train")) {
    const json& jt = j.at("train");
    check_keys(jt,
               {"batch", "steps", "lr", "weight_decay", "mask_ratio", "alpha", "beta", "lambda1", "lambda2",
                "lambda3", "aux_cls_weight", "real_fraction", "bi_prob", "val_every", "ckpt_every", "val_samples",
                "ism_warmup_steps", "provider", "precision"},
               "train");
    maybe(jt, "batch", c.train.batch);
    maybe(jt, "steps", c.train.steps);
    maybe(jt, "lr", c.train.lr);
    maybe(jt, "weight_decay", c.train.weight_decay);
    maybe(jt, "mask_ratio", c.train.mask_ratio);
    maybe(jt, "alpha", c.train.weights.alpha);
    maybe(jt, "beta", c.train.weights.beta);
    maybe(jt, "lambda1", c.train.weights.lambda1);
    maybe(jt, "lambda2", c.train.weights.lambda2);
    maybe(jt, "lambda3", c.train.weights.lambda3);
    maybe(jt, "aux_cls_weight", c.train.weights.aux_cls);
    maybe(jt, "real_fraction", c.train.real_fraction);
    maybe(jt, "bi_prob", c.train.bi_prob);
    maybe(jt, "val_every", c.train.val_every);
    maybe(jt, "ckpt_every", c.train.ckpt_every);
    maybe(jt, "val_samples", c.train.val_samples);
    maybe(jt, "ism_warmup_steps", c.train.ism_warmup_steps);
    maybe(jt, "provider", c.train.provider);
    maybe(jt, "precision", c.train.precision);
  }
  if (j.contains("eval")) {
    const json& je = j.at("eval");
    check_keys(je, {"threshold", "perturb", "split"}, "eval");
    maybe(je, "threshold", c.eval.threshold);
    maybe(je, "perturb", c.eval.perturb);
    maybe(je, "split", c.eval.split);
  }
  c.propagate_seed();
  c.validate();
  return c;
}

RunConfig RunConfig::from_json_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config file: " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("config parse error in " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

json RunConfig::to_json() const {
  return json{
      {"corpus",
       {{"identities", corpus.identities},
        {"images_per_identity", corpus.images_per_identity},
        {"swaps", corpus.swaps},
        {"image_size", corpus.image_size},
        {"patch_size", corpus.patch_size}}},
      {"model",
       {{"ism", {{"stage_widths", ism.stage_widths}, {"dilations", ism.dilations}, {"detach_cls", ism.detach_cls}}},
        {"sirm", {{"widths", sirm.widths}, {"gate_width", sirm.gate_width}}},
        {"mae",
         {{"enc_depth", mae.enc_depth},
          {"enc_width", mae.enc_width},
          {"enc_heads", mae.enc_heads},
          {"dec_depth", mae.dec_depth},
          {"dec_width", mae.dec_width},
          {"dec_heads", mae.dec_heads},
          {"mlp_ratio", mae.mlp_ratio}}}}},
      {"train",
       {{"batch", train.batch},
        {"steps", train.steps},
        {"lr", train.lr},
        {"weight_decay", train.weight_decay},
        {"mask_ratio", train.mask_ratio},
        {"alpha", train.weights.alpha},
        {"beta", train.weights.beta},
        {"lambda1", train.weights.lambda1},
        {"lambda2", train.weights.lambda2},
        {"lambda3", train.weights.lambda3},
        {"aux_cls_weight", train.weights.aux_cls},
        {"real_fraction", train.real_fraction},
        {"bi_prob", train.bi_prob},
        {"val_every", train.val_every},
        {"ckpt_every", train.ckpt_every},
        {"val_samples", train.val_samples},
        {"ism_warmup_steps", train.ism_warmup_steps},
        {"provider", train.provider},
        {"precision", train.precision}}},
      {"eval", {{"threshold", eval.threshold}, {"perturb", eval.perturb}, {"split", eval.split}}},
      {"seed", seed}};
}

std::uint64_t RunConfig::hash() const {
  const std::string dump = to_json().dump();
  return fnv1a64(dump.data(), dump.size());
}

ModelSpec RunConfig::model_spec() const {
  ModelSpec spec;
  spec.ism = ism;
  spec.sirm = sirm;
  spec.mae = mae;
  spec.mae.image_size = corpus.image_size;
  spec.mae.patch = corpus.patch_size;
  spec.mae.ft_dim = sirm.ft_dim();
  spec.validate();
  return spec;
}

void RunConfig::validate() const {
  corpus.validate();
  train.validate();
  eval.validate();
  model_spec();  // validates cross-module consistency
}

}  // namespace dfrec
