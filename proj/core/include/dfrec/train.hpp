#pragma once

#include <json.hpp>

#include <fstream>
#include <optional>

#include "dfrec/checkpoint.hpp"
#include "dfrec/corpus.hpp"
#include "dfrec/metrics.hpp"
#include "dfrec/pipeline.hpp"
#include "dfrec/provider_build.hpp"

namespace dfrec {

struct TrainConfig {
  std::int64_t batch = 16;
  std::int64_t steps = 2000;
  double lr = 1e-4;
  double weight_decay = 1e-5;
  double mask_ratio = 0.5;
  LossWeights weights;
  std::uint64_t seed = 0;
  double real_fraction = 0.5;  // real:fake ratio within a batch (0.5 = 1:1)
  double bi_prob = 0.5;        // online BI augmentation probability for reals
  std::int64_t val_every = 100;
  std::int64_t ckpt_every = 100;
  std::int64_t val_samples = 16;
  std::int64_t ism_warmup_steps = 0;
  std::string provider = "desk";
  std::string precision = "f32";

  void validate() const {
    weights.validate();
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (lr <= 0.0) throw ConfigError("learning rate must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight decay must be nonnegative");
    if (mask_ratio <= 0.0 || mask_ratio >= 1.0) throw ConfigError("mask ratio must lie in (0,1)");
    if (real_fraction < 0.0 || real_fraction > 1.0) throw ConfigError("real fraction must lie in [0,1]");
    if (bi_prob < 0.0 || bi_prob > 1.0) throw ConfigError("BI probability must lie in [0,1]");
    if (provider != "desk" && provider != "external")
      throw ConfigError("provider must be 'desk' or 'external'");
    if (precision != "f32" && precision != "f64") throw ConfigError("precision must be 'f32' or 'f64'");
  }
};

struct CheckpointMeta {
  std::int64_t step = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t corpus_hash = 0;
  std::uint64_t provider_hash = 0;
  std::string precision = "f32";
  nlohmann::json run_config;  // the effective RunConfig this model was trained with
};

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const Pipeline<T>& pipeline, std::int64_t step,
                     const CheckpointMeta& meta) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  auto& params = const_cast<ParamStore<T>&>(pipeline.params);
  save_params(dir / "ism.bin", params, "ism.");
  save_params(dir / "sirm.bin", params, "sirm.");
  save_params(dir / "tirm.bin", params, "tirm.");
  save_optimizer(dir / "optimizer.state", params, step);
  nlohmann::json j{{"format_version", 1},
                   {"step", step},
                   {"config_hash", meta.config_hash},
                   {"corpus_hash", meta.corpus_hash},
                   {"provider_hash", meta.provider_hash},
                   {"precision", meta.precision},
                   {"run_config", meta.run_config}};
  std::ofstream f(dir / "manifest.json");
  if (!f) throw IoError("cannot write checkpoint manifest under " + dir.string());
  f << j.dump(2) << "\n";
}

inline CheckpointMeta read_checkpoint_meta(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw IoError("missing checkpoint manifest under " + dir.string());
  nlohmann::json j = nlohmann::json::parse(f);
  CheckpointMeta meta;
  meta.step = j.at("step").get<std::int64_t>();
  meta.config_hash = j.at("config_hash").get<std::uint64_t>();
  meta.corpus_hash = j.at("corpus_hash").get<std::uint64_t>();
  meta.provider_hash = j.at("provider_hash").get<std::uint64_t>();
  meta.precision = j.at("precision").get<std::string>();
  meta.run_config = j.at("run_config");
  return meta;
}

template <typename T>
void load_checkpoint_weights(const std::filesystem::path& dir, Pipeline<T>& pipeline) {
  load_params(dir / "ism.bin", pipeline.params);
  load_params(dir / "sirm.bin", pipeline.params);
  load_params(dir / "tirm.bin", pipeline.params);
}

// Joint training of ISM + SIRM + TIRM against the quadruple loss with online
// BI augmentation. All randomness is keyed by (seed, purpose, step, slot), so
// a resumed run replays the exact continuation of an uninterrupted one.
template <typename T>
class Trainer {
 public:
  static constexpr std::uint64_t kBatchTag = 0xba7c4;
  static constexpr std::uint64_t kBiTag = 0xb1b1;
  static constexpr std::uint64_t kNuTag = 0x22aa;
  static constexpr std::uint64_t kValTag = 0x7a1;

  Trainer(const ModelSpec& model_spec, const TrainConfig& cfg, const CorpusManifest& corpus,
          const DeskProvider<T>* provider, CheckpointMeta meta)
      : cfg_(cfg), corpus_(corpus), provider_(provider), meta_(std::move(meta)),
        pipeline_(Pipeline<T>::create(model_spec, cfg.seed)),
        opt_(AdamWConfig{.lr = cfg.lr, .weight_decay = cfg.weight_decay, .clip_norm = 1.0}) {
    cfg_.validate();
    provider_hash_at_start_ = provider_->weight_hash();
    cache_training_split();
  }

  Pipeline<T>& pipeline() { return pipeline_; }
  const Pipeline<T>& pipeline() const { return pipeline_; }
  std::int64_t step() const { return step_; }

  void resume_from(const std::filesystem::path& dir) {
    const CheckpointMeta meta = read_checkpoint_meta(dir);
    if (meta.corpus_hash != meta_.corpus_hash)
      throw StateError("checkpoint was trained on a different corpus (hash mismatch)");
    if (meta.provider_hash != meta_.provider_hash)
      throw StateError("checkpoint was trained with a different provider (hash mismatch)");
    if (meta.config_hash != meta_.config_hash)
      throw StateError("checkpoint config hash does not match the requested run config");
    load_checkpoint_weights(dir, pipeline_);
    step_ = load_optimizer(dir / "optimizer.state", pipeline_.params);
    opt_.set_step_count(step_);
  }

  // One optimization step; returns the batch-mean loss report.
  LossReport step_once() {
    const std::int64_t step = step_;
    const bool warmup = step < cfg_.ism_warmup_steps;
    const auto batch = make_batch(step);

    pipeline_.params.zero_grads();
    LossReport report;
    for (std::size_t slot = 0; slot < batch.size(); ++slot) {
      const ForgerySample& s = *batch[slot];
      Rng nu_rng = Rng::keyed(cfg_.seed, {kNuTag, static_cast<std::uint64_t>(step), slot});
      const std::vector<double> nu = mask_noise(nu_rng, pipeline_.spec.mae.tokens());
      Graph<T> g;
      SampleLoss<T> sl = forward_losses(pipeline_, g, *provider_, image_to_chw<T>(s.forgery),
                                        image_to_chw<T>(s.source), image_to_chw<T>(s.target), s.fake,
                                        cfg_.weights, cfg_.mask_ratio, nu, warmup);
      g.backward(sl.total, T(1) / T(batch.size()));
      g.harvest_param_grads();
      report += sl.report;
    }
    report /= static_cast<double>(batch.size());
    if (!std::isfinite(report.total))
      throw NumericError("non-finite batch loss at step " + std::to_string(step) + ": " + report.to_json().dump());
    if (!warmup && !report.consistent(cfg_.weights))
      throw NumericError("loss report inconsistent at step " + std::to_string(step));
    opt_.step(pipeline_.params);
    ++step_;
    return report;
  }

  struct RunResult {
    std::vector<std::int64_t> checkpoint_steps;
    double last_val_idsim = 0.0;
  };

  // Runs to cfg.steps, logging every step and checkpointing every K steps.
  RunResult run(const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    std::ofstream log(out_dir / "train_log.jsonl", step_ > 0 ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot write train_log.jsonl under " + out_dir.string());

    RunResult result;
    while (step_ < cfg_.steps) {
      LossReport report = step_once();
      nlohmann::json line = report.to_json();
      line["step"] = step_;
      if (step_ % cfg_.val_every == 0 || step_ == cfg_.steps) {
        if (provider_->weight_hash() != provider_hash_at_start_)
          throw StateError("provider parameters changed during training");
        const double val = validate_idsim(step_);
        if (val == val) {
          line["val_idsim"] = val;
          result.last_val_idsim = val;
        }
      }
      log << line.dump() << "\n";
      log.flush();
      if (step_ % cfg_.ckpt_every == 0 || step_ == cfg_.steps) {
        CheckpointMeta meta = meta_;
        meta.step = step_;
        save_checkpoint(out_dir, pipeline_, step_, meta);
        result.checkpoint_steps.push_back(step_);
      }
    }
    return result;
  }

  // Mean idsim(recovered target, true target) over a few validation records;
  // NaN when the corpus has no validation records.
  double validate_idsim(std::int64_t step) {
    const auto records = corpus_.select("val");
    if (records.empty()) return std::nan("");
    double acc = 0.0;
    std::int64_t n = 0;
    for (std::size_t i = 0; i < records.size() && n < cfg_.val_samples; ++i, ++n) {
      const ForgerySample s = load_sample(corpus_, records[i]->sample_id);
      RecoveryOutput rec = recover(pipeline_, s.forgery, cfg_.mask_ratio,
                                   Rng::keyed(cfg_.seed, {kValTag, static_cast<std::uint64_t>(step), i}).next_u64());
      acc += idsim(provider_->embed(rec.tgt_rec), provider_->embed(s.target));
    }
    return acc / static_cast<double>(n);
  }

 private:
  void cache_training_split() {
    for (const auto& r : corpus_.records) {
      if (r.split != "train") continue;
      cache_.push_back(load_sample(corpus_, r.sample_id));
      if (r.label == "real") real_idx_.push_back(cache_.size() - 1);
      else fake_idx_.push_back(cache_.size() - 1);
    }
    if (cache_.empty()) throw ConfigError("corpus train split is empty");
    const std::vector<std::string> splits = identity_splits(corpus_.config);
    for (std::int64_t id = 0; id < corpus_.config.identities; ++id)
      if (splits[static_cast<std::size_t>(id)] == "train") train_pool_.push_back(id);
  }

  std::vector<const ForgerySample*> make_batch(std::int64_t step) {
    Rng rng = Rng::keyed(cfg_.seed, {kBatchTag, static_cast<std::uint64_t>(step)});
    std::int64_t n_real = std::llround(static_cast<double>(cfg_.batch) * cfg_.real_fraction);
    if (fake_idx_.empty()) n_real = cfg_.batch;
    if (real_idx_.empty()) n_real = 0;
    bi_holder_.clear();
    std::vector<const ForgerySample*> batch;
    for (std::int64_t slot = 0; slot < cfg_.batch; ++slot) {
      if (slot < n_real) {
        const bool augment = train_pool_.size() >= 2 && rng.uniform() < cfg_.bi_prob;
        if (augment) {
          Rng bi = Rng::keyed(cfg_.seed, {kBiTag, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(slot)});
          bi_holder_.push_back(synth_swap(corpus_.config, train_pool_, bi));
          batch.push_back(&bi_holder_.back());
        } else {
          batch.push_back(&cache_[real_idx_[rng.next_below(real_idx_.size())]]);
        }
      } else {
        batch.push_back(&cache_[fake_idx_[rng.next_below(fake_idx_.size())]]);
      }
    }
    return batch;
  }

  TrainConfig cfg_;
  const CorpusManifest& corpus_;
  const DeskProvider<T>* provider_;
  CheckpointMeta meta_;
  Pipeline<T> pipeline_;
  AdamW<T> opt_;
  std::int64_t step_ = 0;
  std::uint64_t provider_hash_at_start_ = 0;
  std::vector<ForgerySample> cache_;
  std::vector<std::size_t> real_idx_, fake_idx_;
  std::vector<std::int64_t> train_pool_;
  std::deque<ForgerySample> bi_holder_;
};

}  // namespace dfrec
