#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dfrec/image.hpp"

namespace dfrec {

// Cosine similarity between identity embeddings, in [-1, 1].
double idsim(std::span<const double> a, std::span<const double> b);

struct EvalRecord {
  std::int64_t sample_id = 0;
  double idsim_tgt = 0.0;           // recovered target vs true target
  double idsim_input_vs_rec = 0.0;  // input vs recovered target (drives Acc_id)
  bool fake_label = false;
  bool predicted_fake = false;  // real iff idsim_input_vs_rec strictly exceeds the threshold
};

// Predicted real iff similarity strictly exceeds `threshold` ("surpasses").
inline bool predicted_real(double similarity, double threshold) { return similarity > threshold; }

// Fraction of records whose thresholded prediction matches the label.
double acc_id(const std::vector<EvalRecord>& records, double threshold = 0.9);

// Gaussian statistics of an embedding set: sample mean and unbiased
// covariance.
struct EmbedStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  std::int64_t count = 0;
};

EmbedStats embed_stats(const std::vector<std::vector<double>>& embeddings);

// Frechet distance between Gaussian statistics:
//   |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)).
// The matrix square root goes through a symmetric eigendecomposition of
// sqrt(Sa) Sb sqrt(Sa); eigenvalues in [-1e-6, 0) are clipped to zero and
// anything more negative is a numeric error.
double frechet_distance(const EmbedStats& a, const EmbedStats& b);

// Fig. 1-style identity-similarity samples.
struct SimilaritySample {
  std::string pair_kind;  // "source" | "target" | "unrelated"
  double similarity = 0.0;
};

struct SimilaritySummary {
  double mean_source = 0.0;
  double mean_target = 0.0;
  double mean_unrelated = 0.0;
};

SimilaritySummary summarize(const std::vector<SimilaritySample>& samples);

}  // namespace dfrec
