#include "dfrec/metrics.hpp"

#include <cmath>

#include "dfrec/error.hpp"

namespace dfrec {

double idsim(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || a.size() != b.size()) throw InputError("idsim: embeddings must have equal nonzero length");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw InputError("idsim: zero embedding vector");
  return std::min(1.0, std::max(-1.0, dot / (std::sqrt(na) * std::sqrt(nb))));
}

double acc_id(const std::vector<EvalRecord>& records, double threshold) {
  if (records.empty()) throw InputError("acc_id: empty record list");
  std::int64_t correct = 0;
  for (const auto& r : records) {
    const bool pred_fake = !predicted_real(r.idsim_input_vs_rec, threshold);
    if (pred_fake == r.fake_label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

EmbedStats embed_stats(const std::vector<std::vector<double>>& embeddings) {
  if (embeddings.size() < 2) throw InputError("embed_stats needs at least 2 embeddings");
  const auto n = static_cast<std::int64_t>(embeddings.size());
  const auto d = static_cast<std::int64_t>(embeddings[0].size());
  for (const auto& e : embeddings)
    if (static_cast<std::int64_t>(e.size()) != d) throw InputError("embed_stats: ragged embedding list");
  EmbedStats s;
  s.count = n;
  s.mean = Eigen::VectorXd::Zero(d);
  for (const auto& e : embeddings)
    for (std::int64_t i = 0; i < d; ++i) s.mean(i) += e[static_cast<std::size_t>(i)];
  s.mean /= static_cast<double>(n);
  s.cov = Eigen::MatrixXd::Zero(d, d);
  for (const auto& e : embeddings) {
    Eigen::VectorXd v(d);
    for (std::int64_t i = 0; i < d; ++i) v(i) = e[static_cast<std::size_t>(i)];
    v -= s.mean;
    s.cov.noalias() += v * v.transpose();
  }
  s.cov /= static_cast<double>(n - 1);
  return s;
}

namespace {

constexpr double kEigenClip = -1e-6;

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  Eigen::VectorXd vals = eig.eigenvalues();
  for (Eigen::Index i = 0; i < vals.size(); ++i) {
    if (vals(i) < kEigenClip) throw NumericError("covariance is not PSD within tolerance");
    vals(i) = std::sqrt(std::max(0.0, vals(i)));
  }
  return eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const EmbedStats& a, const EmbedStats& b) {
  if (a.mean.size() != b.mean.size()) throw InputError("frechet_distance: dimension mismatch");
  const Eigen::MatrixXd sa = psd_sqrt(a.cov);
  const Eigen::MatrixXd inner = sa * b.cov * sa;  // symmetric PSD up to drift
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (inner + inner.transpose()));
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
    const double v = eig.eigenvalues()(i);
    if (v < kEigenClip) throw NumericError("product covariance is not PSD within tolerance");
    tr_sqrt += std::sqrt(std::max(0.0, v));
  }
  const double mean_term = (a.mean - b.mean).squaredNorm();
  return mean_term + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
}

SimilaritySummary summarize(const std::vector<SimilaritySample>& samples) {
  SimilaritySummary s;
  double ns = 0, nt = 0, nu = 0;
  for (const auto& x : samples) {
    if (x.pair_kind == "source") {
      s.mean_source += x.similarity;
      ns += 1;
    } else if (x.pair_kind == "target") {
      s.mean_target += x.similarity;
      nt += 1;
    } else if (x.pair_kind == "unrelated") {
      s.mean_unrelated += x.similarity;
      nu += 1;
    } else {
      throw InputError("unknown pair kind: " + x.pair_kind);
    }
  }
  if (ns > 0) s.mean_source /= ns;
  if (nt > 0) s.mean_target /= nt;
  if (nu > 0) s.mean_unrelated /= nu;
  return s;
}

}  // namespace dfrec
