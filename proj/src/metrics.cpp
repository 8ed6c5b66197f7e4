// Copyright 2026 The oodforge Authors.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.

#include "oodforge/metrics.hpp"

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace oodforge::metrics {

using nlohmann::json;

ProbabilityBatch::ProbabilityBatch(Matrix r) : rows(std::move(r)) {
  check_finite(rows, "ProbabilityBatch");
  check(rows.rows() >= 1 && rows.cols() >= 1, "ProbabilityBatch: empty");
  if (rows.minCoeff() < -1e-12 || rows.maxCoeff() > 1.0 + 1e-12)
    throw InvalidArgument("ProbabilityBatch: entries outside [0, 1]");
  for (Eigen::Index i = 0; i < rows.rows(); ++i)
    if (std::abs(rows.row(i).sum() - 1.0) > 1e-5)
      throw InvalidArgument("ProbabilityBatch: row " + std::to_string(i) +
                            " does not sum to 1");
}

EnsemblePrediction::EnsemblePrediction(std::vector<ProbabilityBatch> m)
    : members(std::move(m)) {
  check(!members.empty(), "EnsemblePrediction: T must be >= 1");
  for (const auto& p : members)
    check(p.rows.rows() == members.front().rows.rows() &&
              p.rows.cols() == members.front().rows.cols(),
          "EnsemblePrediction: member shapes differ");
}

Matrix EnsemblePrediction::mean() const {
  Matrix m = Matrix::Zero(size(), num_classes());
  for (const auto& p : members) m += p.rows;
  return m / static_cast<double>(members.size());
}

void ScoreSet::validate() const {
  check(id_scores.size() > 0 && ood_scores.size() > 0, "ScoreSet: empty side");
  check(id_scores.allFinite() && ood_scores.allFinite(), "ScoreSet: non-finite scores");
}

std::string ScoreSet::to_json() const {
  json j{{"id_scores", std::vector<double>(id_scores.data(), id_scores.data() + id_scores.size())},
         {"ood_scores", std::vector<double>(ood_scores.data(), ood_scores.data() + ood_scores.size())},
         {"orientation", orientation == ScoreOrientation::higher_is_ood
                             ? "higher_is_ood" : "lower_is_ood"}};
  return j.dump(2);
}

std::string CalibrationReport::to_json() const {
  json j{{"bin_edges", bin_edges},
         {"bin_confidence", bin_confidence},
         {"bin_accuracy", bin_accuracy},
         {"bin_counts", bin_counts},
         {"ece", ece}};
  return j.dump(2);
}

namespace {

double row_entropy(const Eigen::Ref<const Eigen::RowVectorXd>& p) {
  double h = 0.0;
  for (Eigen::Index j = 0; j < p.size(); ++j)
    if (p(j) > 0.0) h -= p(j) * std::log(p(j));
  return h;
}

}  // namespace

Vector shannon_entropy(const ProbabilityBatch& p) {
  Vector h(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) h(i) = row_entropy(p.rows.row(i));
  return h;
}

Vector softmax_confidence(const ProbabilityBatch& p) {
  return p.rows.rowwise().maxCoeff();
}

Vector mutual_information(const EnsemblePrediction& e) {
  Matrix mean = e.mean();
  Vector mi(e.size());
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    double avg_h = 0.0;
    for (const auto& m : e.members) avg_h += row_entropy(m.rows.row(i));
    mi(i) = row_entropy(mean.row(i)) - avg_h / e.num_members();
    // MI is non-negative in exact arithmetic; snap rounding dust to zero.
    if (mi(i) < 0.0 && mi(i) > -1e-9) mi(i) = 0.0;
  }
  return mi;
}

Vector predictive_entropy(const EnsemblePrediction& e) {
  Matrix mean = e.mean();
  Vector h(e.size());
  for (Eigen::Index i = 0; i < e.size(); ++i) h(i) = row_entropy(mean.row(i));
  return h;
}

Var lpips_terms(const Var& x1, const Var& x2, const FeatureExtractor& fx) {
  check(x1.rows() == x2.rows() && x1.cols() == x2.cols(), "lpips: shape mismatch");
  check(x1.cols() == fx.input_shape.size(), "lpips: input does not match extractor shape");
  check(!fx.tap_layers.empty(), "lpips: extractor has no tap points");
  Rng rng(0);  // extractor has no stochastic layers; eval mode
  auto acts1 = fx.net->forward_all(x1, false, rng);
  auto acts2 = fx.net->forward_all(x2, false, rng);
  Var total;
  for (std::size_t t = 0; t < fx.tap_layers.size(); ++t) {
    const ImageShape& sh = fx.tap_shapes[t];
    Var f1 = ag::channel_unit_normalize(acts1[fx.tap_layers[t]], sh);
    Var f2 = ag::channel_unit_normalize(acts2[fx.tap_layers[t]], sh);
    Var d = ag::sub(f1, f2);
    Var sq = ag::row_sum(ag::mul(d, d));
    Var term = ag::scale(sq, 1.0 / (sh.height * sh.width));
    total = total.defined() ? ag::add(total, term) : term;
  }
  return total;
}

Vector lpips(const ImageBatch& x1, const ImageBatch& x2, const FeatureExtractor& fx) {
  check(x1.shape == x2.shape, "lpips: image shape mismatch");
  check(x1.range_lo >= fx.range_lo - 1e-9 && x1.range_hi <= fx.range_hi + 1e-9 &&
            x2.range_lo >= fx.range_lo - 1e-9 && x2.range_hi <= fx.range_hi + 1e-9,
        "lpips: input range does not match extractor's declared range");
  Var v = lpips_terms(Var(x1.pixels), Var(x2.pixels), fx);
  return v.value().col(0);
}

GaussianClassStats fit_gaussian_stats(const Matrix& features,
                                      const std::vector<int>& labels, double ridge) {
  const Eigen::Index m = features.rows(), d = features.cols();
  check(m >= 2 && d >= 1, "fit_gaussian_stats: need at least two samples");
  check(static_cast<Eigen::Index>(labels.size()) == m,
        "fit_gaussian_stats: label count mismatch");
  check_finite(features, "fit_gaussian_stats");
  const int k = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<long> counts(k, 0);
  for (int l : labels) {
    check(l >= 0, "fit_gaussian_stats: negative label");
    counts[l]++;
  }
  for (int c = 0; c < k; ++c)
    if (counts[c] < 2)
      throw InvalidArgument("fit_gaussian_stats: class " + std::to_string(c) +
                            " has fewer than 2 samples");

  GaussianClassStats out;
  out.class_means = Matrix::Zero(k, d);
  for (Eigen::Index i = 0; i < m; ++i) out.class_means.row(labels[i]) += features.row(i);
  for (int c = 0; c < k; ++c) out.class_means.row(c) /= static_cast<double>(counts[c]);

  Matrix cov = Matrix::Zero(d, d);
  for (Eigen::Index i = 0; i < m; ++i) {
    Eigen::RowVectorXd r = features.row(i) - out.class_means.row(labels[i]);
    cov += r.transpose() * r;
  }
  cov /= static_cast<double>(m);

  out.ridge = ridge >= 0.0 ? ridge : 1e-6 * cov.trace() / static_cast<double>(d);
  out.shared_covariance = cov + out.ridge * Matrix::Identity(d, d);
  out.shared_covariance = 0.5 * (out.shared_covariance + out.shared_covariance.transpose());

  Eigen::SelfAdjointEigenSolver<Matrix> es(out.shared_covariance);
  const double min_ev = es.eigenvalues().minCoeff();
  const double max_ev = es.eigenvalues().maxCoeff();
  if (min_ev <= 0.0 || max_ev / min_ev > 1e12)
    throw NumericError("fit_gaussian_stats: covariance singular after ridge (condition "
                       "number " + std::to_string(max_ev / std::max(min_ev, 1e-300)) + ")");
  out.precision = es.eigenvectors() *
                  es.eigenvalues().cwiseInverse().asDiagonal() *
                  es.eigenvectors().transpose();
  return out;
}

Vector mahalanobis_score(const Matrix& features, const GaussianClassStats& stats) {
  check(features.cols() == stats.class_means.cols(),
        "mahalanobis_score: feature dimension mismatch");
  const Eigen::Index n = features.rows(), k = stats.class_means.rows();
  Vector score(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < k; ++c) {
      Eigen::RowVectorXd diff = features.row(i) - stats.class_means.row(c);
      best = std::min(best, (diff * stats.precision * diff.transpose())(0, 0));
    }
    score(i) = std::max(best, 0.0);
  }
  return score;
}

namespace {

// Scores oriented so that higher means more OoD.
std::pair<Vector, Vector> oriented(const ScoreSet& s) {
  if (s.orientation == ScoreOrientation::higher_is_ood)
    return {s.id_scores, s.ood_scores};
  return {-s.id_scores, -s.ood_scores};
}

}  // namespace

double auroc(const ScoreSet& s) {
  s.validate();
  auto [id, ood] = oriented(s);
  // Mann-Whitney U via joint ranking; ties get 1/2 credit.
  std::vector<double> id_sorted(id.data(), id.data() + id.size());
  std::sort(id_sorted.begin(), id_sorted.end());
  double u = 0.0;
  for (Eigen::Index i = 0; i < ood.size(); ++i) {
    auto lo = std::lower_bound(id_sorted.begin(), id_sorted.end(), ood(i));
    auto hi = std::upper_bound(id_sorted.begin(), id_sorted.end(), ood(i));
    u += static_cast<double>(lo - id_sorted.begin()) + 0.5 * (hi - lo);
  }
  return u / (static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

double auprc(const ScoreSet& s) {
  s.validate();
  auto [id, ood] = oriented(s);
  // Positive class = OoD. Sweep thresholds in decreasing score order and
  // accumulate AP = sum (R_i - R_{i-1}) * P_i over distinct thresholds.
  struct Entry { double score; bool positive; };
  std::vector<Entry> all;
  all.reserve(id.size() + ood.size());
  for (Eigen::Index i = 0; i < id.size(); ++i) all.push_back({id(i), false});
  for (Eigen::Index i = 0; i < ood.size(); ++i) all.push_back({ood(i), true});
  std::sort(all.begin(), all.end(),
            [](const Entry& a, const Entry& b) { return a.score > b.score; });
  const double total_pos = static_cast<double>(ood.size());
  double tp = 0.0, fp = 0.0, ap = 0.0, prev_recall = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) {
      if (all[j].positive) tp += 1.0; else fp += 1.0;
      ++j;
    }
    const double recall = tp / total_pos;
    const double precision = tp / (tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

CalibrationReport expected_calibration_error(const Vector& confidences,
                                             const std::vector<bool>& correct,
                                             int bins) {
  check(bins >= 1, "ece: bins must be >= 1");
  check(static_cast<std::size_t>(confidences.size()) == correct.size(),
        "ece: confidence/correctness length mismatch");
  const Eigen::Index n = confidences.size();
  check(n >= 1, "ece: empty input");
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(confidences(i) >= 0.0 && confidences(i) <= 1.0))
      throw InvalidArgument("ece: confidence outside [0, 1]");

  CalibrationReport r;
  r.bin_edges.resize(bins + 1);
  for (int b = 0; b <= bins; ++b) r.bin_edges[b] = static_cast<double>(b) / bins;
  r.bin_confidence.assign(bins, 0.0);
  r.bin_accuracy.assign(bins, 0.0);
  r.bin_counts.assign(bins, 0);

  for (Eigen::Index i = 0; i < n; ++i) {
    // Right-closed bins (lo, hi]; confidence 0 lands in the first bin.
    int b = static_cast<int>(std::ceil(confidences(i) * bins)) - 1;
    b = std::clamp(b, 0, bins - 1);
    r.bin_counts[b]++;
    r.bin_confidence[b] += confidences(i);
    r.bin_accuracy[b] += correct[i] ? 1.0 : 0.0;
  }
  double ece = 0.0;
  for (int b = 0; b < bins; ++b) {
    if (r.bin_counts[b] == 0) continue;
    r.bin_confidence[b] /= r.bin_counts[b];
    r.bin_accuracy[b] /= r.bin_counts[b];
    ece += (static_cast<double>(r.bin_counts[b]) / n) *
           std::abs(r.bin_accuracy[b] - r.bin_confidence[b]);
  }
  r.ece = ece;
  return r;
}

double frechet_distance(const Matrix& a, const Matrix& b) {
  check(a.cols() == b.cols(), "frechet_distance: dimension mismatch");
  check(a.rows() >= 2 && b.rows() >= 2, "frechet_distance: need >= 2 samples per side");
  check_finite(a, "frechet_distance");
  check_finite(b, "frechet_distance");
  const Eigen::Index d = a.cols();

  auto moments = [d](const Matrix& f) {
    Eigen::RowVectorXd mu = f.colwise().mean();
    Matrix centered = f.rowwise() - mu;
    Matrix cov = centered.transpose() * centered / static_cast<double>(f.rows() - 1);
    return std::make_pair(mu, cov);
  };
  auto [mu_a, cov_a] = moments(a);
  auto [mu_b, cov_b] = moments(b);
  check_finite(cov_a, "frechet_distance covariance");
  check_finite(cov_b, "frechet_distance covariance");

  // Tr((Sa Sb)^1/2) = Tr((Sa^1/2 Sb Sa^1/2)^1/2); the inner matrix is
  // symmetric PSD so a self-adjoint eigendecomposition suffices.
  Eigen::SelfAdjointEigenSolver<Matrix> esa(0.5 * (cov_a + cov_a.transpose()));
  Vector eva = esa.eigenvalues().cwiseMax(0.0);
  Matrix sqrt_a = esa.eigenvectors() * eva.cwiseSqrt().asDiagonal() *
                  esa.eigenvectors().transpose();
  Matrix inner = sqrt_a * cov_b * sqrt_a;
  Eigen::SelfAdjointEigenSolver<Matrix> esi(0.5 * (inner + inner.transpose()));
  const double scale = std::max(1.0, esi.eigenvalues().cwiseAbs().maxCoeff());
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) {
    double ev = esi.eigenvalues()(i);
    if (ev < -1e-8 * scale)
      throw NumericError("frechet_distance: matrix square root failed (eigenvalue " +
                         std::to_string(ev) + ")");
    tr_sqrt += std::sqrt(std::max(ev, 0.0));
  }
  double dist = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
  return std::max(dist, 0.0);
}

}  // namespace oodforge::metrics
