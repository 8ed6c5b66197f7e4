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

#ifndef OODFORGE_METRICS_HPP
#define OODFORGE_METRICS_HPP

#include "oodforge/data.hpp"
#include "oodforge/nn.hpp"

#include <memory>
#include <string>
#include <vector>

namespace oodforge::metrics {

using ag::ImageShape;
using ag::Var;
using data::ImageBatch;

/// [N, K] row-stochastic matrix. Validated on construction.
struct ProbabilityBatch {
  Matrix rows;
  explicit ProbabilityBatch(Matrix r);
  Eigen::Index size() const { return rows.rows(); }
  Eigen::Index num_classes() const { return rows.cols(); }
};

/// T member predictions over the same batch; substrate of the MI estimate.
struct EnsemblePrediction {
  std::vector<ProbabilityBatch> members;
  explicit EnsemblePrediction(std::vector<ProbabilityBatch> m);
  Eigen::Index size() const { return members.front().size(); }
  Eigen::Index num_classes() const { return members.front().num_classes(); }
  int num_members() const { return static_cast<int>(members.size()); }
  Matrix mean() const;
};

enum class ScoreOrientation { higher_is_ood, lower_is_ood };

struct ScoreSet {
  Vector id_scores;
  Vector ood_scores;
  ScoreOrientation orientation = ScoreOrientation::higher_is_ood;
  void validate() const;
  std::string to_json() const;
};

struct GaussianClassStats {
  Matrix class_means;       // [K, d]
  Matrix shared_covariance; // [d, d], ridge included
  Matrix precision;         // [d, d]
  double ridge = 0.0;
};

/// Differentiable feature backbone with declared tap points. The net is
/// shared, frozen or not per the caller; evaluation is deterministic.
struct FeatureExtractor {
  std::string backbone_id;
  std::shared_ptr<nn::Sequential> net;
  ImageShape input_shape;
  std::vector<int> tap_layers;
  std::vector<ImageShape> tap_shapes;
  double range_lo = -1.0;
  double range_hi = 1.0;
};

struct CalibrationReport {
  std::vector<double> bin_edges;       // B + 1 edges over [0, 1]
  std::vector<double> bin_confidence;  // 0 for empty bins
  std::vector<double> bin_accuracy;
  std::vector<long> bin_counts;
  double ece = 0.0;
  std::string to_json() const;
};

// ----- scalar uncertainty metrics (natural log throughout) -----
Vector shannon_entropy(const ProbabilityBatch& p);
Vector softmax_confidence(const ProbabilityBatch& p);
Vector mutual_information(const EnsemblePrediction& e);
Vector predictive_entropy(const EnsemblePrediction& e);

// ----- perceptual -----
/// Per-pair LPIPS: sum over taps of (1/(H_l W_l)) * || unit-normalized
/// feature difference ||^2, channel-unit normalization at each position.
Vector lpips(const ImageBatch& x1, const ImageBatch& x2, const FeatureExtractor& fx);
/// Differentiable form used inside generator losses; returns [N, 1].
Var lpips_terms(const Var& x1, const Var& x2, const FeatureExtractor& fx);

// ----- Mahalanobis -----
GaussianClassStats fit_gaussian_stats(const Matrix& features,
                                      const std::vector<int>& labels,
                                      double ridge = -1.0);  // <0: 1e-6*tr/d
Vector mahalanobis_score(const Matrix& features, const GaussianClassStats& stats);

// ----- detection metrics -----
double auroc(const ScoreSet& s);
double auprc(const ScoreSet& s);

// ----- calibration -----
CalibrationReport expected_calibration_error(const Vector& confidences,
                                             const std::vector<bool>& correct,
                                             int bins = 15);

// ----- distributional -----
double frechet_distance(const Matrix& features_a, const Matrix& features_b);

}  // namespace oodforge::metrics

#endif  // OODFORGE_METRICS_HPP
