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

#ifndef OODFORGE_EVAL_HPP
#define OODFORGE_EVAL_HPP

#include "oodforge/data.hpp"
#include "oodforge/metrics.hpp"
#include "oodforge/models.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace oodforge::eval {

using data::ImageBatch;
using data::LabeledDataset;

/// Detector score orientations are fixed here: entropy, Mahalanobis, and
/// ensemble predictive entropy score OoD high; confidence scores OoD low.
enum class DetectorId {
  softmax_entropy,
  softmax_confidence,
  mahalanobis,
  ensemble_predictive_entropy
};
std::string to_string(DetectorId d);
DetectorId detector_from_string(const std::string& s);
metrics::ScoreOrientation detector_orientation(DetectorId d);

struct DetectionResult {
  DetectorId detector = DetectorId::softmax_entropy;
  std::string model_id;
  std::string id_dataset;
  std::string ood_dataset;
  double auroc = 0.0;
  double auprc = 0.0;
  metrics::ScoreSet scores;
  std::uint64_t seed = 0;
  std::string to_json() const;
};

/// Single-model detectors. `fit_data` (typically the train split) is only
/// consulted by the Mahalanobis detector, which fits class Gaussians on the
/// model's penultimate features.
DetectionResult run_detection(DetectorId det, const models::ClassifierHandle& model,
                              const ImageBatch& id_images, const ImageBatch& ood_images,
                              const std::string& id_name, const std::string& ood_name,
                              const LabeledDataset* fit_data = nullptr,
                              std::uint64_t seed = 0);

/// Ensemble detector (ensemble_predictive_entropy only).
DetectionResult run_detection(DetectorId det, const models::EnsembleHandle& ensemble,
                              const ImageBatch& id_images, const ImageBatch& ood_images,
                              const std::string& id_name, const std::string& ood_name,
                              std::uint64_t seed = 0);

/// Standard deviation of AUROC under the null (identical distributions),
/// from the Mann-Whitney U variance: sqrt((n1 + n2 + 1) / (12 n1 n2)).
double auroc_null_sigma(Eigen::Index n_id, Eigen::Index n_ood);

/// Calibration of argmax-vs-inherited-label correctness against softmax
/// confidence, 15 equal-width bins.
metrics::CalibrationReport run_calibration(const models::ClassifierHandle& model,
                                           const ImageBatch& images,
                                           const std::vector<int>& labels);
metrics::CalibrationReport run_calibration(const models::ClassifierHandle& model,
                                           const LabeledDataset& ds);

struct ConfusionMatrix {
  int num_classes = 0;
  bool has_labels = false;
  std::vector<std::vector<long>> counts;  // [true][predicted] when labeled
  std::vector<long> histogram;            // predicted-class counts otherwise
  long total = 0;
  double diagonal_fraction = 0.0;  // labeled case only
  std::string to_json() const;
};

/// Requires an evaluation-role ensemble (kept distinct from the loss
/// ensemble that shaped the benchmark). Falls back to a predicted-class
/// histogram when the set carries no source labels.
ConfusionMatrix sanity_confusion(const models::EnsembleHandle& ensemble,
                                 const ImageBatch& images,
                                 const std::optional<std::vector<int>>& labels);

struct FidEntry {
  std::string name;
  double fid = 0.0;
};
/// FID of each candidate feature set against the train features,
/// side-by-side in input order.
std::vector<FidEntry> sanity_fid(
    const Matrix& train_features,
    const std::vector<std::pair<std::string, Matrix>>& candidates);

/// Classifier trained with the uniform-target outlier term; thin wrapper
/// that stamps the outlier dataset id into the training record.
models::ClassifierHandle outlier_exposure_train(const std::string& arch,
                                                const LabeledDataset& train,
                                                const models::TrainingConfig& cfg,
                                                const ImageBatch& outliers,
                                                const std::string& outlier_id,
                                                const LabeledDataset* test = nullptr);

struct MatchedNormEntry {
  std::string name;
  double mean_lpips = 0.0;
  long used = 0;     // images that contributed
  long skipped = 0;  // zero-difference images
};
/// Rescales each variant's per-image difference to the target L2 norm and
/// reports the mean LPIPS at that matched perturbation size.
std::vector<MatchedNormEntry> lpips_at_matched_norm(
    const ImageBatch& clean,
    const std::vector<std::pair<std::string, ImageBatch>>& variants, double target_l2,
    const metrics::FeatureExtractor& fx);

/// Kendall tau-a by concordant/discordant pair counting.
double kendall_tau(const Vector& a, const Vector& b);

struct ModelOrdering {
  std::string model_id;
  double conventional_auroc = 0.0;
  double generated_auroc = 0.0;
};
struct OrderingReport {
  std::string detector;
  std::string conventional_benchmark;
  std::string generated_benchmark;
  std::vector<ModelOrdering> table;
  double tau = 0.0;
  std::string to_json() const;
};

/// Rank agreement between per-model AUROCs on a conventional benchmark and
/// a generated one; needs >= 3 models sharing one detector.
OrderingReport ordering_report(const std::vector<DetectionResult>& conventional,
                               const std::vector<DetectionResult>& generated);

}  // namespace oodforge::eval

#endif  // OODFORGE_EVAL_HPP
