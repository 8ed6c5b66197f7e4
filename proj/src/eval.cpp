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

#include "oodforge/eval.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>

namespace oodforge::eval {

using ag::Var;
using nlohmann::json;

std::string to_string(DetectorId d) {
  switch (d) {
    case DetectorId::softmax_entropy: return "softmax_entropy";
    case DetectorId::softmax_confidence: return "softmax_confidence";
    case DetectorId::mahalanobis: return "mahalanobis";
    case DetectorId::ensemble_predictive_entropy: return "ensemble_predictive_entropy";
  }
  throw InvalidArgument("bad DetectorId");
}

DetectorId detector_from_string(const std::string& s) {
  if (s == "softmax_entropy") return DetectorId::softmax_entropy;
  if (s == "softmax_confidence") return DetectorId::softmax_confidence;
  if (s == "mahalanobis") return DetectorId::mahalanobis;
  if (s == "ensemble_predictive_entropy") return DetectorId::ensemble_predictive_entropy;
  throw InvalidArgument("unknown detector: " + s);
}

metrics::ScoreOrientation detector_orientation(DetectorId d) {
  return d == DetectorId::softmax_confidence ? metrics::ScoreOrientation::lower_is_ood
                                             : metrics::ScoreOrientation::higher_is_ood;
}

namespace {

metrics::ProbabilityBatch model_probs(const models::ClassifierHandle& m,
                                      const ImageBatch& x) {
  return metrics::ProbabilityBatch(ag::softmax_rows(Var(m.logits(x))).value());
}

DetectionResult finish(DetectorId det, std::string model_id, std::string id_name,
                       std::string ood_name, Vector id_scores, Vector ood_scores,
                       std::uint64_t seed) {
  DetectionResult r;
  r.detector = det;
  r.model_id = std::move(model_id);
  r.id_dataset = std::move(id_name);
  r.ood_dataset = std::move(ood_name);
  r.scores = metrics::ScoreSet{std::move(id_scores), std::move(ood_scores),
                               detector_orientation(det)};
  r.auroc = metrics::auroc(r.scores);
  r.auprc = metrics::auprc(r.scores);
  r.seed = seed;
  return r;
}

}  // namespace

DetectionResult run_detection(DetectorId det, const models::ClassifierHandle& model,
                              const ImageBatch& id_images, const ImageBatch& ood_images,
                              const std::string& id_name, const std::string& ood_name,
                              const LabeledDataset* fit_data, std::uint64_t seed) {
  check(det != DetectorId::ensemble_predictive_entropy,
        "run_detection: ensemble_predictive_entropy needs an EnsembleHandle");
  const auto& shape = model.input_descriptor().shape;
  check(id_images.shape == shape && ood_images.shape == shape,
        "run_detection: dataset/model shape mismatch");

  Vector id_s, ood_s;
  switch (det) {
    case DetectorId::softmax_entropy:
      id_s = metrics::shannon_entropy(model_probs(model, id_images));
      ood_s = metrics::shannon_entropy(model_probs(model, ood_images));
      break;
    case DetectorId::softmax_confidence:
      id_s = metrics::softmax_confidence(model_probs(model, id_images));
      ood_s = metrics::softmax_confidence(model_probs(model, ood_images));
      break;
    case DetectorId::mahalanobis: {
      check(fit_data != nullptr, "run_detection: mahalanobis needs fit_data");
      Matrix train_f = model.features(fit_data->images, "penultimate");
      auto stats = metrics::fit_gaussian_stats(train_f, fit_data->labels);
      id_s = metrics::mahalanobis_score(model.features(id_images, "penultimate"), stats);
      ood_s = metrics::mahalanobis_score(model.features(ood_images, "penultimate"), stats);
      break;
    }
    default:
      throw InvalidArgument("run_detection: unhandled detector");
  }
  return finish(det, model.checkpoint_id(), id_name, ood_name, std::move(id_s),
                std::move(ood_s), seed);
}

DetectionResult run_detection(DetectorId det, const models::EnsembleHandle& ensemble,
                              const ImageBatch& id_images, const ImageBatch& ood_images,
                              const std::string& id_name, const std::string& ood_name,
                              std::uint64_t seed) {
  check(det == DetectorId::ensemble_predictive_entropy,
        "run_detection: only ensemble_predictive_entropy runs on an ensemble");
  const auto& shape = ensemble.members().front().input_descriptor().shape;
  check(id_images.shape == shape && ood_images.shape == shape,
        "run_detection: dataset/ensemble shape mismatch");
  Vector id_s = metrics::predictive_entropy(models::ensemble_predict(ensemble, id_images));
  Vector ood_s =
      metrics::predictive_entropy(models::ensemble_predict(ensemble, ood_images));
  std::string id = "ensemble[";
  for (const auto& m : ensemble.members()) id += m.checkpoint_id() + ",";
  id.back() = ']';
  return finish(det, id, id_name, ood_name, std::move(id_s), std::move(ood_s), seed);
}

double auroc_null_sigma(Eigen::Index n_id, Eigen::Index n_ood) {
  check(n_id > 0 && n_ood > 0, "auroc_null_sigma: empty sample");
  const double n1 = static_cast<double>(n_id), n2 = static_cast<double>(n_ood);
  return std::sqrt((n1 + n2 + 1.0) / (12.0 * n1 * n2));
}

std::string DetectionResult::to_json() const {
  json j{{"detector", eval::to_string(detector)},
         {"model_id", model_id},
         {"id_dataset", id_dataset},
         {"ood_dataset", ood_dataset},
         {"auroc", auroc},
         {"auprc", auprc},
         {"seed", seed},
         {"scores", json::parse(scores.to_json())}};
  return j.dump(2);
}

metrics::CalibrationReport run_calibration(const models::ClassifierHandle& model,
                                           const ImageBatch& images,
                                           const std::vector<int>& labels) {
  check(!labels.empty() && static_cast<Eigen::Index>(labels.size()) == images.size(),
        "run_calibration: needs one inherited label per image");
  auto p = model_probs(model, images);
  Vector conf = metrics::softmax_confidence(p);
  std::vector<bool> correct(labels.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    Eigen::Index arg;
    p.rows.row(i).maxCoeff(&arg);
    correct[i] = static_cast<int>(arg) == labels[i];
  }
  return metrics::expected_calibration_error(conf, correct);
}

metrics::CalibrationReport run_calibration(const models::ClassifierHandle& model,
                                           const LabeledDataset& ds) {
  return run_calibration(model, ds.images, ds.labels);
}

ConfusionMatrix sanity_confusion(const models::EnsembleHandle& ensemble,
                                 const ImageBatch& images,
                                 const std::optional<std::vector<int>>& labels) {
  check(ensemble.role() == models::EnsembleRole::evaluation_ensemble,
        "sanity_confusion: use an evaluation ensemble, not the loss ensemble");
  const int k = ensemble.num_classes();
  Matrix mean = models::ensemble_predict(ensemble, images).mean();

  ConfusionMatrix cm;
  cm.num_classes = k;
  cm.total = mean.rows();
  if (labels) {
    check(static_cast<Eigen::Index>(labels->size()) == images.size(),
          "sanity_confusion: label count mismatch");
    cm.has_labels = true;
    cm.counts.assign(k, std::vector<long>(k, 0));
    long diag = 0;
    for (Eigen::Index i = 0; i < mean.rows(); ++i) {
      Eigen::Index arg;
      mean.row(i).maxCoeff(&arg);
      const int t = (*labels)[i];
      check(t >= 0 && t < k, "sanity_confusion: label out of range");
      ++cm.counts[t][arg];
      if (static_cast<int>(arg) == t) ++diag;
    }
    cm.diagonal_fraction = static_cast<double>(diag) / static_cast<double>(cm.total);
  } else {
    cm.histogram.assign(k, 0);
    for (Eigen::Index i = 0; i < mean.rows(); ++i) {
      Eigen::Index arg;
      mean.row(i).maxCoeff(&arg);
      ++cm.histogram[arg];
    }
  }
  return cm;
}

std::string ConfusionMatrix::to_json() const {
  json j{{"num_classes", num_classes}, {"has_labels", has_labels}, {"total", total}};
  if (has_labels) {
    j["counts"] = counts;
    j["diagonal_fraction"] = diagonal_fraction;
  } else {
    j["predicted_histogram"] = histogram;
  }
  return j.dump(2);
}

std::vector<FidEntry> sanity_fid(
    const Matrix& train_features,
    const std::vector<std::pair<std::string, Matrix>>& candidates) {
  std::vector<FidEntry> table;
  for (const auto& [name, feats] : candidates)
    table.push_back({name, metrics::frechet_distance(feats, train_features)});
  return table;
}

models::ClassifierHandle outlier_exposure_train(const std::string& arch,
                                                const LabeledDataset& train,
                                                const models::TrainingConfig& cfg,
                                                const ImageBatch& outliers,
                                                const std::string& outlier_id,
                                                const LabeledDataset* test) {
  check(outliers.size() > 0, "outlier_exposure_train: empty outlier set");
  return models::train_classifier(arch, train, cfg, test, &outliers, outlier_id);
}

std::vector<MatchedNormEntry> lpips_at_matched_norm(
    const ImageBatch& clean,
    const std::vector<std::pair<std::string, ImageBatch>>& variants, double target_l2,
    const metrics::FeatureExtractor& fx) {
  check(target_l2 > 0.0, "lpips_at_matched_norm: target_l2 must be > 0");
  std::vector<MatchedNormEntry> table;
  for (const auto& [name, variant] : variants) {
    check(variant.shape == clean.shape && variant.size() == clean.size(),
          "lpips_at_matched_norm: variant/clean mismatch");
    MatchedNormEntry e;
    e.name = name;
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < clean.size(); ++i) {
      const double n = (variant.pixels.row(i) - clean.pixels.row(i)).norm();
      if (n < 1e-12)
        ++e.skipped;  // zero-difference image: rescaling undefined
      else
        keep.push_back(i);
    }
    if (!keep.empty()) {
      Matrix base(static_cast<Eigen::Index>(keep.size()), clean.pixels.cols());
      Matrix pert = base;
      for (std::size_t r = 0; r < keep.size(); ++r) {
        const auto i = keep[r];
        Eigen::RowVectorXd delta = variant.pixels.row(i) - clean.pixels.row(i);
        base.row(r) = clean.pixels.row(i);
        pert.row(r) = clean.pixels.row(i) + (target_l2 / delta.norm()) * delta;
      }
      // The rescaled perturbation may leave [-1, 1]; go through the
      // differentiable form, which takes raw matrices.
      Matrix lp = metrics::lpips_terms(Var(base), Var(pert), fx).value();
      e.mean_lpips = lp.mean();
      e.used = static_cast<long>(keep.size());
    }
    table.push_back(std::move(e));
  }
  return table;
}

double kendall_tau(const Vector& a, const Vector& b) {
  check(a.size() == b.size() && a.size() >= 2, "kendall_tau: need paired inputs");
  long concordant_minus_discordant = 0;
  const Eigen::Index n = a.size();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double s = (a(i) - a(j)) * (b(i) - b(j));
      if (s > 0) ++concordant_minus_discordant;
      else if (s < 0) --concordant_minus_discordant;
    }
  return static_cast<double>(concordant_minus_discordant) /
         (static_cast<double>(n) * (n - 1) / 2.0);
}

OrderingReport ordering_report(const std::vector<DetectionResult>& conventional,
                               const std::vector<DetectionResult>& generated) {
  check(!conventional.empty() && !generated.empty(), "ordering_report: empty input");
  const DetectorId det = conventional.front().detector;
  for (const auto& r : conventional)
    check(r.detector == det, "ordering_report: mixed detectors");
  for (const auto& r : generated)
    check(r.detector == det, "ordering_report: mixed detectors");

  std::map<std::string, double> gen_by_model;
  for (const auto& r : generated) gen_by_model[r.model_id] = r.auroc;

  OrderingReport rep;
  rep.detector = to_string(det);
  rep.conventional_benchmark = conventional.front().ood_dataset;
  rep.generated_benchmark = generated.front().ood_dataset;
  for (const auto& r : conventional)
    if (auto it = gen_by_model.find(r.model_id); it != gen_by_model.end())
      rep.table.push_back({r.model_id, r.auroc, it->second});
  check(rep.table.size() >= 3,
        "ordering_report: need >= 3 models evaluated on both benchmarks");

  Vector ca(rep.table.size()), ga(rep.table.size());
  for (std::size_t i = 0; i < rep.table.size(); ++i) {
    ca(i) = rep.table[i].conventional_auroc;
    ga(i) = rep.table[i].generated_auroc;
  }
  rep.tau = kendall_tau(ca, ga);
  return rep;
}

std::string OrderingReport::to_json() const {
  json rows = json::array();
  for (const auto& r : table)
    rows.push_back({{"model_id", r.model_id},
                    {"conventional_auroc", r.conventional_auroc},
                    {"generated_auroc", r.generated_auroc}});
  json j{{"detector", detector},
         {"conventional_benchmark", conventional_benchmark},
         {"generated_benchmark", generated_benchmark},
         {"table", rows},
         {"kendall_tau", tau}};
  return j.dump(2);
}

}  // namespace oodforge::eval
