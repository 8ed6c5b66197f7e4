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

#ifndef OODFORGE_MODELS_HPP
#define OODFORGE_MODELS_HPP

#include "oodforge/data.hpp"
#include "oodforge/metrics.hpp"
#include "oodforge/nn.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace oodforge::models {

using data::ImageBatch;
using data::LabeledDataset;

struct TrainingConfig {
  int epochs = 5;
  int batch_size = 64;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::vector<int> lr_drop_epochs;  // drop by lr_drop_factor at these epochs
  double lr_drop_factor = 0.1;
  std::uint64_t seed = 0;
  /// Outlier-exposure settings; when outliers are supplied the loss gains
  /// beta * cross-entropy(softmax, uniform) on outlier batches.
  double outlier_beta = 0.5;
};

struct TrainingRecord {
  std::uint64_t seed = 0;
  int epochs = 0;
  double learning_rate = 0.0;
  double momentum = 0.0;
  double final_loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::string outlier_dataset_id;  // set by outlier-exposure training
};

/// A trained (or freshly initialized) classifier. Inputs are [-1, 1]
/// ImageBatches; standardization with the dataset descriptor's constants
/// happens inside. Evaluation is deterministic.
class ClassifierHandle {
 public:
  ClassifierHandle() = default;
  ClassifierHandle(std::string arch, data::DatasetDescriptor desc, int num_classes,
                   std::shared_ptr<nn::Sequential> net, std::vector<int> conv_taps,
                   std::vector<ag::ImageShape> conv_tap_shapes, int penultimate,
                   TrainingRecord record);

  const std::string& architecture_id() const { return arch_; }
  const std::string& checkpoint_id() const { return checkpoint_id_; }
  int num_classes() const { return num_classes_; }
  const data::DatasetDescriptor& input_descriptor() const { return desc_; }
  const TrainingRecord& record() const { return record_; }
  const std::shared_ptr<nn::Sequential>& net() const { return net_; }

  Matrix logits(const ImageBatch& x) const;
  /// Differentiable logits for a [-1, 1] pixel Var (generator losses).
  ag::Var logits_var(const ag::Var& pixels) const;
  double accuracy(const LabeledDataset& ds) const;

  /// Named feature taps: "penultimate" or "convN" (N = tap index).
  Matrix features(const ImageBatch& x, const std::string& layer) const;
  std::vector<std::string> feature_layers() const;

  /// LPIPS-style extractor over this classifier's conv taps.
  metrics::FeatureExtractor feature_extractor() const;

  void save(const std::filesystem::path& dir) const;
  static ClassifierHandle load(const std::filesystem::path& dir);
  void refresh_checkpoint_id();

 private:
  std::string arch_;
  std::string checkpoint_id_;
  int num_classes_ = 0;
  data::DatasetDescriptor desc_;
  std::shared_ptr<nn::Sequential> net_;
  std::vector<int> conv_taps_;
  std::vector<ag::ImageShape> conv_tap_shapes_;
  int penultimate_ = -1;
  TrainingRecord record_;
};

enum class EnsembleRole { training_loss_ensemble, evaluation_ensemble };

/// Member set with construction-time heterogeneity rules: the training-loss
/// ensemble needs >= 2 distinct architectures; the evaluation ensemble is
/// one architecture across seeds.
class EnsembleHandle {
 public:
  EnsembleHandle(std::vector<ClassifierHandle> members, EnsembleRole role);
  const std::vector<ClassifierHandle>& members() const { return members_; }
  EnsembleRole role() const { return role_; }
  int size() const { return static_cast<int>(members_.size()); }
  int num_classes() const { return members_.front().num_classes(); }

 private:
  std::vector<ClassifierHandle> members_;
  EnsembleRole role_;
};

std::vector<std::string> registered_architectures();

/// Fresh handle with randomly initialized weights (epochs = 0 semantics).
ClassifierHandle build_classifier(const std::string& arch,
                                  const data::DatasetDescriptor& desc,
                                  std::uint64_t seed);

ClassifierHandle train_classifier(const std::string& arch, const LabeledDataset& train,
                                  const TrainingConfig& cfg,
                                  const LabeledDataset* test = nullptr,
                                  const ImageBatch* outliers = nullptr,
                                  const std::string& outlier_id = "");

metrics::EnsemblePrediction ensemble_predict(const EnsembleHandle& e,
                                             const ImageBatch& x);

/// Differentiable ensemble MI of a [-1, 1] pixel Var; returns [N, 1].
/// Member weights are treated as constants (frozen).
ag::Var ensemble_mi_terms(const EnsembleHandle& e, const ag::Var& pixels);

Matrix extract_features(const ClassifierHandle& m, const ImageBatch& x,
                        const std::string& layer);

/// Disk-backed logits cache keyed by (checkpoint id, dataset fingerprint).
class LogitCache {
 public:
  explicit LogitCache(std::filesystem::path dir);
  Matrix logits(const ClassifierHandle& m, const ImageBatch& x,
                std::uint64_t fingerprint);

 private:
  std::filesystem::path dir_;
  std::map<std::string, Matrix> mem_;
};

}  // namespace oodforge::models

#endif  // OODFORGE_MODELS_HPP
