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

#ifndef OODFORGE_GAN_HPP
#define OODFORGE_GAN_HPP

#include "oodforge/data.hpp"
#include "oodforge/metrics.hpp"
#include "oodforge/models.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace oodforge::gan {

using ag::Var;
using data::ImageBatch;
using data::LabeledDataset;

enum class GanKind { near_ood, shifted };
std::string to_string(GanKind k);
GanKind gan_kind_from_string(const std::string& s);

struct GanTrainingConfig {
  GanKind kind = GanKind::near_ood;
  double lambda_p = 0.0;  // perceptual-regularizer coefficient
  double lambda_s = 0.0;  // semantic (ensemble-MI) coefficient
  int epochs = 3;
  int batch_size = 64;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::uint64_t seed = 0;
  /// Latent dimension; required >= 1 for near_ood, must stay 0 for shifted
  /// (the conditional generator draws noise from always-on dropout instead).
  int latent_dim = 32;
  void validate() const;
};

/// A trained generator/discriminator pair plus its training curves.
struct GeneratorArtifact {
  std::string checkpoint_id;
  GanTrainingConfig config;
  std::vector<double> generator_loss_curve;      // one entry per epoch
  std::vector<double> discriminator_loss_curve;  // one entry per epoch
  std::vector<double> mean_mi_curve;             // mean generated-batch MI per epoch
  double fid_to_train = 0.0;
  bool mode_collapse_warning = false;
  std::shared_ptr<nn::Sequential> generator;
  std::shared_ptr<nn::Sequential> discriminator;
  ag::ImageShape image_shape;

  /// Unconditional sampling (near_ood artifacts only).
  ImageBatch sample(int n, Rng& rng) const;
  /// Conditional transform of real inputs (shifted artifacts only); the
  /// always-on dropout inside the generator is the noise source.
  ImageBatch transform(const ImageBatch& x, Rng& rng) const;

  void save(const std::filesystem::path& dir) const;
  static GeneratorArtifact load(const std::filesystem::path& dir);
};

struct MiInterval {
  double lo = 0.0;
  double hi = 0.0;
  /// Valid iff 0 <= lo < hi <= ln K + 1e-6.
  void validate(int num_classes) const;
};

enum class AdversarialForm { minimax, non_saturating };

/// A generator-loss graph plus its reported value decomposition. `total`
/// is what backward() runs on; `reported` always uses the minimax
/// adversarial form regardless of the form used for the graph.
struct GeneratorLossTerms {
  Var total;
  double reported = 0.0;
  double adversarial = 0.0;
  double perceptual = 0.0;  // LPIPS component, before the lambda factor
  double semantic = 0.0;    // ensemble-MI component, before the lambda factor
};

/// Unconditional generator loss:
///   E_z[log(1 - D(G(z)))] + lambda_p * E[LPIPS(x, G(z))]
///                         - lambda_s * E[MI(G(z))]
/// with x paired to G(z) by batch position. Gradients flow to G only.
GeneratorLossTerms near_ood_generator_loss(
    const data::LatentBatch& z, const ImageBatch& real, const nn::Sequential& g,
    const nn::Sequential& d, const models::EnsembleHandle& ensemble,
    const metrics::FeatureExtractor& fx, double lambda_p, double lambda_s, Rng& rng,
    AdversarialForm form = AdversarialForm::minimax);

/// Conditional generator loss:
///   E_x[log(1 - D(x, G(x)))] - lambda_p * E[LPIPS(x, G(x))]
///                            + lambda_s * E[MI(G(x))]
GeneratorLossTerms shift_generator_loss(
    const ImageBatch& x, const nn::Sequential& g, const nn::Sequential& d,
    const models::EnsembleHandle& ensemble, const metrics::FeatureExtractor& fx,
    double lambda_p, double lambda_s, Rng& rng,
    AdversarialForm form = AdversarialForm::minimax);

/// Standard minimax discriminator objective in stable logit form:
/// mean softplus(-D(real)) + mean softplus(D(fake)). Inputs are plain
/// batches (already detached), so gradients reach D only.
Var gan_discriminator_loss(const ImageBatch& real, const ImageBatch& fake,
                           const nn::Sequential& d, Rng& rng);

/// Conditional variant: the real pair is (x, x), the fake pair (x, generated).
Var pix2pix_discriminator_loss(const ImageBatch& x, const ImageBatch& generated,
                               const nn::Sequential& d, Rng& rng);

// ----- generator/discriminator registry (desk-scale architectures) -----
std::shared_ptr<nn::Sequential> build_generator(GanKind kind, const ag::ImageShape& shape,
                                                int latent_dim, Rng& rng);
std::shared_ptr<nn::Sequential> build_discriminator(GanKind kind,
                                                    const ag::ImageShape& shape, Rng& rng);

GeneratorArtifact train_generator(const GanTrainingConfig& cfg, const LabeledDataset& data,
                                  const models::EnsembleHandle& ensemble,
                                  const metrics::FeatureExtractor& fx);

struct LambdaCell {
  double lambda_p = 0.0;
  double lambda_s = 0.0;
};
/// near_ood: lambda_s in {0.5, 0.75, ..., 3.0} with lambda_p = 1 (11 cells);
/// shifted: the single cell lambda_s = 1, lambda_p = 2.
std::vector<LambdaCell> default_lambda_grid(GanKind kind);

struct GridCellResult {
  LambdaCell cell;
  std::optional<GeneratorArtifact> artifact;  // empty on cell failure
  std::string error;                          // failure description
};
/// One artifact per cell; a failing cell is recorded and the grid continues.
/// Cell i trains with seed = base.seed + i.
std::vector<GridCellResult> grid_search_lambda(GanKind kind,
                                               const std::vector<LambdaCell>& grid,
                                               const LabeledDataset& data,
                                               const GanTrainingConfig& base,
                                               const models::EnsembleHandle& ensemble,
                                               const metrics::FeatureExtractor& fx);

/// Scans 200 evenly spaced thresholds over [0, ln K]; lo minimizes
/// overlap(t) = frac(val > t) + frac(candidate < t), ties toward smaller t;
/// hi = lo + width clamped to ln K.
MiInterval select_mi_interval(const Vector& val_mi, const Vector& candidate_mi,
                              int num_classes, double width = 0.4);

struct FilterResult {
  ImageBatch samples;
  std::vector<std::int64_t> source_indices;  // global candidate positions
  data::FilterStats stats;
};

/// Pulls candidate chunks from `next_batch` (empty batch = exhausted) and
/// keeps samples whose ensemble MI lies in [lo, hi] until target_count is
/// reached. Throws with stats attached if the acceptance rate is below
/// `acceptance_floor` once `candidate_budget` candidates were consumed.
FilterResult filter_by_mi(const std::function<ImageBatch(int)>& next_batch,
                          const models::EnsembleHandle& ensemble,
                          const MiInterval& interval, int target_count,
                          std::int64_t candidate_budget = 100000,
                          double acceptance_floor = 1e-3);

/// Convenience overload for a fixed candidate pool.
FilterResult filter_by_mi(const ImageBatch& candidates,
                          const models::EnsembleHandle& ensemble,
                          const MiInterval& interval, int target_count);

}  // namespace oodforge::gan

#endif  // OODFORGE_GAN_HPP
