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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oodforge/metrics.hpp"
#include "oodforge/models.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>

using namespace oodforge;
using ag::Var;
using data::LabeledDataset;
using models::ClassifierHandle;
using models::EnsembleHandle;
using models::EnsembleRole;
using models::TrainingConfig;

namespace {

namespace fs = std::filesystem;

fs::path data_root() {
  if (const char* p = std::getenv("OODFORGE_DATA_ROOT")) return p;
  return "/tmp/oodforge-data";
}

fs::path temp_dir(const std::string& tag) {
  fs::path d = fs::temp_directory_path() / ("oodforge-models-" + tag);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Small-grid dataset: cheap enough for repeated training in unit tests.
LabeledDataset grid(data::Split s) { return data::load_dataset("synth-grid", s, data_root()); }

const LabeledDataset& cached_grid_train() {
  static LabeledDataset ds = grid(data::Split::train);
  return ds;
}

const ClassifierHandle& cached_grid_model() {
  static ClassifierHandle h = [] {
    TrainingConfig cfg;
    cfg.epochs = 6;
    cfg.seed = 11;
    LabeledDataset test = grid(data::Split::test);
    return models::train_classifier("cnn-tiny", cached_grid_train(), cfg, &test);
  }();
  return h;
}

}  // namespace

TEST_CASE("all registered architectures build and emit [N, K] logits") {
  const auto& train = cached_grid_train();
  for (const auto& arch : models::registered_architectures()) {
    auto h = models::build_classifier(arch, train.descriptor, 3);
    Matrix lg = h.logits(train.images.rows({0, 1, 2}));
    CHECK(lg.rows() == 3);
    CHECK(lg.cols() == train.descriptor.num_classes);
    CHECK(lg.allFinite());
  }
}

TEST_CASE("identical seeds give bit-identical models, different seeds differ") {
  const auto& train = cached_grid_train();
  TrainingConfig cfg;
  cfg.epochs = 1;
  cfg.seed = 5;
  auto a = models::train_classifier("mlp-small", train, cfg);
  auto b = models::train_classifier("mlp-small", train, cfg);
  CHECK(a.checkpoint_id() == b.checkpoint_id());
  Matrix la = a.logits(train.images.rows({0, 1}));
  Matrix lb = b.logits(train.images.rows({0, 1}));
  CHECK((la - lb).cwiseAbs().maxCoeff() == 0.0);
  cfg.seed = 6;
  auto c = models::train_classifier("mlp-small", train, cfg);
  CHECK(c.checkpoint_id() != a.checkpoint_id());
}

TEST_CASE("zero-epoch model sits at chance accuracy") {
  const auto& train = cached_grid_train();
  TrainingConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 3;
  auto h = models::train_classifier("mlp-small", train, cfg);
  const double chance = 1.0 / train.descriptor.num_classes;
  CHECK(h.record().train_accuracy == doctest::Approx(chance).epsilon(0.35));
}

TEST_CASE("a few epochs reach high accuracy on the small grid set") {
  const auto& h = cached_grid_model();
  CHECK(h.record().train_accuracy >= 0.97);
  CHECK(h.record().test_accuracy >= 0.95);
}

TEST_CASE("save/load round-trips weights, metadata, and checkpoint id") {
  const auto& h = cached_grid_model();
  auto dir = temp_dir("saveload");
  h.save(dir);
  auto g = ClassifierHandle::load(dir);
  CHECK(g.checkpoint_id() == h.checkpoint_id());
  CHECK(g.architecture_id() == h.architecture_id());
  CHECK(g.record().test_accuracy == h.record().test_accuracy);
  auto x = cached_grid_train().images.rows({0, 1, 2, 3});
  CHECK((g.logits(x) - h.logits(x)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("ensemble heterogeneity rules are enforced at construction") {
  const auto& train = cached_grid_train();
  auto m1 = models::build_classifier("mlp-small", train.descriptor, 1);
  auto m2 = models::build_classifier("mlp-small", train.descriptor, 2);
  auto m3 = models::build_classifier("mlp-wide", train.descriptor, 3);
  CHECK_THROWS_AS(EnsembleHandle({m1, m2}, EnsembleRole::training_loss_ensemble),
                  InvalidArgument);
  CHECK_NOTHROW(EnsembleHandle({m1, m3}, EnsembleRole::training_loss_ensemble));
  CHECK_THROWS_AS(EnsembleHandle({m1, m3}, EnsembleRole::evaluation_ensemble),
                  InvalidArgument);
  CHECK_NOTHROW(EnsembleHandle({m1, m2}, EnsembleRole::evaluation_ensemble));
}

TEST_CASE("ensemble MI value matches the non-differentiable estimator") {
  const auto& train = cached_grid_train();
  auto m1 = models::build_classifier("mlp-small", train.descriptor, 21);
  auto m2 = models::build_classifier("mlp-wide", train.descriptor, 22);
  EnsembleHandle e({m1, m2}, EnsembleRole::training_loss_ensemble);
  auto x = train.images.rows({0, 1, 2, 3, 4});
  Vector oracle = metrics::mutual_information(models::ensemble_predict(e, x));
  Matrix terms = models::ensemble_mi_terms(e, Var(x.pixels)).value();
  REQUIRE(terms.rows() == 5);
  for (int i = 0; i < 5; ++i)
    CHECK(terms(i, 0) == doctest::Approx(oracle(i)).epsilon(1e-8));
}

TEST_CASE("ensemble MI gradients pass finite differences") {
  const auto& train = cached_grid_train();
  auto m1 = models::build_classifier("mlp-small", train.descriptor, 31);
  auto m2 = models::build_classifier("mlp-wide", train.descriptor, 32);
  EnsembleHandle e({m1, m2}, EnsembleRole::training_loss_ensemble);
  Matrix x0 = train.images.rows({0, 1}).pixels;
  Var x(x0, true);
  Var loss = ag::sum_all(models::ensemble_mi_terms(e, x));
  ag::backward(loss);
  Matrix analytic = x.grad();
  const double h = 1e-5;
  Rng rng(0);
  for (int trial = 0; trial < 12; ++trial) {
    int i = static_cast<int>(rng() % x0.rows());
    int j = static_cast<int>(rng() % x0.cols());
    Matrix xp = x0, xm = x0;
    xp(i, j) += h;
    xm(i, j) -= h;
    double fp = models::ensemble_mi_terms(e, Var(xp)).value().sum();
    double fm = models::ensemble_mi_terms(e, Var(xm)).value().sum();
    double fd = (fp - fm) / (2 * h);
    CHECK(analytic(i, j) ==
          doctest::Approx(fd).epsilon(1e-3).scale(std::max(1.0, std::abs(fd))));
  }
}

TEST_CASE("feature taps have the declared shapes; extractor works end to end") {
  const auto& h = cached_grid_model();
  auto x = cached_grid_train().images.rows({0, 1, 2});
  auto layers = h.feature_layers();
  REQUIRE(layers.size() == 3);  // penultimate + two conv taps
  Matrix pen = h.features(x, "penultimate");
  CHECK(pen.cols() == 64);
  auto fx = h.feature_extractor();
  REQUIRE(fx.tap_layers.size() == 2);
  Matrix c0 = h.features(x, "conv0");
  CHECK(c0.cols() == fx.tap_shapes[0].size());
  Vector self = metrics::lpips(x, x, fx);
  CHECK(self.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  CHECK_THROWS_AS(h.features(x, "conv9"), InvalidArgument);
  // MLPs expose no conv taps and refuse to build an extractor.
  auto mlp = models::build_classifier("mlp-small", cached_grid_train().descriptor, 1);
  CHECK_THROWS_AS(mlp.feature_extractor(), InvalidArgument);
}

TEST_CASE("penultimate Mahalanobis separates data from uniform noise") {
  const auto& h = cached_grid_model();
  const auto& train = cached_grid_train();
  Matrix feats = h.features(train.images, "penultimate");
  auto stats = metrics::fit_gaussian_stats(feats, train.labels);
  auto test = grid(data::Split::test);
  Rng rng(9);
  auto noise = data::uniform_noise_images(static_cast<int>(test.size()),
                                          train.descriptor.shape, rng);
  Vector id = metrics::mahalanobis_score(h.features(test.images, "penultimate"), stats);
  Vector ood = metrics::mahalanobis_score(h.features(noise, "penultimate"), stats);
  metrics::ScoreSet s{id, ood, metrics::ScoreOrientation::higher_is_ood};
  CHECK(metrics::auroc(s) > 0.9);
}

TEST_CASE("logit cache returns bit-identical matrices from memory and disk") {
  const auto& h = cached_grid_model();
  const auto& train = cached_grid_train();
  auto dir = temp_dir("logitcache");
  Matrix direct = h.logits(train.images);
  {
    models::LogitCache cache(dir);
    Matrix first = cache.logits(h, train.images, train.fingerprint());
    CHECK((first - direct).cwiseAbs().maxCoeff() == 0.0);
  }
  models::LogitCache reopened(dir);  // forces the disk path
  Matrix second = reopened.logits(h, train.images, train.fingerprint());
  CHECK((second - direct).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("outlier exposure flattens predictions on the exposed outliers") {
  const auto& train = cached_grid_train();
  TrainingConfig cfg;
  cfg.epochs = 6;
  cfg.seed = 11;
  Rng rng(17);
  auto outliers = data::uniform_noise_images(256, train.descriptor.shape, rng);
  auto oe = models::train_classifier("cnn-tiny", train, cfg, nullptr, &outliers, "noise");
  CHECK(oe.record().outlier_dataset_id == "noise");
  const auto& plain = cached_grid_model();  // same arch/seed/epochs, no exposure
  Rng rng2(18);
  auto probe = data::uniform_noise_images(128, train.descriptor.shape, rng2);
  auto ent = [](const ClassifierHandle& m, const data::ImageBatch& x) {
    metrics::ProbabilityBatch p(ag::softmax_rows(Var(m.logits(x))).value());
    return metrics::shannon_entropy(p).mean();
  };
  CHECK(ent(oe, probe) > ent(plain, probe));
  // Exposure should not wreck in-distribution accuracy on this easy set.
  CHECK(oe.record().train_accuracy >= 0.95);
}

TEST_CASE("divergent learning rate raises a numeric error") {
  const auto& train = cached_grid_train();
  TrainingConfig cfg;
  cfg.epochs = 3;
  cfg.learning_rate = 1e150;
  cfg.seed = 1;
  CHECK_THROWS_AS(models::train_classifier("mlp-small", train, cfg), NumericError);
}
