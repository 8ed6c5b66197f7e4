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

#include <cmath>
#include <numeric>

using namespace oodforge;
using namespace oodforge::metrics;

namespace {

Matrix random_stochastic(int n, int k, Rng& rng) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  Matrix m(n, k);
  for (int i = 0; i < n; ++i) {
    double s = 0;
    for (int j = 0; j < k; ++j) { m(i, j) = u(rng); s += m(i, j); }
    m.row(i) /= s;
  }
  return m;
}

// Independent term-by-term recomputation of the MI estimate.
double mi_oracle(const std::vector<Matrix>& members, int row) {
  const int t = static_cast<int>(members.size());
  const int k = static_cast<int>(members[0].cols());
  std::vector<double> mean(k, 0.0);
  for (const auto& m : members)
    for (int j = 0; j < k; ++j) mean[j] += m(row, j) / t;
  auto ent = [&](auto get) {
    double h = 0;
    for (int j = 0; j < k; ++j) {
      double p = get(j);
      if (p > 0) h -= p * std::log(p);
    }
    return h;
  };
  double h_mean = ent([&](int j) { return mean[j]; });
  double avg_h = 0;
  for (const auto& m : members) avg_h += ent([&](int j) { return m(row, j); }) / t;
  return h_mean - avg_h;
}

// Brute force over all (id, ood) pairs with 1/2 tie credit.
double auroc_oracle(const ScoreSet& s) {
  double sgn = s.orientation == ScoreOrientation::higher_is_ood ? 1.0 : -1.0;
  double u = 0;
  for (Eigen::Index i = 0; i < s.ood_scores.size(); ++i)
    for (Eigen::Index j = 0; j < s.id_scores.size(); ++j) {
      double o = sgn * s.ood_scores(i), d = sgn * s.id_scores(j);
      u += o > d ? 1.0 : (o == d ? 0.5 : 0.0);
    }
  return u / (s.ood_scores.size() * s.id_scores.size());
}

// Exhaustive threshold enumeration; positives are OoD.
double auprc_oracle(const ScoreSet& s) {
  double sgn = s.orientation == ScoreOrientation::higher_is_ood ? 1.0 : -1.0;
  std::vector<double> thresholds;
  for (Eigen::Index i = 0; i < s.id_scores.size(); ++i)
    thresholds.push_back(sgn * s.id_scores(i));
  for (Eigen::Index i = 0; i < s.ood_scores.size(); ++i)
    thresholds.push_back(sgn * s.ood_scores(i));
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  double ap = 0, prev_recall = 0;
  for (double thr : thresholds) {
    double tp = 0, fp = 0;
    for (Eigen::Index i = 0; i < s.ood_scores.size(); ++i)
      if (sgn * s.ood_scores(i) >= thr) tp += 1;
    for (Eigen::Index i = 0; i < s.id_scores.size(); ++i)
      if (sgn * s.id_scores(i) >= thr) fp += 1;
    double recall = tp / s.ood_scores.size();
    double precision = tp / (tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

FeatureExtractor toy_extractor(Rng& rng) {
  FeatureExtractor fx;
  fx.backbone_id = "toy-8x8";
  fx.net = std::make_shared<nn::Sequential>();
  ag::ImageShape in{1, 8, 8};
  auto& c1 = fx.net->emplace<nn::Conv2d>(in, 4, 3, 1, 1, rng);
  fx.net->emplace<nn::Activation>(nn::Activation::Kind::relu);
  auto& c2 = fx.net->emplace<nn::Conv2d>(c1.out_shape(), 6, 3, 2, 1, rng);
  fx.net->emplace<nn::Activation>(nn::Activation::Kind::relu);
  fx.input_shape = in;
  fx.tap_layers = {1, 3};
  fx.tap_shapes = {c1.out_shape(), c2.out_shape()};
  fx.net->set_requires_grad(false);
  return fx;
}

data::ImageBatch random_images(int n, const ag::ImageShape& sh, Rng& rng) {
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  Matrix m(n, sh.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < sh.size(); ++j) m(i, j) = u(rng);
  return data::ImageBatch(std::move(m), sh);
}

}  // namespace

TEST_CASE("shannon entropy analytic values") {
  Matrix p(3, 10);
  p.setZero();
  p(0, 0) = 1.0;                         // one-hot
  p.row(1).setConstant(0.1);             // uniform
  p.row(2).setZero();
  p(2, 0) = 0.5; p(2, 1) = 0.5;
  Vector h = shannon_entropy(ProbabilityBatch(p));
  CHECK(h(0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(h(1) == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  CHECK(h(2) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("softmax confidence analytic values") {
  Matrix p(3, 10);
  p.setZero();
  p(0, 3) = 1.0;
  p.row(1).setConstant(0.1);
  p.row(2).setZero();
  p(2, 0) = 0.7; p(2, 1) = 0.2; p(2, 2) = 0.1;
  Vector c = softmax_confidence(ProbabilityBatch(p));
  CHECK(c(0) == doctest::Approx(1.0));
  CHECK(c(1) == doctest::Approx(0.1));
  CHECK(c(2) == doctest::Approx(0.7));
}

TEST_CASE("mutual information: identical members give zero") {
  Rng rng(1);
  Matrix p = random_stochastic(5, 4, rng);
  EnsemblePrediction e({ProbabilityBatch(p), ProbabilityBatch(p), ProbabilityBatch(p)});
  Vector mi = mutual_information(e);
  CHECK(mi.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mutual information: maximal disagreement is ln 2") {
  Matrix a(1, 2), b(1, 2);
  a << 1.0, 0.0;
  b << 0.0, 1.0;
  EnsemblePrediction e({ProbabilityBatch(a), ProbabilityBatch(b)});
  CHECK(mutual_information(e)(0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("mutual information matches independent oracle") {
  Rng rng(2);
  std::vector<Matrix> raw{random_stochastic(4, 5, rng), random_stochastic(4, 5, rng),
                          random_stochastic(4, 5, rng)};
  EnsemblePrediction e({ProbabilityBatch(raw[0]), ProbabilityBatch(raw[1]),
                        ProbabilityBatch(raw[2])});
  Vector mi = mutual_information(e);
  for (int i = 0; i < 4; ++i)
    CHECK(mi(i) == doctest::Approx(mi_oracle(raw, i)).epsilon(1e-8));
}

TEST_CASE("predictive entropy identities") {
  Rng rng(3);
  Matrix single = random_stochastic(6, 7, rng);
  EnsemblePrediction e1({ProbabilityBatch(single)});
  CHECK((predictive_entropy(e1) - shannon_entropy(ProbabilityBatch(single)))
            .cwiseAbs().maxCoeff() < 1e-12);

  std::vector<ProbabilityBatch> members;
  for (int t = 0; t < 4; ++t) members.emplace_back(random_stochastic(6, 7, rng));
  EnsemblePrediction e(members);
  Vector pe = predictive_entropy(e), mi = mutual_information(e);
  Vector mean_member_h = Vector::Zero(6);
  for (const auto& m : members) mean_member_h += shannon_entropy(m) / 4.0;
  CHECK((pe - mi - mean_member_h).cwiseAbs().maxCoeff() < 1e-8);

  // One-hot identical members: PE = 0.
  Matrix oh = Matrix::Zero(3, 4);
  for (int i = 0; i < 3; ++i) oh(i, 1) = 1.0;
  EnsemblePrediction eh({ProbabilityBatch(oh), ProbabilityBatch(oh)});
  CHECK(predictive_entropy(eh).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("MI / predictive entropy ordering property") {
  Rng rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<ProbabilityBatch> members;
    int t = 1 + static_cast<int>(rng() % 5);
    int k = 2 + static_cast<int>(rng() % 8);
    for (int i = 0; i < t; ++i) members.emplace_back(random_stochastic(8, k, rng));
    EnsemblePrediction e(members);
    Vector mi = mutual_information(e), pe = predictive_entropy(e);
    for (int i = 0; i < 8; ++i) {
      CHECK(mi(i) >= -1e-6);
      CHECK(pe(i) >= mi(i) - 1e-6);
      CHECK(pe(i) <= std::log(double(k)) + 1e-6);
    }
  }
}

TEST_CASE("lpips identity, symmetry, nonnegativity") {
  Rng rng(5);
  auto fx = toy_extractor(rng);
  auto x = random_images(3, fx.input_shape, rng);
  auto y = random_images(3, fx.input_shape, rng);
  CHECK(lpips(x, x, fx).cwiseAbs().maxCoeff() < 1e-12);
  Vector d1 = lpips(x, y, fx), d2 = lpips(y, x, fx);
  CHECK((d1 - d2).cwiseAbs().maxCoeff() < 1e-7);
  CHECK(d1.minCoeff() >= 0.0);
}

TEST_CASE("lpips finite-difference gradient wrt pixels") {
  Rng rng(6);
  auto fx = toy_extractor(rng);
  auto x = random_images(2, fx.input_shape, rng);
  auto y = random_images(2, fx.input_shape, rng);
  ag::Var vx(x.pixels, true);
  ag::Var vy(y.pixels);
  ag::Var loss = ag::sum_all(lpips_terms(vx, vy, fx));
  ag::backward(loss);
  Rng pick(7);
  for (int rep = 0; rep < 10; ++rep) {
    int i = static_cast<int>(pick() % 2), j = static_cast<int>(pick() % 64);
    const double h = 1e-5;
    double orig = vx.value()(i, j);
    vx.value()(i, j) = orig + h;
    double fp = ag::sum_all(lpips_terms(vx, vy, fx)).value()(0, 0);
    vx.value()(i, j) = orig - h;
    double fm = ag::sum_all(lpips_terms(vx, vy, fx)).value()(0, 0);
    vx.value()(i, j) = orig;
    double fd = (fp - fm) / (2 * h);
    double ad = vx.grad()(i, j);
    CHECK(std::abs(fd - ad) / std::max({std::abs(fd), std::abs(ad), 1e-3}) < 1e-3);
  }
}

TEST_CASE("gaussian stats recover synthetic means") {
  Rng rng(8);
  std::normal_distribution<double> noise(0.0, 0.05);
  Matrix f(200, 2);
  std::vector<int> labels(200);
  for (int i = 0; i < 200; ++i) {
    labels[i] = i % 2;
    f(i, 0) = (labels[i] == 0 ? 0.0 : 4.0) + noise(rng);
    f(i, 1) = noise(rng);
  }
  auto stats = fit_gaussian_stats(f, labels);
  CHECK(std::abs(stats.class_means(0, 0) - 0.0) < 0.1);
  CHECK(std::abs(stats.class_means(1, 0) - 4.0) < 0.1);
  // precision * covariance ~ identity
  Matrix pc = stats.precision * stats.shared_covariance;
  CHECK((pc - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("identical features: default ridge fails, explicit ridge succeeds") {
  Matrix f = Matrix::Constant(10, 3, 2.0);
  std::vector<int> labels(10, 0);
  for (int i = 5; i < 10; ++i) labels[i] = 1;
  CHECK_THROWS_AS(fit_gaussian_stats(f, labels), NumericError);
  auto stats = fit_gaussian_stats(f, labels, 0.5);
  CHECK((stats.precision - 2.0 * Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("gaussian stats are label-permutation equivariant") {
  Rng rng(9);
  std::normal_distribution<double> d;
  Matrix f(60, 3);
  std::vector<int> labels(60);
  for (int i = 0; i < 60; ++i) {
    labels[i] = i % 3;
    for (int j = 0; j < 3; ++j) f(i, j) = d(rng) + labels[i];
  }
  auto s1 = fit_gaussian_stats(f, labels);
  // Swap class ids 0 and 2.
  std::vector<int> relabeled = labels;
  for (int& l : relabeled) l = l == 0 ? 2 : (l == 2 ? 0 : l);
  auto s2 = fit_gaussian_stats(f, relabeled);
  CHECK((s1.class_means.row(0) - s2.class_means.row(2)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((s1.shared_covariance - s2.shared_covariance).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mahalanobis zero at means and identity-covariance closed form") {
  Rng rng(10);
  std::normal_distribution<double> d;
  Matrix f(80, 4);
  std::vector<int> labels(80);
  for (int i = 0; i < 80; ++i) {
    labels[i] = i % 2;
    for (int j = 0; j < 4; ++j) f(i, j) = d(rng) + 3.0 * labels[i];
  }
  auto stats = fit_gaussian_stats(f, labels);
  Matrix at_mean = stats.class_means.row(1);
  CHECK(mahalanobis_score(at_mean, stats)(0) < 1e-10);

  // With forced identity covariance the score is min squared distance.
  GaussianClassStats iso = stats;
  iso.shared_covariance = Matrix::Identity(4, 4);
  iso.precision = Matrix::Identity(4, 4);
  Matrix q(5, 4);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 4; ++j) q(i, j) = d(rng);
  Vector got = mahalanobis_score(q, iso);
  for (int i = 0; i < 5; ++i) {
    double want = std::min((q.row(i) - stats.class_means.row(0)).squaredNorm(),
                           (q.row(i) - stats.class_means.row(1)).squaredNorm());
    CHECK(got(i) == doctest::Approx(want).epsilon(1e-8));
  }
}

TEST_CASE("mahalanobis is invariant under invertible linear maps") {
  Rng rng(11);
  std::normal_distribution<double> d;
  Matrix f(100, 3);
  std::vector<int> labels(100);
  for (int i = 0; i < 100; ++i) {
    labels[i] = i % 2;
    for (int j = 0; j < 3; ++j) f(i, j) = d(rng) + 2.0 * labels[i] * (j == 0);
  }
  Matrix q(6, 3);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 3; ++j) q(i, j) = d(rng);
  Matrix a(3, 3);
  a << 1.2, 0.3, 0.0, -0.4, 0.9, 0.1, 0.2, 0.0, 1.5;

  auto s1 = fit_gaussian_stats(f, labels, 0.0);
  Vector v1 = mahalanobis_score(q, s1);
  Matrix ft = f * a.transpose(), qt = q * a.transpose();
  auto s2 = fit_gaussian_stats(ft, labels, 0.0);
  Vector v2 = mahalanobis_score(qt, s2);
  CHECK((v1 - v2).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("auroc analytic and oracle cases") {
  ScoreSet perfect{Vector::LinSpaced(5, 0.0, 0.4), Vector::LinSpaced(5, 1.0, 2.0),
                   ScoreOrientation::higher_is_ood};
  CHECK(auroc(perfect) == doctest::Approx(1.0));

  ScoreSet s;
  s.id_scores = Vector(2); s.id_scores << 0.1, 0.4;
  s.ood_scores = Vector(2); s.ood_scores << 0.3, 0.9;
  s.orientation = ScoreOrientation::higher_is_ood;
  CHECK(auroc(s) == doctest::Approx(0.75));

  ScoreSet same{s.id_scores, s.id_scores, ScoreOrientation::higher_is_ood};
  CHECK(auroc(same) == doctest::Approx(0.5));
}

TEST_CASE("auroc matches brute-force oracle on random instances") {
  Rng rng(12);
  std::normal_distribution<double> d;
  for (int rep = 0; rep < 50; ++rep) {
    ScoreSet s;
    int n1 = 1 + static_cast<int>(rng() % 30), n2 = 1 + static_cast<int>(rng() % 30);
    s.id_scores = Vector(n1);
    s.ood_scores = Vector(n2);
    for (int i = 0; i < n1; ++i) s.id_scores(i) = std::round(d(rng) * 4) / 4.0;  // force ties
    for (int i = 0; i < n2; ++i) s.ood_scores(i) = std::round(d(rng) * 4) / 4.0 + 0.5;
    s.orientation = rep % 2 ? ScoreOrientation::higher_is_ood
                            : ScoreOrientation::lower_is_ood;
    CHECK(auroc(s) == doctest::Approx(auroc_oracle(s)).epsilon(1e-10));

    // Complement property: swap sides and flip orientation.
    ScoreSet sw{s.ood_scores, s.id_scores, s.orientation};
    CHECK(auroc(s) + auroc(sw) == doctest::Approx(1.0).epsilon(1e-10));

    // Invariance under strictly increasing transforms. Per-element std::exp
    // keeps equal inputs bit-equal (vectorized exp may not across lanes).
    ScoreSet mono = s;
    mono.id_scores = s.id_scores.unaryExpr([](double v) { return std::exp(3.0 * v); });
    mono.ood_scores = s.ood_scores.unaryExpr([](double v) { return std::exp(3.0 * v); });
    if (s.orientation == ScoreOrientation::higher_is_ood)
      CHECK(auroc(mono) == doctest::Approx(auroc(s)).epsilon(1e-10));
  }
}

TEST_CASE("auprc analytic and oracle cases") {
  ScoreSet perfect{Vector::LinSpaced(5, 0.0, 0.4), Vector::LinSpaced(5, 1.0, 2.0),
                   ScoreOrientation::higher_is_ood};
  CHECK(auprc(perfect) == doctest::Approx(1.0));

  ScoreSet s;
  s.id_scores = Vector(2); s.id_scores << 0.1, 0.4;
  s.ood_scores = Vector(2); s.ood_scores << 0.3, 0.9;
  CHECK(auprc(s) == doctest::Approx(auprc_oracle(s)).epsilon(1e-10));

  ScoreSet flat{Vector::Constant(6, 1.0), Vector::Constant(2, 1.0),
                ScoreOrientation::higher_is_ood};
  CHECK(auprc(flat) == doctest::Approx(2.0 / 8.0));

  Rng rng(13);
  std::normal_distribution<double> d;
  for (int rep = 0; rep < 50; ++rep) {
    ScoreSet r;
    int n1 = 1 + static_cast<int>(rng() % 25), n2 = 1 + static_cast<int>(rng() % 25);
    r.id_scores = Vector(n1);
    r.ood_scores = Vector(n2);
    for (int i = 0; i < n1; ++i) r.id_scores(i) = std::round(d(rng) * 3) / 3.0;
    for (int i = 0; i < n2; ++i) r.ood_scores(i) = std::round(d(rng) * 3) / 3.0 + 0.3;
    r.orientation = rep % 2 ? ScoreOrientation::higher_is_ood
                            : ScoreOrientation::lower_is_ood;
    CHECK(auprc(r) == doctest::Approx(auprc_oracle(r)).epsilon(1e-10));
  }
}

TEST_CASE("ece hand-enumerated example") {
  Vector conf(4);
  conf << 0.9, 0.9, 0.6, 0.6;
  std::vector<bool> correct{true, false, true, false};
  auto r = expected_calibration_error(conf, correct, 10);
  CHECK(r.ece == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(r.bin_counts[5] == 2);  // (0.5, 0.6]
  CHECK(r.bin_counts[8] == 2);  // (0.8, 0.9]
  CHECK(r.bin_accuracy[5] == doctest::Approx(0.5));
  CHECK(r.bin_confidence[8] == doctest::Approx(0.9));
}

TEST_CASE("ece edge cases and internal consistency") {
  Vector ones = Vector::Constant(8, 1.0);
  std::vector<bool> all_true(8, true);
  CHECK(expected_calibration_error(ones, all_true, 15).ece == doctest::Approx(0.0));

  Rng rng(14);
  std::uniform_real_distribution<double> u(0, 1);
  Vector conf(40);
  std::vector<bool> correct(40);
  for (int i = 0; i < 40; ++i) { conf(i) = u(rng); correct[i] = rng() % 2; }
  auto r = expected_calibration_error(conf, correct, 15);
  // Report invariant: ece recomputable from its own bins.
  double recompute = 0;
  for (int b = 0; b < 15; ++b)
    recompute += (double(r.bin_counts[b]) / 40.0) *
                 std::abs(r.bin_accuracy[b] - r.bin_confidence[b]);
  CHECK(std::abs(recompute - r.ece) < 1e-10);

  // Permutation invariance.
  Vector conf2 = conf.reverse();
  std::vector<bool> correct2(correct.rbegin(), correct.rend());
  CHECK(expected_calibration_error(conf2, correct2, 15).ece == doctest::Approx(r.ece));

  Vector bad(1); bad << 1.5;
  CHECK_THROWS_AS(expected_calibration_error(bad, {true}, 10), InvalidArgument);
}

TEST_CASE("frechet distance basic properties") {
  Rng rng(15);
  std::normal_distribution<double> d;
  Matrix a(500, 3);
  for (int i = 0; i < 500; ++i)
    for (int j = 0; j < 3; ++j) a(i, j) = d(rng);
  CHECK(frechet_distance(a, a) < 1e-6);

  Matrix b(400, 3);
  for (int i = 0; i < 400; ++i)
    for (int j = 0; j < 3; ++j) b(i, j) = d(rng) + 0.5;
  CHECK(std::abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-6);
}

TEST_CASE("frechet distance between shifted Gaussians is the squared mean gap") {
  Rng rng(16);
  std::normal_distribution<double> d;
  const int n = 10000;
  Matrix a(n, 2), b(n, 2);
  for (int i = 0; i < n; ++i) {
    a(i, 0) = d(rng); a(i, 1) = d(rng);
    b(i, 0) = d(rng) + 2.0; b(i, 1) = d(rng) - 1.0;
  }
  // ||m||^2 = 4 + 1 = 5, Monte-Carlo tolerance at 10k samples.
  CHECK(frechet_distance(a, b) == doctest::Approx(5.0).epsilon(0.05));
}

TEST_CASE("metric outputs are permutation-equivariant") {
  Rng rng(17);
  Matrix p = random_stochastic(10, 5, rng);
  std::vector<int> perm(10);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix pp(10, 5);
  for (int i = 0; i < 10; ++i) pp.row(i) = p.row(perm[i]);
  Vector h = shannon_entropy(ProbabilityBatch(p));
  Vector hp = shannon_entropy(ProbabilityBatch(pp));
  for (int i = 0; i < 10; ++i) CHECK(hp(i) == doctest::Approx(h(perm[i])));
}
