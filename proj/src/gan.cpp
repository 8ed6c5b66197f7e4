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

#include "oodforge/gan.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace oodforge::gan {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(GanKind k) {
  return k == GanKind::near_ood ? "near_ood" : "shifted";
}

GanKind gan_kind_from_string(const std::string& s) {
  if (s == "near_ood") return GanKind::near_ood;
  if (s == "shifted") return GanKind::shifted;
  throw InvalidArgument("unknown generator kind: " + s);
}

void GanTrainingConfig::validate() const {
  check(lambda_p >= 0.0 && lambda_s >= 0.0, "lambda_p and lambda_s must be >= 0");
  check(epochs >= 1, "epochs must be >= 1");
  check(batch_size >= 1, "batch_size must be >= 1");
  check(learning_rate > 0.0, "learning_rate must be > 0");
  if (kind == GanKind::near_ood)
    check(latent_dim >= 1, "near_ood generators need latent_dim >= 1");
  else
    check(latent_dim == 0,
          "shifted generators take no latent input (set latent_dim = 0); "
          "noise enters through always-on dropout");
}

void MiInterval::validate(int num_classes) const {
  check(num_classes >= 2, "MiInterval: need at least two classes");
  const double ln_k = std::log(static_cast<double>(num_classes));
  check(lo >= 0.0 && lo < hi && hi <= ln_k + 1e-6,
        "MiInterval: need 0 <= lo < hi <= ln K");
}

namespace {

double stable_softplus(double v) {
  return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

/// Freezes a network's parameters while a loss graph that must not train it
/// is under construction, restoring the previous state on scope exit.
class FreezeGuard {
 public:
  explicit FreezeGuard(const nn::Sequential& net) : net_(net) {
    auto ps = net_.params();
    was_on_ = !ps.empty() && ps.front().requires_grad();
    net_.set_requires_grad(false);
  }
  ~FreezeGuard() { net_.set_requires_grad(was_on_); }

 private:
  const nn::Sequential& net_;
  bool was_on_ = false;
};

/// E[log(1 - sigmoid(s))] = -mean softplus(s), the minimax adversarial value.
double minimax_adversarial_value(const Matrix& s) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) acc += stable_softplus(s.data()[i]);
  return -acc / static_cast<double>(s.size());
}

GeneratorLossTerms assemble_generator_loss(const Var& logits, const Var& lp_terms,
                                           const Var& mi_terms, double lambda_p,
                                           double lambda_s, double p_sign,
                                           AdversarialForm form,
                                           const std::string& what) {
  // Graph adversarial term: minimax keeps the reported form; non-saturating
  // swaps in -log D(G(.)) for healthier early-training gradients.
  Var adv = form == AdversarialForm::minimax
                ? ag::neg(ag::mean_all(ag::softplus(logits)))
                : ag::mean_all(ag::softplus(ag::neg(logits)));
  Var lp_mean = ag::mean_all(lp_terms);
  Var mi_mean = ag::mean_all(mi_terms);
  Var total = ag::add(adv, ag::add(ag::scale(lp_mean, p_sign * lambda_p),
                                   ag::scale(mi_mean, -p_sign * lambda_s)));

  GeneratorLossTerms out;
  out.total = total;
  out.adversarial = minimax_adversarial_value(logits.value());
  out.perceptual = lp_mean.value()(0, 0);
  out.semantic = mi_mean.value()(0, 0);
  out.reported = out.adversarial + p_sign * lambda_p * out.perceptual -
                 p_sign * lambda_s * out.semantic;
  if (!std::isfinite(out.reported) || !std::isfinite(total.value()(0, 0)))
    throw NumericError(what + ": non-finite loss (adversarial=" +
                       std::to_string(out.adversarial) +
                       ", perceptual=" + std::to_string(out.perceptual) +
                       ", semantic=" + std::to_string(out.semantic) + ")");
  return out;
}

}  // namespace

GeneratorLossTerms near_ood_generator_loss(
    const data::LatentBatch& z, const ImageBatch& real, const nn::Sequential& g,
    const nn::Sequential& d, const models::EnsembleHandle& ensemble,
    const metrics::FeatureExtractor& fx, double lambda_p, double lambda_s, Rng& rng,
    AdversarialForm form) {
  check(z.values.rows() == real.size(),
        "near_ood_generator_loss: latent/real batch size mismatch");
  FreezeGuard freeze_d(d);
  Var gx = g.forward(Var(z.values), false, rng);
  Var logits = d.forward(gx, false, rng);
  // LPIPS pairs generated and real samples by batch position.
  Var lp = metrics::lpips_terms(Var(real.pixels), gx, fx);
  Var mi = models::ensemble_mi_terms(ensemble, gx);
  return assemble_generator_loss(logits, lp, mi, lambda_p, lambda_s, +1.0, form,
                                 "near_ood_generator_loss");
}

GeneratorLossTerms shift_generator_loss(const ImageBatch& x, const nn::Sequential& g,
                                        const nn::Sequential& d,
                                        const models::EnsembleHandle& ensemble,
                                        const metrics::FeatureExtractor& fx,
                                        double lambda_p, double lambda_s, Rng& rng,
                                        AdversarialForm form) {
  FreezeGuard freeze_d(d);
  Var xin(x.pixels);
  Var gx = g.forward(xin, false, rng);
  Var logits = d.forward(ag::concat_cols(xin, gx), false, rng);
  Var lp = metrics::lpips_terms(xin, gx, fx);
  Var mi = models::ensemble_mi_terms(ensemble, gx);
  // Opposite regularizer signs from the unconditional case: push perceptual
  // distance up, ensemble disagreement down.
  return assemble_generator_loss(logits, lp, mi, lambda_p, lambda_s, -1.0, form,
                                 "shift_generator_loss");
}

Var gan_discriminator_loss(const ImageBatch& real, const ImageBatch& fake,
                           const nn::Sequential& d, Rng& rng) {
  check(real.shape == fake.shape, "gan_discriminator_loss: shape mismatch");
  Var sr = d.forward(Var(real.pixels), true, rng);
  Var sf = d.forward(Var(fake.pixels), true, rng);
  return ag::add(ag::mean_all(ag::softplus(ag::neg(sr))),
                 ag::mean_all(ag::softplus(sf)));
}

Var pix2pix_discriminator_loss(const ImageBatch& x, const ImageBatch& generated,
                               const nn::Sequential& d, Rng& rng) {
  check(x.shape == generated.shape, "pix2pix_discriminator_loss: shape mismatch");
  check(x.size() == generated.size(), "pix2pix_discriminator_loss: size mismatch");
  Var xin(x.pixels);
  Var sr = d.forward(ag::concat_cols(xin, xin), true, rng);
  Var sf = d.forward(ag::concat_cols(xin, Var(generated.pixels)), true, rng);
  return ag::add(ag::mean_all(ag::softplus(ag::neg(sr))),
                 ag::mean_all(ag::softplus(sf)));
}

std::shared_ptr<nn::Sequential> build_generator(GanKind kind, const ag::ImageShape& shape,
                                                int latent_dim, Rng& rng) {
  check(shape.height % 4 == 0 && shape.width % 4 == 0,
        "generator registry needs spatial dims divisible by 4");
  const int h4 = shape.height / 4, w4 = shape.width / 4;
  const int h2 = shape.height / 2, w2 = shape.width / 2;
  auto net = std::make_shared<nn::Sequential>();
  if (kind == GanKind::near_ood) {
    check(latent_dim >= 1, "build_generator: near_ood needs latent_dim >= 1");
    net->emplace<nn::Dense>(latent_dim, 64 * h4 * w4, rng);
    net->emplace<nn::Activation>(nn::Activation::Kind::relu);
    net->emplace<nn::Upsample2>(ag::ImageShape{64, h4, w4});
    net->emplace<nn::Conv2d>(ag::ImageShape{64, h2, w2}, 32, 3, 1, 1, rng);
    net->emplace<nn::Activation>(nn::Activation::Kind::relu);
    net->emplace<nn::Upsample2>(ag::ImageShape{32, h2, w2});
    net->emplace<nn::Conv2d>(ag::ImageShape{32, shape.height, shape.width}, 16, 3, 1, 1,
                             rng);
    net->emplace<nn::Activation>(nn::Activation::Kind::relu);
    // Full-resolution refinement pass: sharpens strokes that nearest-neighbor
    // upsampling alone leaves blocky.
    net->emplace<nn::Conv2d>(ag::ImageShape{16, shape.height, shape.width},
                             shape.channels, 3, 1, 1, rng);
    net->emplace<nn::Activation>(nn::Activation::Kind::tanh);
  } else {
    // Conditional encoder-decoder; the always-on dropout is the noise source.
    net->emplace<nn::Conv2d>(shape, 16, 3, 1, 1, rng);
    net->emplace<nn::Activation>(nn::Activation::Kind::leaky_relu);
    net->emplace<nn::AvgPool2>(ag::ImageShape{16, shape.height, shape.width});
    net->emplace<nn::Conv2d>(ag::ImageShape{16, h2, w2}, 32, 3, 1, 1, rng);
    net->emplace<nn::Activation>(nn::Activation::Kind::leaky_relu);
    net->emplace<nn::Dropout>(0.5, /*always_on=*/true);
    net->emplace<nn::Upsample2>(ag::ImageShape{32, h2, w2});
    net->emplace<nn::Conv2d>(ag::ImageShape{32, shape.height, shape.width},
                             shape.channels, 3, 1, 1, rng);
    net->emplace<nn::Activation>(nn::Activation::Kind::tanh);
  }
  return net;
}

std::shared_ptr<nn::Sequential> build_discriminator(GanKind kind,
                                                    const ag::ImageShape& shape,
                                                    Rng& rng) {
  const int in_c = kind == GanKind::near_ood ? shape.channels : 2 * shape.channels;
  const int h2 = shape.height / 2, w2 = shape.width / 2;
  const int h4 = shape.height / 4, w4 = shape.width / 4;
  auto net = std::make_shared<nn::Sequential>();
  // Full-resolution first stage: stroke sharpness lives at pixel scale and is
  // lost if the first conv already downsamples.
  net->emplace<nn::Conv2d>(ag::ImageShape{in_c, shape.height, shape.width}, 16, 3, 1, 1,
                           rng);
  net->emplace<nn::Activation>(nn::Activation::Kind::leaky_relu);
  net->emplace<nn::Conv2d>(ag::ImageShape{16, shape.height, shape.width}, 32, 3, 2, 1,
                           rng);
  net->emplace<nn::Activation>(nn::Activation::Kind::leaky_relu);
  net->emplace<nn::Conv2d>(ag::ImageShape{32, h2, w2}, 48, 3, 2, 1, rng);
  net->emplace<nn::Activation>(nn::Activation::Kind::leaky_relu);
  net->emplace<nn::Dense>(48 * h4 * w4, 1, rng);
  return net;
}

ImageBatch GeneratorArtifact::sample(int n, Rng& rng) const {
  check(config.kind == GanKind::near_ood, "sample(): not an unconditional generator");
  auto z = data::sample_latent(n, config.latent_dim, rng);
  Matrix px = generator->forward(Var(z.values), false, rng).value();
  return ImageBatch(std::move(px), image_shape);
}

ImageBatch GeneratorArtifact::transform(const ImageBatch& x, Rng& rng) const {
  check(config.kind == GanKind::shifted, "transform(): not a conditional generator");
  check(x.shape == image_shape, "transform(): input shape mismatch");
  Matrix px = generator->forward(Var(x.pixels), false, rng).value();
  return ImageBatch(std::move(px), image_shape);
}

namespace {

std::string combined_checkpoint_id(const nn::Sequential& g, const nn::Sequential& d) {
  return hex64(g.state_hash() ^ (d.state_hash() * 0x9e3779b97f4a7c15ULL));
}

json config_to_json(const GanTrainingConfig& c) {
  return json{{"kind", to_string(c.kind)},
              {"lambda_p", c.lambda_p},
              {"lambda_s", c.lambda_s},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"seed", c.seed},
              {"latent_dim", c.latent_dim}};
}

GanTrainingConfig config_from_json(const json& j) {
  GanTrainingConfig c;
  c.kind = gan_kind_from_string(j.at("kind").get<std::string>());
  c.lambda_p = j.at("lambda_p").get<double>();
  c.lambda_s = j.at("lambda_s").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.latent_dim = j.at("latent_dim").get<int>();
  return c;
}

void save_net(const nn::Sequential& net, const fs::path& dir, const std::string& tag) {
  auto st = net.state();
  for (std::size_t i = 0; i < st.size(); ++i)
    data::write_tensor_f64(dir / (tag + "_" + std::to_string(i) + ".bin"), st[i],
                           {static_cast<std::uint64_t>(st[i].rows()),
                            static_cast<std::uint64_t>(st[i].cols())});
}

void load_net(const nn::Sequential& net, const fs::path& dir, const std::string& tag) {
  std::vector<Matrix> st;
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    std::vector<std::uint64_t> dims;
    st.push_back(
        data::read_tensor_f64(dir / (tag + "_" + std::to_string(i) + ".bin"), dims));
  }
  net.load_state(st);
}

}  // namespace

void GeneratorArtifact::save(const fs::path& dir) const {
  fs::create_directories(dir);
  json j{{"checkpoint_id", checkpoint_id},
         {"config", config_to_json(config)},
         {"generator_loss_curve", generator_loss_curve},
         {"discriminator_loss_curve", discriminator_loss_curve},
         {"mean_mi_curve", mean_mi_curve},
         {"fid_to_train", fid_to_train},
         {"mode_collapse_warning", mode_collapse_warning},
         {"image_shape", {image_shape.channels, image_shape.height, image_shape.width}}};
  std::ofstream(dir / "artifact.json") << j.dump(2) << "\n";
  save_net(*generator, dir, "g");
  save_net(*discriminator, dir, "d");
}

GeneratorArtifact GeneratorArtifact::load(const fs::path& dir) {
  std::ifstream mf(dir / "artifact.json");
  if (!mf) throw IoError("artifact load: missing artifact.json in " + dir.string());
  json j = json::parse(mf);
  GeneratorArtifact a;
  a.config = config_from_json(j.at("config"));
  auto sh = j.at("image_shape");
  a.image_shape = {sh.at(0).get<int>(), sh.at(1).get<int>(), sh.at(2).get<int>()};
  a.generator_loss_curve = j.at("generator_loss_curve").get<std::vector<double>>();
  a.discriminator_loss_curve = j.at("discriminator_loss_curve").get<std::vector<double>>();
  a.mean_mi_curve = j.at("mean_mi_curve").get<std::vector<double>>();
  a.fid_to_train = j.at("fid_to_train").get<double>();
  a.mode_collapse_warning = j.at("mode_collapse_warning").get<bool>();
  Rng rng(a.config.seed);
  a.generator = build_generator(a.config.kind, a.image_shape, a.config.latent_dim, rng);
  a.discriminator = build_discriminator(a.config.kind, a.image_shape, rng);
  load_net(*a.generator, dir, "g");
  load_net(*a.discriminator, dir, "d");
  a.checkpoint_id = combined_checkpoint_id(*a.generator, *a.discriminator);
  if (a.checkpoint_id != j.at("checkpoint_id").get<std::string>())
    throw IoError("artifact load: checkpoint hash mismatch in " + dir.string());
  return a;
}

GeneratorArtifact train_generator(const GanTrainingConfig& cfg, const LabeledDataset& data,
                                  const models::EnsembleHandle& ensemble,
                                  const metrics::FeatureExtractor& fx) {
  cfg.validate();
  const ag::ImageShape shape = data.descriptor.shape;
  check(fx.input_shape == shape, "train_generator: extractor shape mismatch");

  Rng rng(cfg.seed);
  auto g = build_generator(cfg.kind, shape, cfg.latent_dim, rng);
  auto d = build_discriminator(cfg.kind, shape, rng);
  nn::Adam g_opt(g->params(), cfg.learning_rate, cfg.beta1, cfg.beta2);
  nn::Adam d_opt(d->params(), cfg.learning_rate, cfg.beta1, cfg.beta2);

  const int n = static_cast<int>(data.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  GeneratorArtifact art;
  art.config = cfg;
  art.image_shape = shape;
  int low_variance_epochs = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double g_acc = 0.0, d_acc = 0.0, mi_acc = 0.0, var_acc = 0.0;
    int batches = 0;
    for (int start = 0; start + cfg.batch_size <= n; start += cfg.batch_size) {
      std::vector<int> idx(order.begin() + start, order.begin() + start + cfg.batch_size);
      ImageBatch xb = data.images.rows(idx);

      // Discriminator steps on detached fakes. The unconditional critic needs
      // two steps per generator step to stay ahead on low-complexity image
      // sets; the conditional critic tells (x, x) from (x, G(x)) easily and
      // a single step per generator step is already the strong side of that
      // game.
      data::LatentBatch z;
      ImageBatch fake;
      if (cfg.kind == GanKind::near_ood) {
        for (int critic = 0; critic < 2; ++critic) {
          z = data::sample_latent(cfg.batch_size, cfg.latent_dim, rng);
          fake = ImageBatch(g->forward(Var(z.values), false, rng).value(), shape);
          ag::backward(gan_discriminator_loss(xb, fake, *d, rng));
          d_opt.step();
        }
      } else {
        fake = ImageBatch(g->forward(Var(xb.pixels), false, rng).value(), shape);
        ag::backward(pix2pix_discriminator_loss(xb, fake, *d, rng));
        d_opt.step();
      }

      GeneratorLossTerms terms =
          cfg.kind == GanKind::near_ood
              ? near_ood_generator_loss(z, xb, *g, *d, ensemble, fx, cfg.lambda_p,
                                        cfg.lambda_s, rng,
                                        AdversarialForm::non_saturating)
              : shift_generator_loss(xb, *g, *d, ensemble, fx, cfg.lambda_p,
                                     cfg.lambda_s, rng,
                                     AdversarialForm::non_saturating);
      ag::backward(terms.total);
      g_opt.step();

      Rng drng(cfg.seed + 1);
      double dval = cfg.kind == GanKind::near_ood
                        ? gan_discriminator_loss(xb, fake, *d, drng).value()(0, 0)
                        : pix2pix_discriminator_loss(xb, fake, *d, drng).value()(0, 0);
      g_acc += terms.reported;
      d_acc += dval;
      mi_acc += terms.semantic;
      const Matrix& fp = fake.pixels;
      var_acc += (fp.array() - fp.mean()).square().mean();
      ++batches;
    }
    check(batches > 0, "train_generator: batch_size exceeds dataset size");
    art.generator_loss_curve.push_back(g_acc / batches);
    art.discriminator_loss_curve.push_back(d_acc / batches);
    art.mean_mi_curve.push_back(mi_acc / batches);
    // Mode-collapse heuristic: persistently near-constant generated pixels.
    low_variance_epochs = var_acc / batches < 1e-3 ? low_variance_epochs + 1 : 0;
    if (low_variance_epochs >= 2) art.mode_collapse_warning = true;
  }

  art.generator = g;
  art.discriminator = d;
  art.checkpoint_id = combined_checkpoint_id(*g, *d);

  // Pixel-space Frechet distance between generated and real samples; a
  // coarse convergence indicator recorded with the artifact.
  const int m = std::min(n, 512);
  std::vector<int> head(m);
  std::iota(head.begin(), head.end(), 0);
  ImageBatch real_ref = data.images.rows(head);
  Rng frng(cfg.seed + 2);
  ImageBatch gen_ref = cfg.kind == GanKind::near_ood ? art.sample(m, frng)
                                                     : art.transform(real_ref, frng);
  art.fid_to_train = metrics::frechet_distance(gen_ref.pixels, real_ref.pixels);
  return art;
}

std::vector<LambdaCell> default_lambda_grid(GanKind kind) {
  if (kind == GanKind::shifted) return {{2.0, 1.0}};
  std::vector<LambdaCell> grid;
  for (int i = 0; i <= 10; ++i) grid.push_back({1.0, 0.5 + 0.25 * i});
  return grid;
}

std::vector<GridCellResult> grid_search_lambda(GanKind kind,
                                               const std::vector<LambdaCell>& grid,
                                               const LabeledDataset& data,
                                               const GanTrainingConfig& base,
                                               const models::EnsembleHandle& ensemble,
                                               const metrics::FeatureExtractor& fx) {
  check(!grid.empty(), "grid_search_lambda: empty grid");
  std::vector<GridCellResult> results;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    GridCellResult r;
    r.cell = grid[i];
    GanTrainingConfig cfg = base;
    cfg.kind = kind;
    cfg.lambda_p = grid[i].lambda_p;
    cfg.lambda_s = grid[i].lambda_s;
    cfg.seed = base.seed + i;
    try {
      r.artifact = train_generator(cfg, data, ensemble, fx);
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    results.push_back(std::move(r));
  }
  return results;
}

MiInterval select_mi_interval(const Vector& val_mi, const Vector& candidate_mi,
                              int num_classes, double width) {
  check(val_mi.size() > 0 && candidate_mi.size() > 0,
        "select_mi_interval: empty input");
  check(width > 0.0, "select_mi_interval: width must be > 0");
  check(num_classes >= 2, "select_mi_interval: need at least two classes");
  const double lo_all = std::min(val_mi.minCoeff(), candidate_mi.minCoeff());
  const double hi_all = std::max(val_mi.maxCoeff(), candidate_mi.maxCoeff());
  if (hi_all - lo_all < 1e-12)
    throw InvalidArgument(
        "select_mi_interval: degenerate (all-equal) MI values; pick the "
        "interval manually");

  const double ln_k = std::log(static_cast<double>(num_classes));
  constexpr int kScanPoints = 200;
  double best_t = 0.0, best_overlap = std::numeric_limits<double>::infinity();
  for (int i = 0; i < kScanPoints; ++i) {
    const double t = ln_k * i / (kScanPoints - 1);
    const double val_above =
        (val_mi.array() > t).count() / static_cast<double>(val_mi.size());
    const double cand_below =
        (candidate_mi.array() < t).count() / static_cast<double>(candidate_mi.size());
    const double overlap = val_above + cand_below;
    if (overlap < best_overlap) {  // strict: ties keep the smaller threshold
      best_overlap = overlap;
      best_t = t;
    }
  }
  MiInterval iv{best_t, std::min(best_t + width, ln_k)};
  if (iv.hi <= iv.lo)
    throw InvalidArgument("select_mi_interval: selected lower bound leaves no "
                          "room below ln K; pick the interval manually");
  iv.validate(num_classes);
  return iv;
}

FilterResult filter_by_mi(const std::function<ImageBatch(int)>& next_batch,
                          const models::EnsembleHandle& ensemble,
                          const MiInterval& interval, int target_count,
                          std::int64_t candidate_budget, double acceptance_floor) {
  interval.validate(ensemble.num_classes());
  check(target_count > 0, "filter_by_mi: target_count must be > 0");

  std::vector<Matrix> accepted_rows;
  FilterResult out;
  constexpr int kChunk = 256;
  ag::ImageShape shape{};
  while (static_cast<int>(accepted_rows.size()) < target_count) {
    ImageBatch chunk = next_batch(kChunk);
    if (chunk.size() == 0) break;  // stream exhausted
    shape = chunk.shape;
    Vector mi = metrics::mutual_information(models::ensemble_predict(ensemble, chunk));
    for (Eigen::Index i = 0; i < mi.size(); ++i) {
      const std::int64_t pos = out.stats.candidates_generated++;
      if (mi(i) < interval.lo) {
        ++out.stats.rejected_low;
      } else if (mi(i) > interval.hi) {
        ++out.stats.rejected_high;
      } else if (static_cast<int>(accepted_rows.size()) < target_count) {
        ++out.stats.accepted;
        accepted_rows.push_back(chunk.pixels.row(i));
        out.source_indices.push_back(pos);
      } else {
        // Past the target inside this chunk; not consumed.
        --out.stats.candidates_generated;
        break;
      }
    }
    if (out.stats.candidates_generated >= candidate_budget) {
      const double rate = static_cast<double>(out.stats.accepted) /
                          static_cast<double>(out.stats.candidates_generated);
      if (rate < acceptance_floor)
        throw NumericError(
            "filter_by_mi: acceptance rate " + std::to_string(rate) + " below floor (" +
            std::to_string(out.stats.accepted) + " accepted, " +
            std::to_string(out.stats.rejected_low) + " low, " +
            std::to_string(out.stats.rejected_high) + " high of " +
            std::to_string(out.stats.candidates_generated) + " candidates)");
      if (static_cast<int>(accepted_rows.size()) < target_count) break;  // budget spent
    }
  }

  Matrix px(static_cast<Eigen::Index>(accepted_rows.size()),
            shape.size() > 0 ? shape.size() : 0);
  for (std::size_t i = 0; i < accepted_rows.size(); ++i) px.row(i) = accepted_rows[i];
  out.samples = accepted_rows.empty() ? ImageBatch() : ImageBatch(std::move(px), shape);
  return out;
}

FilterResult filter_by_mi(const ImageBatch& candidates,
                          const models::EnsembleHandle& ensemble,
                          const MiInterval& interval, int target_count) {
  Eigen::Index cursor = 0;
  auto stream = [&](int want) {
    const Eigen::Index take = std::min<Eigen::Index>(want, candidates.size() - cursor);
    if (take <= 0) return ImageBatch();
    std::vector<int> idx(take);
    std::iota(idx.begin(), idx.end(), static_cast<int>(cursor));
    cursor += take;
    return candidates.rows(idx);
  };
  return filter_by_mi(stream, ensemble, interval, target_count, candidates.size(),
                      0.0);
}

}  // namespace oodforge::gan
