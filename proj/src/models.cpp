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

#include "oodforge/models.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

namespace oodforge::models {

namespace fs = std::filesystem;
using ag::ImageShape;
using ag::Var;
using nlohmann::json;

namespace {

/// Fixed per-channel standardization as a non-trainable first layer, so
/// every classifier consumes raw [-1, 1] pixels.
class ChannelStandardize : public nn::Layer {
 public:
  ChannelStandardize(const data::DatasetDescriptor& d) {
    const int hw = d.shape.height * d.shape.width;
    neg_mean_.resize(1, d.shape.size());
    inv_std_.resize(1, d.shape.size());
    for (int c = 0; c < d.shape.channels; ++c) {
      neg_mean_.middleCols(c * hw, hw).setConstant(-d.channel_mean[c]);
      inv_std_.middleCols(c * hw, hw).setConstant(1.0 / d.channel_stddev[c]);
    }
  }
  Var forward(const Var& x, bool, Rng&) override {
    Var centered = ag::add_rowvec(x, Var(neg_mean_));
    Matrix scale = inv_std_.replicate(x.rows(), 1);
    return ag::mul(centered, Var(std::move(scale)));
  }
  std::string kind() const override { return "channel_standardize"; }

 private:
  Matrix neg_mean_, inv_std_;
};

struct Blueprint {
  std::shared_ptr<nn::Sequential> net;
  std::vector<int> conv_taps;
  std::vector<ImageShape> conv_tap_shapes;
  int penultimate = -1;
};

Blueprint build_arch(const std::string& arch, const data::DatasetDescriptor& d,
                     Rng& rng) {
  const ImageShape in = d.shape;
  const int k = d.num_classes;
  Blueprint bp;
  bp.net = std::make_shared<nn::Sequential>();
  auto& net = *bp.net;
  net.emplace<ChannelStandardize>(d);  // layer 0 in every arch

  if (arch == "lenet-small") {
    auto& c1 = net.emplace<nn::Conv2d>(in, 6, 5, 1, 2, rng);
    net.emplace<nn::Activation>(nn::Activation::Kind::relu);
    net.emplace<nn::AvgPool2>(c1.out_shape());
    ImageShape s1{6, in.height / 2, in.width / 2};
    auto& c2 = net.emplace<nn::Conv2d>(s1, 12, 5, 1, 2, rng);
    net.emplace<nn::Activation>(nn::Activation::Kind::relu);
    net.emplace<nn::AvgPool2>(c2.out_shape());
    ImageShape s2{12, in.height / 4, in.width / 4};
    net.emplace<nn::Dense>(s2.size(), 84, rng);
    net.emplace<nn::Activation>(nn::Activation::Kind::relu);
    net.emplace<nn::Dense>(84, k, rng);
    bp.conv_taps = {2, 5};
    bp.conv_tap_shapes = {c1.out_shape(), c2.out_shape()};
    bp.penultimate = 8;
  } else if (arch == "cnn-tiny") {
    auto& c1 = net.emplace<nn::Conv2d>(in, 8, 3, 1, 1, rng);
    net.emplace<nn::Activation>(nn::Activation::Kind::relu);
    net.emplace<nn::AvgPool2>(c1.out_shape());
    ImageShape s1{8, in.height / 2, in.width / 2};
    auto& c2 = net.emplace<nn::Conv2d>(s1, 16, 3, 1, 1, rng);
    net.emplace<nn::Activation>(nn::Activation::Kind::relu);
    net.emplace<nn::AvgPool2>(c2.out_shape());
    ImageShape s2{16, in.height / 4, in.width / 4};
    net.emplace<nn::Dense>(s2.size(), 64, rng);
    net.emplace<nn::Activation>(nn::Activation::Kind::relu);
    net.emplace<nn::Dense>(64, k, rng);
    bp.conv_taps = {2, 5};
    bp.conv_tap_shapes = {c1.out_shape(), c2.out_shape()};
    bp.penultimate = 8;
  } else if (arch == "mlp-small") {
    net.emplace<nn::Dense>(in.size(), 128, rng);
    net.emplace<nn::Activation>(nn::Activation::Kind::relu);
    net.emplace<nn::Dense>(128, k, rng);
    bp.penultimate = 2;
  } else if (arch == "mlp-wide") {
    net.emplace<nn::Dense>(in.size(), 256, rng);
    net.emplace<nn::Activation>(nn::Activation::Kind::relu);
    net.emplace<nn::Dense>(256, 64, rng);
    net.emplace<nn::Activation>(nn::Activation::Kind::relu);
    net.emplace<nn::Dense>(64, k, rng);
    bp.penultimate = 4;
  } else {
    throw InvalidArgument("unknown architecture: " + arch);
  }
  return bp;
}

}  // namespace

std::vector<std::string> registered_architectures() {
  return {"lenet-small", "cnn-tiny", "mlp-small", "mlp-wide"};
}

ClassifierHandle::ClassifierHandle(std::string arch, data::DatasetDescriptor desc,
                                   int num_classes, std::shared_ptr<nn::Sequential> net,
                                   std::vector<int> conv_taps,
                                   std::vector<ImageShape> conv_tap_shapes,
                                   int penultimate, TrainingRecord record)
    : arch_(std::move(arch)),
      num_classes_(num_classes),
      desc_(std::move(desc)),
      net_(std::move(net)),
      conv_taps_(std::move(conv_taps)),
      conv_tap_shapes_(std::move(conv_tap_shapes)),
      penultimate_(penultimate),
      record_(record) {
  refresh_checkpoint_id();
}

void ClassifierHandle::refresh_checkpoint_id() {
  checkpoint_id_ = hex64(net_->state_hash());
}

Matrix ClassifierHandle::logits(const ImageBatch& x) const {
  check(x.shape == desc_.shape, "logits: input shape mismatch");
  return logits_var(Var(x.pixels)).value();
}

Var ClassifierHandle::logits_var(const Var& pixels) const {
  Rng rng(0);  // evaluation mode; no stochastic layers active
  return net_->forward(pixels, false, rng);
}

double ClassifierHandle::accuracy(const LabeledDataset& ds) const {
  Matrix lg = logits(ds.images);
  long hits = 0;
  for (Eigen::Index i = 0; i < lg.rows(); ++i) {
    Eigen::Index arg;
    lg.row(i).maxCoeff(&arg);
    if (static_cast<int>(arg) == ds.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(lg.rows());
}

std::vector<std::string> ClassifierHandle::feature_layers() const {
  std::vector<std::string> out{"penultimate"};
  for (std::size_t i = 0; i < conv_taps_.size(); ++i)
    out.push_back("conv" + std::to_string(i));
  return out;
}

Matrix ClassifierHandle::features(const ImageBatch& x, const std::string& layer) const {
  check(x.shape == desc_.shape, "features: input shape mismatch");
  int idx = -1;
  if (layer == "penultimate") {
    idx = penultimate_;
  } else if (layer.rfind("conv", 0) == 0) {
    int t = std::stoi(layer.substr(4));
    check(t >= 0 && t < static_cast<int>(conv_taps_.size()),
          "features: unknown layer " + layer);
    idx = conv_taps_[t];
  } else {
    throw InvalidArgument("features: unknown layer " + layer);
  }
  Rng rng(0);
  auto acts = net_->forward_all(Var(x.pixels), false, rng);
  return acts[idx].value();
}

metrics::FeatureExtractor ClassifierHandle::feature_extractor() const {
  check(!conv_taps_.empty(),
        "feature_extractor: architecture " + arch_ + " has no conv taps");
  metrics::FeatureExtractor fx;
  fx.backbone_id = arch_ + ":" + checkpoint_id_;
  fx.net = net_;
  fx.input_shape = desc_.shape;
  fx.tap_layers = conv_taps_;
  fx.tap_shapes = conv_tap_shapes_;
  return fx;
}

void ClassifierHandle::save(const fs::path& dir) const {
  fs::create_directories(dir);
  json j{{"architecture_id", arch_},
         {"checkpoint_id", checkpoint_id_},
         {"num_classes", num_classes_},
         {"dataset",
          {{"name", desc_.name},
           {"shape", {desc_.shape.channels, desc_.shape.height, desc_.shape.width}},
           {"num_classes", desc_.num_classes},
           {"class_names", desc_.class_names},
           {"channel_mean", desc_.channel_mean},
           {"channel_stddev", desc_.channel_stddev}}},
         {"record",
          {{"seed", record_.seed},
           {"epochs", record_.epochs},
           {"learning_rate", record_.learning_rate},
           {"momentum", record_.momentum},
           {"final_loss", record_.final_loss},
           {"train_accuracy", record_.train_accuracy},
           {"test_accuracy", record_.test_accuracy},
           {"outlier_dataset_id", record_.outlier_dataset_id}}}};
  std::ofstream(dir / "meta.json") << j.dump(2) << "\n";
  auto st = net_->state();
  for (std::size_t i = 0; i < st.size(); ++i)
    data::write_tensor_f64(dir / ("weights_" + std::to_string(i) + ".bin"), st[i],
                           {static_cast<std::uint64_t>(st[i].rows()),
                            static_cast<std::uint64_t>(st[i].cols())});
}

ClassifierHandle ClassifierHandle::load(const fs::path& dir) {
  std::ifstream mf(dir / "meta.json");
  if (!mf) throw IoError("classifier load: missing meta.json in " + dir.string());
  json j = json::parse(mf);
  data::DatasetDescriptor d;
  auto dj = j.at("dataset");
  d.name = dj.at("name").get<std::string>();
  auto sh = dj.at("shape");
  d.shape = ImageShape{sh.at(0).get<int>(), sh.at(1).get<int>(), sh.at(2).get<int>()};
  d.num_classes = dj.at("num_classes").get<int>();
  d.class_names = dj.at("class_names").get<std::vector<std::string>>();
  d.channel_mean = dj.at("channel_mean").get<std::vector<double>>();
  d.channel_stddev = dj.at("channel_stddev").get<std::vector<double>>();

  TrainingRecord rec;
  auto rj = j.at("record");
  rec.seed = rj.at("seed").get<std::uint64_t>();
  rec.epochs = rj.at("epochs").get<int>();
  rec.learning_rate = rj.at("learning_rate").get<double>();
  rec.momentum = rj.at("momentum").get<double>();
  rec.final_loss = rj.at("final_loss").get<double>();
  rec.train_accuracy = rj.at("train_accuracy").get<double>();
  rec.test_accuracy = rj.at("test_accuracy").get<double>();
  rec.outlier_dataset_id = rj.at("outlier_dataset_id").get<std::string>();

  std::string arch = j.at("architecture_id").get<std::string>();
  Rng rng(rec.seed);
  Blueprint bp = build_arch(arch, d, rng);
  std::vector<Matrix> st;
  for (std::size_t i = 0; i < bp.net->params().size(); ++i) {
    std::vector<std::uint64_t> dims;
    st.push_back(data::read_tensor_f64(dir / ("weights_" + std::to_string(i) + ".bin"), dims));
  }
  bp.net->load_state(st);
  ClassifierHandle h(arch, d, j.at("num_classes").get<int>(), bp.net, bp.conv_taps,
                     bp.conv_tap_shapes, bp.penultimate, rec);
  if (h.checkpoint_id() != j.at("checkpoint_id").get<std::string>())
    throw IoError("classifier load: checkpoint hash mismatch in " + dir.string());
  return h;
}

EnsembleHandle::EnsembleHandle(std::vector<ClassifierHandle> members, EnsembleRole role)
    : members_(std::move(members)), role_(role) {
  check(!members_.empty(), "EnsembleHandle: empty member list");
  std::set<std::string> archs;
  for (const auto& m : members_) {
    check(m.num_classes() == members_.front().num_classes(),
          "EnsembleHandle: members disagree on K");
    check(m.input_descriptor().shape == members_.front().input_descriptor().shape,
          "EnsembleHandle: members disagree on input shape");
    archs.insert(m.architecture_id());
  }
  if (role_ == EnsembleRole::training_loss_ensemble)
    check(archs.size() >= 2,
          "training_loss_ensemble requires >= 2 distinct architectures");
  else
    check(archs.size() == 1,
          "evaluation_ensemble members must share one architecture");
}

ClassifierHandle build_classifier(const std::string& arch,
                                  const data::DatasetDescriptor& desc,
                                  std::uint64_t seed) {
  Rng rng(seed);
  Blueprint bp = build_arch(arch, desc, rng);
  TrainingRecord rec;
  rec.seed = seed;
  return ClassifierHandle(arch, desc, desc.num_classes, bp.net, bp.conv_taps,
                          bp.conv_tap_shapes, bp.penultimate, rec);
}

ClassifierHandle train_classifier(const std::string& arch, const LabeledDataset& train,
                                  const TrainingConfig& cfg, const LabeledDataset* test,
                                  const ImageBatch* outliers,
                                  const std::string& outlier_id) {
  Rng rng(cfg.seed);
  Blueprint bp = build_arch(arch, train.descriptor, rng);
  auto params = bp.net->params();
  nn::Sgd opt(params, cfg.learning_rate, cfg.momentum);

  const int n = static_cast<int>(train.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  double final_loss = 0.0;
  int outlier_cursor = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (std::find(cfg.lr_drop_epochs.begin(), cfg.lr_drop_epochs.end(), epoch) !=
        cfg.lr_drop_epochs.end())
      opt.set_lr(opt.lr() * cfg.lr_drop_factor);
    std::shuffle(order.begin(), order.end(), rng);
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int bs = std::min(cfg.batch_size, n - start);
      Matrix xb(bs, train.images.pixels.cols());
      std::vector<int> yb(bs);
      for (int i = 0; i < bs; ++i) {
        xb.row(i) = train.images.pixels.row(order[start + i]);
        yb[i] = train.labels[order[start + i]];
      }
      Var x(std::move(xb));
      Var loss = nn::cross_entropy(bp.net->forward(x, true, rng), yb);
      if (outliers) {
        const int on = static_cast<int>(outliers->size());
        Matrix ob(bs, outliers->pixels.cols());
        for (int i = 0; i < bs; ++i)
          ob.row(i) = outliers->pixels.row((outlier_cursor + i) % on);
        outlier_cursor = (outlier_cursor + bs) % on;
        Var uce = nn::uniform_cross_entropy(bp.net->forward(Var(std::move(ob)), true, rng));
        loss = ag::add(loss, ag::scale(uce, cfg.outlier_beta));
      }
      final_loss = loss.value()(0, 0);
      if (!std::isfinite(final_loss))
        throw NumericError("train_classifier: loss diverged (non-finite) at epoch " +
                           std::to_string(epoch));
      ag::backward(loss);
      opt.step();
    }
  }

  TrainingRecord rec;
  rec.seed = cfg.seed;
  rec.epochs = cfg.epochs;
  rec.learning_rate = cfg.learning_rate;
  rec.momentum = cfg.momentum;
  rec.final_loss = final_loss;
  rec.outlier_dataset_id = outliers ? outlier_id : "";
  ClassifierHandle h(arch, train.descriptor, train.descriptor.num_classes, bp.net,
                     bp.conv_taps, bp.conv_tap_shapes, bp.penultimate, rec);
  // Accuracy on a capped subset keeps epoch-0 handles cheap too.
  const int cap = std::min<int>(n, 2000);
  std::vector<int> head(cap);
  std::iota(head.begin(), head.end(), 0);
  LabeledDataset sub;
  sub.images = train.images.rows(head);
  sub.labels.assign(train.labels.begin(), train.labels.begin() + cap);
  sub.descriptor = train.descriptor;
  rec.train_accuracy = h.accuracy(sub);
  rec.test_accuracy = test ? h.accuracy(*test) : 0.0;
  return ClassifierHandle(arch, train.descriptor, train.descriptor.num_classes, bp.net,
                          bp.conv_taps, bp.conv_tap_shapes, bp.penultimate, rec);
}

metrics::EnsemblePrediction ensemble_predict(const EnsembleHandle& e,
                                             const ImageBatch& x) {
  std::vector<metrics::ProbabilityBatch> members;
  for (const auto& m : e.members()) {
    Var p = ag::softmax_rows(Var(m.logits(x)));
    members.emplace_back(p.value());
  }
  return metrics::EnsemblePrediction(std::move(members));
}

Var ensemble_mi_terms(const EnsembleHandle& e, const Var& pixels) {
  const double t = static_cast<double>(e.size());
  Var p_mean;
  Var h_sum;
  for (const auto& m : e.members()) {
    // Member weights are constants for this graph.
    m.net()->set_requires_grad(false);
    Var logits = m.logits_var(pixels);
    Var logp = ag::log_softmax_rows(logits);
    Var p = ag::softmax_rows(logits);
    Var h = ag::neg(ag::row_sum(ag::mul(p, logp)));  // [N, 1]
    p_mean = p_mean.defined() ? ag::add(p_mean, p) : p;
    h_sum = h_sum.defined() ? ag::add(h_sum, h) : h;
  }
  p_mean = ag::scale(p_mean, 1.0 / t);
  Var log_mean = ag::log_op(ag::add_const(p_mean, 1e-12));
  Var h_mean = ag::neg(ag::row_sum(ag::mul(p_mean, log_mean)));
  return ag::sub(h_mean, ag::scale(h_sum, 1.0 / t));
}

Matrix extract_features(const ClassifierHandle& m, const ImageBatch& x,
                        const std::string& layer) {
  return m.features(x, layer);
}

LogitCache::LogitCache(fs::path dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_);
}

Matrix LogitCache::logits(const ClassifierHandle& m, const ImageBatch& x,
                          std::uint64_t fingerprint) {
  const std::string key = m.checkpoint_id() + "_" + hex64(fingerprint);
  if (auto it = mem_.find(key); it != mem_.end()) return it->second;
  fs::path file = dir_ / (key + ".bin");
  if (fs::exists(file)) {
    std::vector<std::uint64_t> dims;
    Matrix lg = data::read_tensor_f64(file, dims);
    mem_[key] = lg;
    return lg;
  }
  Matrix lg = m.logits(x);
  data::write_tensor_f64(file, lg,
                         {static_cast<std::uint64_t>(lg.rows()),
                          static_cast<std::uint64_t>(lg.cols())});
  mem_[key] = lg;
  return lg;
}

}  // namespace oodforge::models
