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

#ifndef OODFORGE_NN_HPP
#define OODFORGE_NN_HPP

#include "oodforge/autograd.hpp"

#include <memory>
#include <string>
#include <vector>

namespace oodforge::nn {

using ag::ImageShape;
using ag::Var;

/// A layer owns its parameter Vars (leaves with requires_grad) and maps an
/// activation Var to the next one. `train` toggles dropout-style behavior;
/// `rng` drives any stochastic layer and is ignored by deterministic ones.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Var forward(const Var& x, bool train, Rng& rng) = 0;
  virtual std::vector<Var> params() { return {}; }
  virtual std::string kind() const = 0;
};

class Dense : public Layer {
 public:
  Dense(int in, int out, Rng& rng);
  Var forward(const Var& x, bool train, Rng& rng) override;
  std::vector<Var> params() override { return {w_, b_}; }
  std::string kind() const override { return "dense"; }

 private:
  Var w_, b_;
};

class Conv2d : public Layer {
 public:
  Conv2d(ImageShape in, int out_channels, int kernel, int stride, int pad, Rng& rng);
  Var forward(const Var& x, bool train, Rng& rng) override;
  std::vector<Var> params() override { return {w_, b_}; }
  std::string kind() const override { return "conv2d"; }
  ImageShape out_shape() const { return out_; }

 private:
  ImageShape in_, out_;
  int kernel_, stride_, pad_;
  Var w_, b_;
};

class Activation : public Layer {
 public:
  enum class Kind { relu, leaky_relu, tanh, sigmoid };
  explicit Activation(Kind k, double slope = 0.2) : k_(k), slope_(slope) {}
  Var forward(const Var& x, bool, Rng&) override;
  std::string kind() const override { return "activation"; }

 private:
  Kind k_;
  double slope_;
};

class AvgPool2 : public Layer {
 public:
  explicit AvgPool2(ImageShape in) : in_(in) {}
  Var forward(const Var& x, bool, Rng&) override { return ag::avg_pool2(x, in_); }
  std::string kind() const override { return "avg_pool2"; }
  ImageShape out_shape() const { return {in_.channels, in_.height / 2, in_.width / 2}; }

 private:
  ImageShape in_;
};

class Upsample2 : public Layer {
 public:
  explicit Upsample2(ImageShape in) : in_(in) {}
  Var forward(const Var& x, bool, Rng&) override { return ag::upsample2_nearest(x, in_); }
  std::string kind() const override { return "upsample2"; }
  ImageShape out_shape() const { return {in_.channels, in_.height * 2, in_.width * 2}; }

 private:
  ImageShape in_;
};

class Dropout : public Layer {
 public:
  /// always_on keeps the mask active in eval mode (pix2pix-style noise source).
  explicit Dropout(double p, bool always_on = false) : p_(p), always_on_(always_on) {}
  Var forward(const Var& x, bool train, Rng& rng) override {
    return (train || always_on_) ? ag::dropout(x, p_, rng) : x;
  }
  std::string kind() const override { return "dropout"; }

 private:
  double p_;
  bool always_on_;
};

/// Ordered layer stack. Also records per-layer outputs when asked, which is
/// how feature taps (LPIPS, Mahalanobis) are exposed.
class Sequential {
 public:
  Sequential() = default;

  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Var forward(const Var& x, bool train, Rng& rng) const;
  /// Forward pass that returns the output of every layer (index-aligned).
  std::vector<Var> forward_all(const Var& x, bool train, Rng& rng) const;

  std::vector<Var> params() const;
  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) const { return *layers_[i]; }

  void set_requires_grad(bool on) const;

  /// Flat weight serialization; layout is the parameter order of params().
  std::vector<Matrix> state() const;
  void load_state(const std::vector<Matrix>& st) const;
  std::uint64_t state_hash() const;

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// SGD with classical momentum.
class Sgd {
 public:
  Sgd(std::vector<Var> params, double lr, double momentum = 0.9);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  void step();

 private:
  std::vector<Var> params_;
  std::vector<Matrix> velocity_;
  double lr_, momentum_;
};

class Adam {
 public:
  Adam(std::vector<Var> params, double lr, double beta1 = 0.5, double beta2 = 0.999,
       double eps = 1e-8);
  void step();

 private:
  std::vector<Var> params_;
  std::vector<Matrix> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

/// Mean cross-entropy of logits against integer labels.
Var cross_entropy(const Var& logits, const std::vector<int>& labels);

/// Mean cross-entropy of logits against the uniform distribution over K
/// classes; equals mean(log K - mean-logit-adjusted ...) and evaluates to
/// exactly ln K on uniform outputs.
Var uniform_cross_entropy(const Var& logits);

}  // namespace oodforge::nn

#endif  // OODFORGE_NN_HPP
