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

#include "oodforge/nn.hpp"

#include <cmath>

namespace oodforge::nn {

namespace {

Matrix he_init(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

}  // namespace

Dense::Dense(int in, int out, Rng& rng)
    : w_(he_init(in, out, in, rng), true), b_(Matrix::Zero(1, out), true) {}

Var Dense::forward(const Var& x, bool, Rng&) {
  return ag::add_rowvec(ag::matmul(x, w_), b_);
}

Conv2d::Conv2d(ImageShape in, int out_channels, int kernel, int stride, int pad, Rng& rng)
    : in_(in),
      out_(ag::conv2d_out_shape(in, out_channels, kernel, stride, pad)),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      w_(he_init(out_channels, in.channels * kernel * kernel,
                 in.channels * kernel * kernel, rng),
         true),
      b_(Matrix::Zero(1, out_channels), true) {}

Var Conv2d::forward(const Var& x, bool, Rng&) {
  return ag::conv2d(x, w_, b_, in_, kernel_, stride_, pad_);
}

Var Activation::forward(const Var& x, bool, Rng&) {
  switch (k_) {
    case Kind::relu: return ag::relu(x);
    case Kind::leaky_relu: return ag::leaky_relu(x, slope_);
    case Kind::tanh: return ag::tanh_act(x);
    case Kind::sigmoid: return ag::sigmoid(x);
  }
  throw Error("unreachable activation kind");
}

Var Sequential::forward(const Var& x, bool train, Rng& rng) const {
  Var h = x;
  for (const auto& l : layers_) h = l->forward(h, train, rng);
  return h;
}

std::vector<Var> Sequential::forward_all(const Var& x, bool train, Rng& rng) const {
  std::vector<Var> outs;
  outs.reserve(layers_.size());
  Var h = x;
  for (const auto& l : layers_) {
    h = l->forward(h, train, rng);
    outs.push_back(h);
  }
  return outs;
}

std::vector<Var> Sequential::params() const {
  std::vector<Var> ps;
  for (const auto& l : layers_)
    for (auto& p : l->params()) ps.push_back(p);
  return ps;
}

void Sequential::set_requires_grad(bool on) const {
  for (auto& p : params()) p.node()->requires_grad = on;
}

std::vector<Matrix> Sequential::state() const {
  std::vector<Matrix> st;
  for (auto& p : params()) st.push_back(p.value());
  return st;
}

void Sequential::load_state(const std::vector<Matrix>& st) const {
  auto ps = params();
  check(st.size() == ps.size(), "load_state: parameter count mismatch");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    check(st[i].rows() == ps[i].value().rows() && st[i].cols() == ps[i].value().cols(),
          "load_state: parameter shape mismatch");
    ps[i].value() = st[i];
  }
}

std::uint64_t Sequential::state_hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (auto& p : params()) h = fnv1a(p.value(), h);
  return h;
}

Sgd::Sgd(std::vector<Var> params, double lr, double momentum)
    : params_(std::move(params)), lr_(lr), momentum_(momentum) {
  for (auto& p : params_)
    velocity_.push_back(Matrix::Zero(p.value().rows(), p.value().cols()));
}

void Sgd::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    velocity_[i] = momentum_ * velocity_[i] + params_[i].grad();
    params_[i].value() -= lr_ * velocity_[i];
  }
}

Adam::Adam(std::vector<Var> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto& p : params_) {
    m_.push_back(Matrix::Zero(p.value().rows(), p.value().cols()));
    v_.push_back(Matrix::Zero(p.value().rows(), p.value().cols()));
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Matrix& g = params_[i].grad();
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    params_[i].value().array() -=
        lr_ * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
  }
}

Var cross_entropy(const Var& logits, const std::vector<int>& labels) {
  check(static_cast<std::size_t>(logits.rows()) == labels.size(),
        "cross_entropy: label count mismatch");
  Var logp = ag::log_softmax_rows(logits);
  // Pick out target log-probabilities with a one-hot mask.
  Matrix mask = Matrix::Zero(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    check(labels[i] >= 0 && labels[i] < logits.cols(), "cross_entropy: label out of range");
    mask(i, labels[i]) = 1.0;
  }
  Var picked = ag::mul(logp, Var(mask));
  return ag::scale(ag::sum_all(picked), -1.0 / static_cast<double>(logits.rows()));
}

Var uniform_cross_entropy(const Var& logits) {
  Var logp = ag::log_softmax_rows(logits);
  return ag::scale(ag::sum_all(logp),
                   -1.0 / static_cast<double>(logits.rows() * logits.cols()));
}

}  // namespace oodforge::nn
