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

#ifndef OODFORGE_AUTOGRAD_HPP
#define OODFORGE_AUTOGRAD_HPP

#include "oodforge/common.hpp"

#include <functional>
#include <memory>
#include <vector>

// Reverse-mode autodiff over dense Eigen matrices. Every Var holds an
// [N, F] value where rows index batch samples. Images are stored one per
// row with element order c*(H*W) + h*W + w (see ImageShape).
namespace oodforge::ag {

struct ImageShape {
  int channels = 0;
  int height = 0;
  int width = 0;
  int size() const { return channels * height * width; }
  bool operator==(const ImageShape&) const = default;
};

struct Node {
  Matrix value;
  Matrix grad;  // same shape as value once backward runs
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this->grad into parents' grads.
  std::function<void(Node&)> backward;
};

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  Matrix& value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }

  /// New leaf sharing this value; gradients do not flow past it.
  Var detach() const;

  std::shared_ptr<Node> node() const { return node_; }
  static Var from_node(std::shared_ptr<Node> n);

 private:
  std::shared_ptr<Node> node_;
};

/// Runs reverse-mode accumulation from a scalar (1x1) root. Gradients of
/// all reachable requires_grad nodes are zeroed first, then accumulated.
void backward(const Var& root);

// ----- elementwise / linear algebra -----
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_rowvec(const Var& a, const Var& bias);  // bias is [1, F]
Var scale(const Var& a, double s);
Var add_const(const Var& a, double c);
Var neg(const Var& a);

// ----- activations -----
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var tanh_act(const Var& a);
Var sigmoid(const Var& a);
Var exp_op(const Var& a);
Var log_op(const Var& a);       // caller guarantees positivity
Var softplus(const Var& a);     // numerically stable log(1+e^x)

// ----- row-wise distributions -----
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);

// ----- reductions / reshaping -----
Var sum_all(const Var& a);    // -> 1x1
Var mean_all(const Var& a);   // -> 1x1
Var row_sum(const Var& a);    // -> [N, 1]
Var concat_cols(const Var& a, const Var& b);

// ----- image ops (batch rows hold C*H*W pixels) -----
/// 2D convolution via im2col. weights: [outC, inC*k*k], bias: [1, outC].
Var conv2d(const Var& x, const Var& weights, const Var& bias,
           const ImageShape& in, int kernel, int stride, int pad);
ImageShape conv2d_out_shape(const ImageShape& in, int out_channels, int kernel,
                            int stride, int pad);

Var avg_pool2(const Var& x, const ImageShape& in);         // 2x2, stride 2
Var upsample2_nearest(const Var& x, const ImageShape& in); // 2x nearest

/// Per spatial position, scales the channel vector to unit L2 norm
/// (norm + eps in the denominator). The LPIPS normalization step.
Var channel_unit_normalize(const Var& x, const ImageShape& in, double eps = 1e-10);

/// Inverted dropout with a caller-owned RNG; identity when p == 0.
Var dropout(const Var& a, double p, Rng& rng);

/// Mean over all elements of softplus(logits) - target .* logits, the
/// stable binary cross-entropy with logits. target entries in [0, 1].
Var bce_with_logits(const Var& logits, const Matrix& target);

}  // namespace oodforge::ag

#endif  // OODFORGE_AUTOGRAD_HPP
