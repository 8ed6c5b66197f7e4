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

#include "oodforge/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace oodforge::ag {

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var Var::detach() const {
  Var v;
  v.node_ = std::make_shared<Node>();
  v.node_->value = node_->value;
  v.node_->requires_grad = false;
  return v;
}

Var Var::from_node(std::shared_ptr<Node> n) {
  Var v;
  v.node_ = std::move(n);
  return v;
}

namespace {

using NodePtr = std::shared_ptr<Node>;

Var make_op(Matrix value, std::vector<NodePtr> parents,
            std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->requires_grad = std::any_of(n->parents.begin(), n->parents.end(),
                                 [](const NodePtr& p) { return p->requires_grad; });
  if (n->requires_grad) n->backward = std::move(backward);
  return Var::from_node(n);
}

// Accumulate g into p->grad if p participates in the sweep.
void accum(const NodePtr& p, const Matrix& g) {
  if (p->requires_grad) p->grad += g;
}

void topo(const NodePtr& n, std::unordered_set<Node*>& seen,
          std::vector<NodePtr>& order) {
  if (!n->requires_grad || seen.count(n.get())) return;
  seen.insert(n.get());
  for (const auto& p : n->parents) topo(p, seen, order);
  order.push_back(n);
}

}  // namespace

void backward(const Var& root) {
  check(root.defined() && root.value().size() == 1,
        "backward: root must be a 1x1 scalar");
  std::unordered_set<Node*> seen;
  std::vector<NodePtr> order;
  topo(root.node(), seen, order);
  for (const auto& n : order) n->grad = Matrix::Zero(n->value.rows(), n->value.cols());
  if (order.empty()) return;
  order.back()->grad(0, 0) = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

Var matmul(const Var& a, const Var& b) {
  check(a.cols() == b.rows(), "matmul: inner dimensions differ");
  auto pa = a.node(), pb = b.node();
  return make_op(pa->value * pb->value, {pa, pb}, [pa, pb](Node& n) {
    accum(pa, n.grad * pb->value.transpose());
    accum(pb, pa->value.transpose() * n.grad);
  });
}

Var add(const Var& a, const Var& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  auto pa = a.node(), pb = b.node();
  return make_op(pa->value + pb->value, {pa, pb}, [pa, pb](Node& n) {
    accum(pa, n.grad);
    accum(pb, n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  auto pa = a.node(), pb = b.node();
  return make_op(pa->value - pb->value, {pa, pb}, [pa, pb](Node& n) {
    accum(pa, n.grad);
    accum(pb, -n.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  auto pa = a.node(), pb = b.node();
  return make_op(pa->value.cwiseProduct(pb->value), {pa, pb}, [pa, pb](Node& n) {
    accum(pa, n.grad.cwiseProduct(pb->value));
    accum(pb, n.grad.cwiseProduct(pa->value));
  });
}

Var add_rowvec(const Var& a, const Var& bias) {
  check(bias.rows() == 1 && bias.cols() == a.cols(), "add_rowvec: bias must be [1, F]");
  auto pa = a.node(), pb = bias.node();
  Matrix out = pa->value;
  out.rowwise() += pb->value.row(0);
  return make_op(std::move(out), {pa, pb}, [pa, pb](Node& n) {
    accum(pa, n.grad);
    accum(pb, n.grad.colwise().sum());
  });
}

Var scale(const Var& a, double s) {
  auto pa = a.node();
  return make_op(pa->value * s, {pa}, [pa, s](Node& n) { accum(pa, n.grad * s); });
}

Var add_const(const Var& a, double c) {
  auto pa = a.node();
  return make_op(pa->value.array() + c, {pa}, [pa](Node& n) { accum(pa, n.grad); });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var relu(const Var& a) {
  auto pa = a.node();
  return make_op(pa->value.cwiseMax(0.0), {pa}, [pa](Node& n) {
    accum(pa, (pa->value.array() > 0.0).cast<double>().matrix().cwiseProduct(n.grad));
  });
}

Var leaky_relu(const Var& a, double slope) {
  auto pa = a.node();
  Matrix out = pa->value.array().max(pa->value.array() * slope);
  return make_op(std::move(out), {pa, }, [pa, slope](Node& n) {
    Matrix m = (pa->value.array() > 0.0).select(Matrix::Ones(n.grad.rows(), n.grad.cols()),
                                                Matrix::Constant(n.grad.rows(), n.grad.cols(), slope));
    accum(pa, m.cwiseProduct(n.grad));
  });
}

Var tanh_act(const Var& a) {
  auto pa = a.node();
  Matrix out = pa->value.array().tanh();
  auto hold = std::make_shared<Matrix>(out);
  return make_op(std::move(out), {pa}, [pa, hold](Node& n) {
    accum(pa, ((1.0 - hold->array().square()) * n.grad.array()).matrix());
  });
}

Var sigmoid(const Var& a) {
  auto pa = a.node();
  Matrix out = (1.0 / (1.0 + (-pa->value.array()).exp()));
  auto hold = std::make_shared<Matrix>(out);
  return make_op(std::move(out), {pa}, [pa, hold](Node& n) {
    accum(pa, (hold->array() * (1.0 - hold->array()) * n.grad.array()).matrix());
  });
}

Var exp_op(const Var& a) {
  auto pa = a.node();
  Matrix out = pa->value.array().exp();
  auto hold = std::make_shared<Matrix>(out);
  return make_op(std::move(out), {pa}, [pa, hold](Node& n) {
    accum(pa, hold->cwiseProduct(n.grad));
  });
}

Var log_op(const Var& a) {
  auto pa = a.node();
  return make_op(pa->value.array().log(), {pa}, [pa](Node& n) {
    accum(pa, n.grad.cwiseQuotient(pa->value));
  });
}

Var softplus(const Var& a) {
  auto pa = a.node();
  // log1p(exp(-|x|)) + max(x, 0)
  Matrix out = (-pa->value.array().abs()).exp().log1p() + pa->value.array().max(0.0);
  return make_op(std::move(out), {pa}, [pa](Node& n) {
    Matrix s = 1.0 / (1.0 + (-pa->value.array()).exp());
    accum(pa, s.cwiseProduct(n.grad));
  });
}

Var softmax_rows(const Var& a) {
  auto pa = a.node();
  Matrix out = pa->value;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    Eigen::ArrayXd r = out.row(i).array();
    r -= r.maxCoeff();
    r = r.exp();
    out.row(i) = (r / r.sum()).matrix();
  }
  auto hold = std::make_shared<Matrix>(out);
  return make_op(std::move(out), {pa}, [pa, hold](Node& n) {
    Matrix dx(n.grad.rows(), n.grad.cols());
    for (Eigen::Index i = 0; i < n.grad.rows(); ++i) {
      double dot = n.grad.row(i).dot(hold->row(i));
      dx.row(i) = hold->row(i).cwiseProduct(n.grad.row(i).array().matrix() -
                                            Matrix::Constant(1, n.grad.cols(), dot));
    }
    accum(pa, dx);
  });
}

Var log_softmax_rows(const Var& a) {
  auto pa = a.node();
  Matrix out = pa->value;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    Eigen::ArrayXd r = out.row(i).array();
    double m = r.maxCoeff();
    double lse = m + std::log((r - m).exp().sum());
    out.row(i) = (r - lse).matrix();
  }
  auto hold = std::make_shared<Matrix>(out);
  return make_op(std::move(out), {pa}, [pa, hold](Node& n) {
    Matrix dx(n.grad.rows(), n.grad.cols());
    for (Eigen::Index i = 0; i < n.grad.rows(); ++i) {
      double s = n.grad.row(i).sum();
      dx.row(i) = n.grad.row(i) - (hold->row(i).array().exp() * s).matrix();
    }
    accum(pa, dx);
  });
}

Var sum_all(const Var& a) {
  auto pa = a.node();
  Matrix out(1, 1);
  out(0, 0) = pa->value.sum();
  return make_op(std::move(out), {pa}, [pa](Node& n) {
    accum(pa, Matrix::Constant(pa->value.rows(), pa->value.cols(), n.grad(0, 0)));
  });
}

Var mean_all(const Var& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size()));
}

Var row_sum(const Var& a) {
  auto pa = a.node();
  Matrix out = pa->value.rowwise().sum();
  return make_op(std::move(out), {pa}, [pa](Node& n) {
    accum(pa, n.grad * Matrix::Ones(1, pa->value.cols()));
  });
}

Var concat_cols(const Var& a, const Var& b) {
  check(a.rows() == b.rows(), "concat_cols: row count mismatch");
  auto pa = a.node(), pb = b.node();
  Matrix out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = pa->value;
  out.rightCols(b.cols()) = pb->value;
  Eigen::Index ca = a.cols(), cb = b.cols();
  return make_op(std::move(out), {pa, pb}, [pa, pb, ca, cb](Node& n) {
    accum(pa, n.grad.leftCols(ca));
    accum(pb, n.grad.rightCols(cb));
  });
}

ImageShape conv2d_out_shape(const ImageShape& in, int out_channels, int kernel,
                            int stride, int pad) {
  ImageShape out;
  out.channels = out_channels;
  out.height = (in.height + 2 * pad - kernel) / stride + 1;
  out.width = (in.width + 2 * pad - kernel) / stride + 1;
  return out;
}

namespace {

// im2col: [inC*k*k, Ho*Wo] for one sample stored as a C*H*W row.
void im2col(const double* row, const ImageShape& in, int k, int stride, int pad,
            const ImageShape& out, Matrix& cols) {
  const int hw = in.height * in.width;
  for (int c = 0; c < in.channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const int r = (c * k + ki) * k + kj;
        for (int oh = 0; oh < out.height; ++oh) {
          const int ih = oh * stride - pad + ki;
          for (int ow = 0; ow < out.width; ++ow) {
            const int iw = ow * stride - pad + kj;
            double v = 0.0;
            if (ih >= 0 && ih < in.height && iw >= 0 && iw < in.width)
              v = row[c * hw + ih * in.width + iw];
            cols(r, oh * out.width + ow) = v;
          }
        }
      }
    }
  }
}

void col2im_accum(const Matrix& cols, const ImageShape& in, int k, int stride,
                  int pad, const ImageShape& out, double* row) {
  const int hw = in.height * in.width;
  for (int c = 0; c < in.channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const int r = (c * k + ki) * k + kj;
        for (int oh = 0; oh < out.height; ++oh) {
          const int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= in.height) continue;
          for (int ow = 0; ow < out.width; ++ow) {
            const int iw = ow * stride - pad + kj;
            if (iw < 0 || iw >= in.width) continue;
            row[c * hw + ih * in.width + iw] += cols(r, oh * out.width + ow);
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& weights, const Var& bias,
           const ImageShape& in, int kernel, int stride, int pad) {
  check(x.cols() == in.size(), "conv2d: input width does not match shape");
  const int out_c = static_cast<int>(weights.rows());
  check(weights.cols() == in.channels * kernel * kernel,
        "conv2d: weight shape mismatch");
  check(bias.rows() == 1 && bias.cols() == out_c, "conv2d: bias shape mismatch");
  const ImageShape out = conv2d_out_shape(in, out_c, kernel, stride, pad);
  const int n_batch = static_cast<int>(x.rows());
  const int out_hw = out.height * out.width;

  auto px = x.node(), pw = weights.node(), pb = bias.node();
  auto cols_cache = std::make_shared<std::vector<Matrix>>();
  cols_cache->reserve(n_batch);
  Matrix result(n_batch, out.size());
  Matrix cols(in.channels * kernel * kernel, out_hw);
  // Matrix storage is column-major, so a row view is not contiguous; copy
  // each sample into a dense row buffer before im2col.
  Eigen::RowVectorXd sample(in.size());
  for (int n = 0; n < n_batch; ++n) {
    sample = px->value.row(n);
    im2col(sample.data(), in, kernel, stride, pad, out, cols);
    Matrix y = pw->value * cols;  // [outC, Ho*Wo]
    y.colwise() += pb->value.row(0).transpose();
    for (int c = 0; c < out_c; ++c)
      result.block(n, c * out_hw, 1, out_hw) = y.row(c);
    cols_cache->push_back(cols);
  }
  return make_op(std::move(result), {px, pw, pb},
                 [px, pw, pb, cols_cache, in, out, kernel, stride, pad, out_c,
                  out_hw, n_batch](Node& n) {
    Matrix d_out(out_c, out_hw);
    Eigen::RowVectorXd xrow(in.size());
    for (int b = 0; b < n_batch; ++b) {
      for (int c = 0; c < out_c; ++c)
        d_out.row(c) = n.grad.block(b, c * out_hw, 1, out_hw);
      const Matrix& cols = (*cols_cache)[b];
      if (pw->requires_grad) pw->grad += d_out * cols.transpose();
      if (pb->requires_grad) pb->grad.row(0) += d_out.rowwise().sum().transpose();
      if (px->requires_grad) {
        Matrix d_cols = pw->value.transpose() * d_out;
        xrow.setZero();
        col2im_accum(d_cols, in, kernel, stride, pad, out, xrow.data());
        px->grad.row(b) += xrow;
      }
    }
  });
}

Var avg_pool2(const Var& x, const ImageShape& in) {
  check(in.height % 2 == 0 && in.width % 2 == 0, "avg_pool2: odd spatial size");
  check(x.cols() == in.size(), "avg_pool2: input width mismatch");
  ImageShape out{in.channels, in.height / 2, in.width / 2};
  auto px = x.node();
  const int n_batch = static_cast<int>(x.rows());
  Matrix result(n_batch, out.size());
  const int ihw = in.height * in.width, ohw = out.height * out.width;
  for (int n = 0; n < n_batch; ++n) {
    for (int c = 0; c < in.channels; ++c)
      for (int oh = 0; oh < out.height; ++oh)
        for (int ow = 0; ow < out.width; ++ow) {
          double s = 0.0;
          for (int di = 0; di < 2; ++di)
            for (int dj = 0; dj < 2; ++dj)
              s += px->value(n, c * ihw + (2 * oh + di) * in.width + 2 * ow + dj);
          result(n, c * ohw + oh * out.width + ow) = s * 0.25;
        }
  }
  return make_op(std::move(result), {px}, [px, in, out, ihw, ohw, n_batch](Node& n) {
    for (int b = 0; b < n_batch; ++b)
      for (int c = 0; c < in.channels; ++c)
        for (int oh = 0; oh < out.height; ++oh)
          for (int ow = 0; ow < out.width; ++ow) {
            double g = 0.25 * n.grad(b, c * ohw + oh * out.width + ow);
            for (int di = 0; di < 2; ++di)
              for (int dj = 0; dj < 2; ++dj)
                px->grad(b, c * ihw + (2 * oh + di) * in.width + 2 * ow + dj) += g;
          }
  });
}

Var upsample2_nearest(const Var& x, const ImageShape& in) {
  check(x.cols() == in.size(), "upsample2_nearest: input width mismatch");
  ImageShape out{in.channels, in.height * 2, in.width * 2};
  auto px = x.node();
  const int n_batch = static_cast<int>(x.rows());
  const int ihw = in.height * in.width, ohw = out.height * out.width;
  Matrix result(n_batch, out.size());
  for (int n = 0; n < n_batch; ++n)
    for (int c = 0; c < in.channels; ++c)
      for (int oh = 0; oh < out.height; ++oh)
        for (int ow = 0; ow < out.width; ++ow)
          result(n, c * ohw + oh * out.width + ow) =
              px->value(n, c * ihw + (oh / 2) * in.width + ow / 2);
  return make_op(std::move(result), {px}, [px, in, out, ihw, ohw, n_batch](Node& n) {
    for (int b = 0; b < n_batch; ++b)
      for (int c = 0; c < in.channels; ++c)
        for (int oh = 0; oh < out.height; ++oh)
          for (int ow = 0; ow < out.width; ++ow)
            px->grad(b, c * ihw + (oh / 2) * in.width + ow / 2) +=
                n.grad(b, c * ohw + oh * out.width + ow);
  });
}

Var channel_unit_normalize(const Var& x, const ImageShape& in, double eps) {
  check(x.cols() == in.size(), "channel_unit_normalize: input width mismatch");
  auto px = x.node();
  const int n_batch = static_cast<int>(x.rows());
  const int hw = in.height * in.width;
  Matrix result(n_batch, in.size());
  auto norms = std::make_shared<Matrix>(n_batch, hw);
  for (int n = 0; n < n_batch; ++n)
    for (int p = 0; p < hw; ++p) {
      double ss = 0.0;
      for (int c = 0; c < in.channels; ++c) {
        double v = px->value(n, c * hw + p);
        ss += v * v;
      }
      double nr = std::sqrt(ss);
      (*norms)(n, p) = nr;
      for (int c = 0; c < in.channels; ++c)
        result(n, c * hw + p) = px->value(n, c * hw + p) / (nr + eps);
    }
  return make_op(std::move(result), {px}, [px, norms, in, hw, n_batch, eps](Node& n) {
    for (int b = 0; b < n_batch; ++b)
      for (int p = 0; p < hw; ++p) {
        double nr = (*norms)(b, p);
        double denom = nr + eps;
        double dot = 0.0;
        for (int c = 0; c < in.channels; ++c)
          dot += n.grad(b, c * hw + p) * px->value(b, c * hw + p);
        double coef = dot / (std::max(nr, eps) * denom * denom);
        for (int c = 0; c < in.channels; ++c)
          px->grad(b, c * hw + p) +=
              n.grad(b, c * hw + p) / denom - px->value(b, c * hw + p) * coef;
      }
  });
}

Var dropout(const Var& a, double p, Rng& rng) {
  check(p >= 0.0 && p < 1.0, "dropout: p must be in [0, 1)");
  if (p == 0.0) return a;
  auto pa = a.node();
  std::bernoulli_distribution keep(1.0 - p);
  auto mask = std::make_shared<Matrix>(a.rows(), a.cols());
  const double inv = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      (*mask)(i, j) = keep(rng) ? inv : 0.0;
  return make_op(pa->value.cwiseProduct(*mask), {pa}, [pa, mask](Node& n) {
    accum(pa, n.grad.cwiseProduct(*mask));
  });
}

Var bce_with_logits(const Var& logits, const Matrix& target) {
  check(logits.rows() == target.rows() && logits.cols() == target.cols(),
        "bce_with_logits: target shape mismatch");
  auto pl = logits.node();
  const double count = static_cast<double>(target.size());
  Matrix out(1, 1);
  out(0, 0) = (((-pl->value.array().abs()).exp().log1p() + pl->value.array().max(0.0)) -
               target.array() * pl->value.array())
                  .sum() /
              count;
  auto tgt = std::make_shared<Matrix>(target);
  return make_op(std::move(out), {pl}, [pl, tgt, count](Node& n) {
    Matrix s = 1.0 / (1.0 + (-pl->value.array()).exp());
    accum(pl, (s - *tgt) * (n.grad(0, 0) / count));
  });
}

}  // namespace oodforge::ag
