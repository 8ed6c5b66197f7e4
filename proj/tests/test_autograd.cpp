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

#include "oodforge/autograd.hpp"

#include <functional>

using namespace oodforge;
using namespace oodforge::ag;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = d(rng);
  return m;
}

// Central-difference check of d(scalar builder)/d(leaf entries) against the
// reverse-mode gradient, on every entry of every leaf.
void grad_check(std::vector<Var> leaves, const std::function<Var()>& build,
                double h = 1e-6, double tol = 1e-5) {
  Var out = build();
  backward(out);
  std::vector<Matrix> grads;
  for (auto& l : leaves) grads.push_back(l.grad());
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Matrix& v = leaves[li].value();
    for (Eigen::Index i = 0; i < v.rows(); ++i)
      for (Eigen::Index j = 0; j < v.cols(); ++j) {
        const double orig = v(i, j);
        v(i, j) = orig + h;
        const double fp = build().value()(0, 0);
        v(i, j) = orig - h;
        const double fm = build().value()(0, 0);
        v(i, j) = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double ad = grads[li](i, j);
        const double denom = std::max({std::abs(fd), std::abs(ad), 1.0});
        CHECK(std::abs(fd - ad) / denom < tol);
      }
  }
}

}  // namespace

TEST_CASE("matmul / add / mul / bias gradients") {
  Rng rng(1);
  Var a(random_matrix(3, 4, rng), true);
  Var b(random_matrix(4, 2, rng), true);
  Var bias(random_matrix(1, 2, rng), true);
  grad_check({a, b, bias}, [&] {
    return sum_all(mul(add_rowvec(matmul(a, b), bias), add_rowvec(matmul(a, b), bias)));
  });
}

TEST_CASE("activation gradients") {
  Rng rng(2);
  Var a(random_matrix(4, 5, rng, -2.0, 2.0), true);
  grad_check({a}, [&] { return sum_all(tanh_act(a)); });
  grad_check({a}, [&] { return sum_all(sigmoid(a)); });
  grad_check({a}, [&] { return sum_all(softplus(a)); });
  grad_check({a}, [&] { return sum_all(leaky_relu(a, 0.2)); });
  // relu FD is unreliable at the kink; keep entries away from zero.
  Var shifted(a.value().array().abs() + 0.1, true);
  grad_check({shifted}, [&] { return sum_all(relu(shifted)); });
  grad_check({shifted}, [&] { return sum_all(log_op(shifted)); });
  grad_check({a}, [&] { return sum_all(exp_op(a)); });
}

TEST_CASE("softmax and log_softmax gradients") {
  Rng rng(3);
  Var a(random_matrix(5, 6, rng, -2.0, 2.0), true);
  Matrix w = random_matrix(5, 6, rng);
  grad_check({a}, [&] { return sum_all(mul(softmax_rows(a), Var(w))); });
  grad_check({a}, [&] { return sum_all(mul(log_softmax_rows(a), Var(w))); });
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(4);
  Var a(random_matrix(7, 9, rng, -3.0, 3.0));
  Matrix s = softmax_rows(a).value();
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    CHECK(s.row(i).minCoeff() >= 0.0);
    CHECK(s.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("reduction and concat gradients") {
  Rng rng(5);
  Var a(random_matrix(3, 4, rng), true);
  Var b(random_matrix(3, 2, rng), true);
  grad_check({a}, [&] { return mean_all(mul(a, a)); });
  grad_check({a}, [&] { return sum_all(mul(row_sum(a), row_sum(a))); });
  Matrix w = random_matrix(3, 6, rng);
  grad_check({a, b}, [&] { return sum_all(mul(concat_cols(a, b), Var(w))); });
}

TEST_CASE("conv2d matches direct convolution and gradients check") {
  Rng rng(6);
  ImageShape in{2, 6, 6};
  Var x(random_matrix(2, in.size(), rng), true);
  Var w(random_matrix(3, 2 * 3 * 3, rng), true);
  Var b(random_matrix(1, 3, rng), true);

  // Direct nested-loop convolution as oracle.
  ImageShape out = conv2d_out_shape(in, 3, 3, 1, 1);
  Matrix y = conv2d(x, w, b, in, 3, 1, 1).value();
  for (int n = 0; n < 2; ++n)
    for (int oc = 0; oc < 3; ++oc)
      for (int oh = 0; oh < out.height; ++oh)
        for (int ow = 0; ow < out.width; ++ow) {
          double acc = b.value()(0, oc);
          for (int ic = 0; ic < 2; ++ic)
            for (int ki = 0; ki < 3; ++ki)
              for (int kj = 0; kj < 3; ++kj) {
                int ih = oh - 1 + ki, iw = ow - 1 + kj;
                if (ih < 0 || ih >= 6 || iw < 0 || iw >= 6) continue;
                acc += x.value()(n, ic * 36 + ih * 6 + iw) *
                       w.value()(oc, (ic * 3 + ki) * 3 + kj);
              }
          CHECK(y(n, oc * out.height * out.width + oh * out.width + ow) ==
                doctest::Approx(acc).epsilon(1e-10));
        }

  grad_check({x, w, b}, [&] {
    Var c = conv2d(x, w, b, in, 3, 1, 1);
    return sum_all(mul(c, c));
  });
}

TEST_CASE("strided conv2d gradients") {
  Rng rng(7);
  ImageShape in{1, 8, 8};
  Var x(random_matrix(2, in.size(), rng), true);
  Var w(random_matrix(4, 1 * 4 * 4, rng), true);
  Var b(random_matrix(1, 4, rng), true);
  grad_check({x, w, b}, [&] {
    Var c = conv2d(x, w, b, in, 4, 2, 1);
    return sum_all(mul(c, c));
  });
}

TEST_CASE("pool / upsample / normalize gradients") {
  Rng rng(8);
  ImageShape in{3, 4, 4};
  Var x(random_matrix(2, in.size(), rng, 0.2, 1.5), true);
  grad_check({x}, [&] {
    Var p = avg_pool2(x, in);
    return sum_all(mul(p, p));
  });
  grad_check({x}, [&] {
    Var u = upsample2_nearest(x, in);
    return sum_all(mul(u, u));
  });
  Matrix wmat = random_matrix(2, in.size(), rng);
  grad_check({x}, [&] {
    return sum_all(mul(channel_unit_normalize(x, in), Var(wmat)));
  }, 1e-6, 1e-4);
}

TEST_CASE("channel_unit_normalize produces unit channel vectors") {
  Rng rng(9);
  ImageShape in{4, 3, 3};
  Var x(random_matrix(1, in.size(), rng, 0.5, 2.0));
  Matrix y = channel_unit_normalize(x, in).value();
  for (int p = 0; p < 9; ++p) {
    double ss = 0;
    for (int c = 0; c < 4; ++c) ss += y(0, c * 9 + p) * y(0, c * 9 + p);
    CHECK(std::sqrt(ss) == doctest::Approx(1.0).epsilon(1e-8));
  }
}

TEST_CASE("bce_with_logits equals naive formula and gradients check") {
  Rng rng(10);
  Var s(random_matrix(4, 3, rng, -3.0, 3.0), true);
  Matrix t(4, 3);
  std::uniform_int_distribution<int> bit(0, 1);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) t(i, j) = bit(rng);

  double naive = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) {
      double p = 1.0 / (1.0 + std::exp(-s.value()(i, j)));
      naive += -(t(i, j) * std::log(p) + (1 - t(i, j)) * std::log(1 - p));
    }
  naive /= 12.0;
  CHECK(bce_with_logits(s, t).value()(0, 0) == doctest::Approx(naive).epsilon(1e-10));
  grad_check({s}, [&] { return bce_with_logits(s, t); });
}

TEST_CASE("detach blocks gradient flow") {
  Var a(Matrix::Constant(1, 1, 2.0), true);
  Var loss = sum_all(mul(a.detach(), a));
  backward(loss);
  CHECK(a.grad()(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("dropout scales kept entries and zero-p is identity") {
  Rng rng(11);
  Var a(Matrix::Constant(10, 10, 1.0), true);
  Var d = dropout(a, 0.5, rng);
  for (Eigen::Index i = 0; i < 10; ++i)
    for (Eigen::Index j = 0; j < 10; ++j) {
      double v = d.value()(i, j);
      CHECK((v == 0.0 || v == doctest::Approx(2.0)));
    }
  Var e = dropout(a, 0.0, rng);
  CHECK(e.value() == a.value());
}
