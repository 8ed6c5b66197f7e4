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

#include "oodforge/nn.hpp"

#include <cmath>

using namespace oodforge;
using ag::Var;
using nn::Sequential;

TEST_CASE("dense layer matches manual affine map") {
  Rng rng(7);
  nn::Dense d(3, 2, rng);
  Matrix x(2, 3);
  x << 1.0, -2.0, 0.5, 0.0, 3.0, -1.0;
  Rng eval(0);
  Matrix y = d.forward(Var(x), false, eval).value();
  Matrix w = d.params()[0].value();
  Matrix b = d.params()[1].value();
  Matrix expect = x * w + b.replicate(2, 1);
  CHECK((y - expect).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("sequential forward_all is index-aligned with layers") {
  Rng rng(1);
  Sequential net;
  net.emplace<nn::Dense>(4, 5, rng);
  net.emplace<nn::Activation>(nn::Activation::Kind::relu);
  net.emplace<nn::Dense>(5, 3, rng);
  Matrix x = Matrix::Random(6, 4);
  Rng eval(0);
  auto acts = net.forward_all(Var(x), false, eval);
  REQUIRE(acts.size() == 3);
  CHECK(acts[0].cols() == 5);
  CHECK(acts[1].value().minCoeff() >= 0.0);
  Rng eval2(0);
  Matrix full = net.forward(Var(x), false, eval2).value();
  CHECK((acts[2].value() - full).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("state round-trips and hash changes with weights") {
  Rng rng(2);
  Sequential a, b;
  a.emplace<nn::Dense>(3, 3, rng);
  b.emplace<nn::Dense>(3, 3, rng);
  CHECK(a.state_hash() != b.state_hash());
  b.load_state(a.state());
  CHECK(a.state_hash() == b.state_hash());
  Matrix x = Matrix::Random(4, 3);
  Rng e1(0), e2(0);
  CHECK((a.forward(Var(x), false, e1).value() - b.forward(Var(x), false, e2).value())
            .cwiseAbs()
            .maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("sgd with momentum matches hand-iterated recurrence on a quadratic") {
  // Minimize 0.5 * w^2 starting at w = 1; grad = w.
  Var w(Matrix::Constant(1, 1, 1.0), true);
  nn::Sgd opt({w}, 0.1, 0.9);
  double wref = 1.0, v = 0.0;
  for (int i = 0; i < 20; ++i) {
    Var loss = ag::scale(ag::mul(w, w), 0.5);
    ag::backward(loss);
    opt.step();
    v = 0.9 * v + wref;
    wref -= 0.1 * v;
    CHECK(w.value()(0, 0) == doctest::Approx(wref).epsilon(1e-12));
  }
}

TEST_CASE("adam drives a convex scalar problem to its minimum") {
  Var w(Matrix::Constant(1, 1, 5.0), true);
  nn::Adam opt({w}, 0.1);
  for (int i = 0; i < 400; ++i) {
    Var d = ag::add_const(w, -2.0);
    ag::backward(ag::mul(d, d));
  opt.step();
  }
  CHECK(w.value()(0, 0) == doctest::Approx(2.0).epsilon(1e-3));
}

TEST_CASE("cross_entropy equals -mean log softmax at the label") {
  Matrix lg(2, 3);
  lg << 2.0, 0.0, -1.0, 0.5, 0.5, 0.5;
  std::vector<int> y{0, 2};
  double ce = nn::cross_entropy(Var(lg), y).value()(0, 0);
  double expect = 0.0;
  for (int i = 0; i < 2; ++i) {
    double z = 0.0;
    for (int k = 0; k < 3; ++k) z += std::exp(lg(i, k));
    expect += -(lg(i, y[i]) - std::log(z));
  }
  expect /= 2.0;
  CHECK(ce == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("uniform_cross_entropy evaluates to ln K on uniform logits") {
  Matrix lg = Matrix::Constant(5, 4, 0.37);
  CHECK(nn::uniform_cross_entropy(Var(lg)).value()(0, 0) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
  // And exceeds ln K on any non-uniform output.
  Matrix sharp(1, 4);
  sharp << 4.0, 0.0, 0.0, 0.0;
  CHECK(nn::uniform_cross_entropy(Var(sharp)).value()(0, 0) > std::log(4.0));
}

TEST_CASE("dropout layer is identity in eval mode unless always_on") {
  Matrix x = Matrix::Random(3, 8);
  Rng rng(5);
  nn::Dropout off(0.5, false);
  CHECK((off.forward(Var(x), false, rng).value() - x).cwiseAbs().maxCoeff() ==
        doctest::Approx(0.0));
  nn::Dropout on(0.5, true);
  Matrix y = on.forward(Var(x), false, rng).value();
  CHECK((y - x).cwiseAbs().maxCoeff() > 0.0);  // some entries masked
}
