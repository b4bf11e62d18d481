#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "aamulet/batchnorm.hpp"
#include "aamulet/conv.hpp"
#include "aamulet/gradcheck.hpp"
#include "aamulet/ops.hpp"
#include "aamulet/rng.hpp"
#include "oracles.hpp"

using namespace aamulet;

namespace {

template <typename S>
Tensor<S> random_tensor(Rng& rng, Shape s, double lo = -1, double hi = 1) {
  std::vector<S> v(std::size_t(s.numel()));
  for (auto& x : v) x = S(rng.uniform(lo, hi));
  return Tensor<S>(s, std::move(v));
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace

TEST_CASE("conv2d with a 1x1 identity kernel reproduces the input") {
  Rng rng(1);
  auto x = random_tensor<float>(rng, Shape{2, 1, 6, 5});
  Tensor<float> w(Shape{1, 1, 1, 1}, std::vector<float>{1.0f});
  Tensor<float> b(Shape{1, 1, 1, 1}, std::vector<float>{0.0f});
  auto y = conv2d(x, w, b, ConvSpec::conv(1, 1, 1, 1, 0));
  CHECK(y.shape() == x.shape());
  CHECK(max_abs_diff(y.data(), x.data()) == 0.0);
}

TEST_CASE("3x3 all-ones kernel on constant input counts the padded window") {
  const float c = 0.37f;
  Tensor<float> x(Shape{1, 1, 5, 5}, c);
  Tensor<float> w(Shape{1, 1, 3, 3}, 1.0f);
  auto y = conv2d(x, w, ConvSpec::conv(1, 1, 3, 1, 1));
  CHECK(y.at(0, 0, 2, 2) == doctest::Approx(9 * c).epsilon(1e-6));
  CHECK(y.at(0, 0, 0, 0) == doctest::Approx(4 * c).epsilon(1e-6));
  CHECK(y.at(0, 0, 0, 4) == doctest::Approx(4 * c).epsilon(1e-6));
  CHECK(y.at(0, 0, 4, 0) == doctest::Approx(4 * c).epsilon(1e-6));
  CHECK(y.at(0, 0, 0, 2) == doctest::Approx(6 * c).epsilon(1e-6));
}

TEST_CASE("conv2d forward matches the naive nested-loop oracle") {
  Rng rng(7);
  // every (stride, pad, kernel) geometry the network uses, plus the spec's
  // random 1x2x5x5 probe
  struct Case {
    Shape x;
    ConvSpec spec;
  };
  const Case cases[] = {
      {Shape{1, 2, 5, 5}, ConvSpec::conv(2, 3, 3, 1, 1)},
      {Shape{2, 4, 8, 8}, ConvSpec::conv(4, 6, 3, 1, 1)},
      {Shape{1, 3, 7, 9}, ConvSpec::conv(3, 2, 1, 1, 0)},
      {Shape{1, 8, 6, 6}, ConvSpec::conv(8, 4, 3, 1, 1)},
  };
  for (const auto& tc : cases) {
    // inputs in [0,1] and near-Xavier weight scale, as the network sees them
    auto x = random_tensor<float>(rng, tc.x, 0, 1);
    auto w = random_tensor<float>(
        rng,
        Shape{tc.spec.out_channels, tc.spec.in_channels, tc.spec.kernel_h,
              tc.spec.kernel_w},
        -0.2, 0.2);
    auto b = random_tensor<float>(rng, Shape{1, tc.spec.out_channels, 1, 1},
                                  -0.2, 0.2);
    auto got = conv2d(x, w, b, tc.spec);
    auto want = oracle::conv_forward(x, w, &b, tc.spec);
    CHECK(got.shape() == want.shape());
    CHECK(max_abs_diff(got.data(), want.data()) < 1e-6);
  }
}

TEST_CASE("transposed conv matches the naive scatter oracle") {
  Rng rng(9);
  const ConvSpec specs[] = {
      ConvSpec::deconv(3, 2, 4, 2, 1),   // stride 2: doubles
      ConvSpec::deconv(2, 2, 8, 4, 2),   // stride 4: quadruples
      ConvSpec::deconv(4, 1, 16, 8, 4),  // stride 8
  };
  for (const auto& spec : specs) {
    auto x = random_tensor<float>(rng, Shape{2, spec.in_channels, 4, 5}, 0, 1);
    auto w = random_tensor<float>(
        rng,
        Shape{spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w},
        -0.2, 0.2);
    auto got = conv2d(x, w, spec);
    auto want = oracle::deconv_forward<float>(x, w, nullptr, spec);
    CHECK(got.shape() == want.shape());
    CHECK(got.shape().h == 4 * spec.stride);
    CHECK(got.shape().w == 5 * spec.stride);
    CHECK(max_abs_diff(got.data(), want.data()) < 1e-6);
  }
}

TEST_CASE("deconv then matching forward conv preserves spatial dims") {
  Rng rng(11);
  for (int s : {2, 4}) {
    auto x = random_tensor<float>(rng, Shape{1, 3, 6, 6});
    auto wu = random_tensor<float>(rng, Shape{3, 3, 2 * s, 2 * s}, -0.2, 0.2);
    auto up = conv2d(x, wu, ConvSpec::deconv(3, 3, 2 * s, s, s / 2));
    CHECK(up.shape().h == 6 * s);
    auto wd = random_tensor<float>(rng, Shape{3, 3, 2 * s, 2 * s}, -0.2, 0.2);
    auto down = conv2d(up, wd, ConvSpec{3, 3, 2 * s, 2 * s, s, s / 2, false});
    CHECK(down.shape() == x.shape());
  }
}

TEST_CASE("conv2d rejects mismatched shapes naming the axis") {
  Tensor<float> x(Shape{1, 3, 5, 5}, 0.0f);
  Tensor<float> w(Shape{2, 2, 3, 3}, 0.0f);
  try {
    conv2d(x, w, ConvSpec::conv(2, 2, 3, 1, 1));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("input channel axis") !=
          std::string::npos);
  }
  CHECK_THROWS_AS(conv2d(x, w, ConvSpec::conv(3, 2, 3, 1, 1)), ShapeError);
  Tensor<float> w2(Shape{2, 3, 2, 2}, 0.0f);
  try {
    // (5 - 2) is not divisible by stride 2
    conv2d(x, w2, ConvSpec{3, 2, 2, 2, 2, 0, false});
    FAIL("expected SpecError");
  } catch (const SpecError& e) {
    CHECK(std::string(e.what()).find("non-integral") != std::string::npos);
  }
}

TEST_CASE("conv gradients match central finite differences") {
  Rng rng(21);
  for (int trial = 0; trial < 3; ++trial) {
    auto x = random_tensor<double>(rng, Shape{1, 2, 5, 5});
    auto w = random_tensor<double>(rng, Shape{3, 2, 3, 3});
    auto b = random_tensor<double>(rng, Shape{1, 3, 1, 1});
    const auto spec = ConvSpec::conv(2, 3, 3, 1, 1);
    auto f = [&] { return sum_all(sigmoid(conv2d(x, w, b, spec))); };
    CHECK(grad_check(f, {x, w, b}) < 1e-4);
  }
  // strided and transposed modes
  auto x = random_tensor<double>(rng, Shape{1, 2, 6, 6});
  auto w = random_tensor<double>(rng, Shape{2, 2, 4, 4});
  auto fs = [&] {
    return sum_all(sigmoid(conv2d(x, w, ConvSpec{2, 2, 4, 4, 2, 1, false})));
  };
  CHECK(grad_check(fs, {x, w}) < 1e-4);
  auto ft = [&] {
    return sum_all(sigmoid(conv2d(x, w, ConvSpec::deconv(2, 2, 4, 2, 1))));
  };
  CHECK(grad_check(ft, {x, w}) < 1e-4);
}

TEST_CASE("batchnorm train mode normalizes per channel") {
  Rng rng(5);
  auto x = random_tensor<float>(rng, Shape{4, 3, 6, 6}, -2, 5);
  Tensor<float> gamma(Shape{1, 3, 1, 1}, 1.0f);
  Tensor<float> beta(Shape{1, 3, 1, 1}, 0.0f);
  Tensor<float> rm(Shape{1, 3, 1, 1}, 0.0f);
  Tensor<float> rv(Shape{1, 3, 1, 1}, 1.0f);
  auto y = batchnorm(x, gamma, beta, rm, rv, BnMode::train);
  const std::int64_t per = 4 * 6 * 6;
  for (int c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) mean += y.at(n, c, i, j);
    mean /= double(per);
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) {
          const double d = y.at(n, c, i, j) - mean;
          var += d * d;
        }
    var /= double(per);
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-3);  // epsilon shifts variance slightly
  }
  // running stats moved toward the batch stats
  CHECK(rm.data()[0] != 0.0f);
}

TEST_CASE("batchnorm infer mode uses running stats") {
  Rng rng(6);
  auto x = random_tensor<float>(rng, Shape{1, 2, 4, 4});
  Tensor<float> gamma(Shape{1, 2, 1, 1}, 1.0f);
  Tensor<float> beta(Shape{1, 2, 1, 1}, 0.0f);
  Tensor<float> rm(Shape{1, 2, 1, 1}, 0.0f);
  Tensor<float> rv(Shape{1, 2, 1, 1}, 1.0f);
  auto y = batchnorm(x, gamma, beta, rm, rv, BnMode::infer);
  const float k = 1.0f / std::sqrt(1.0f + 1e-5f);
  for (std::size_t i = 0; i < y.data().size(); ++i)
    CHECK(y.data()[i] == doctest::Approx(x.data()[i] * k).epsilon(1e-6));
}

TEST_CASE("batchnorm gradients match finite differences in both modes") {
  Rng rng(31);
  auto x = random_tensor<double>(rng, Shape{2, 3, 4, 4});
  auto gamma = random_tensor<double>(rng, Shape{1, 3, 1, 1}, 0.5, 1.5);
  auto beta = random_tensor<double>(rng, Shape{1, 3, 1, 1}, -0.5, 0.5);
  Tensor<double> rm(Shape{1, 3, 1, 1}, 0.1);
  Tensor<double> rv(Shape{1, 3, 1, 1}, 0.9);
  for (BnMode mode : {BnMode::train, BnMode::infer}) {
    auto f = [&] {
      return sum_all(sigmoid(batchnorm(x, gamma, beta, rm, rv, mode)));
    };
    CHECK(grad_check(f, {x, gamma, beta}) < 1e-4);
  }
}

TEST_CASE("batchnorm train mode rejects single-element channels") {
  Tensor<float> x(Shape{1, 2, 1, 1}, 1.0f);
  Tensor<float> g(Shape{1, 2, 1, 1}, 1.0f), b(Shape{1, 2, 1, 1}, 0.0f);
  Tensor<float> rm(Shape{1, 2, 1, 1}, 0.0f), rv(Shape{1, 2, 1, 1}, 1.0f);
  CHECK_THROWS_AS(batchnorm(x, g, b, rm, rv, BnMode::train), SpecError);
  CHECK_NOTHROW(batchnorm(x, g, b, rm, rv, BnMode::infer));
}

TEST_CASE("batchnorm never divides by zero on constant channels") {
  Tensor<float> x(Shape{2, 1, 3, 3}, 0.5f);
  Tensor<float> g(Shape{1, 1, 1, 1}, 1.0f), b(Shape{1, 1, 1, 1}, 0.0f);
  Tensor<float> rm(Shape{1, 1, 1, 1}, 0.0f), rv(Shape{1, 1, 1, 1}, 1.0f);
  auto y = batchnorm(x, g, b, rm, rv, BnMode::train);
  for (float v : y.data()) CHECK(std::isfinite(v));
}

TEST_CASE("sigmoid endpoint values") {
  Tensor<float> x(Shape{1, 1, 1, 3}, std::vector<float>{0.0f, 100.0f, -100.0f});
  auto y = sigmoid(x);
  CHECK(y.data()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(std::abs(double(y.data()[1]) - 1.0) < 1e-9);
  CHECK(std::abs(double(y.data()[2])) < 1e-9);
}

TEST_CASE("concat stacks channels in argument order") {
  Tensor<float> a(Shape{1, 3, 4, 4}, 1.0f);
  Tensor<float> b(Shape{1, 5, 4, 4}, 2.0f);
  auto y = concat<float>({a, b});
  CHECK(y.shape() == Shape{1, 8, 4, 4});
  CHECK(y.at(0, 0, 0, 0) == 1.0f);
  CHECK(y.at(0, 2, 3, 3) == 1.0f);
  CHECK(y.at(0, 3, 0, 0) == 2.0f);
  CHECK(y.at(0, 7, 3, 3) == 2.0f);
  Tensor<float> c(Shape{1, 1, 5, 4}, 0.0f);
  CHECK_THROWS_AS(concat<float>({a, c}), ShapeError);
}

TEST_CASE("softmax_channels sums to one and handles equal logits") {
  Tensor<float> zeros(Shape{2, 2, 3, 3}, 0.0f);
  auto y = softmax_channels(zeros);
  for (float v : y.data()) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));

  Rng rng(13);
  auto x = random_tensor<float>(rng, Shape{1, 2, 8, 8}, -7, 7);
  auto p = softmax_channels(x);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      const double s = double(p.at(0, 0, i, j)) + double(p.at(0, 1, i, j));
      CHECK(std::abs(s - 1.0) < 1e-6);
      CHECK(p.at(0, 0, i, j) > 0.0f);
      CHECK(p.at(0, 0, i, j) < 1.0f);
    }
  Tensor<float> bad(Shape{1, 3, 2, 2}, 0.0f);
  CHECK_THROWS_AS(softmax_channels(bad), ShapeError);
}

TEST_CASE("elementwise and broadcast addition, with gradients") {
  Rng rng(17);
  auto a = random_tensor<double>(rng, Shape{2, 3, 4, 4});
  auto b1 = random_tensor<double>(rng, Shape{2, 3, 4, 4});
  auto bc = random_tensor<double>(rng, Shape{2, 1, 4, 4});
  auto f1 = [&] { return sum_all(sigmoid(add_broadcast(a, b1))); };
  CHECK(grad_check(f1, {a, b1}) < 1e-4);
  auto f2 = [&] { return sum_all(sigmoid(add_broadcast(a, bc))); };
  CHECK(grad_check(f2, {a, bc}) < 1e-4);
  auto y = add_broadcast(a, bc);
  CHECK(y.at(1, 2, 3, 3) ==
        doctest::Approx(a.at(1, 2, 3, 3) + bc.at(1, 0, 3, 3)));
  Tensor<double> bad(Shape{2, 2, 4, 4}, 0.0);
  CHECK_THROWS_AS(add_broadcast(a, bad), ShapeError);
}

TEST_CASE("maxpool2 picks window maxima and routes the subgradient") {
  Tensor<float> x(Shape{1, 1, 2, 4},
                  std::vector<float>{1, 5, 2, 0, 3, 4, 9, 8});
  auto y = maxpool2(x);
  CHECK(y.shape() == Shape{1, 1, 1, 2});
  CHECK(y.data()[0] == 5.0f);
  CHECK(y.data()[1] == 9.0f);

  Rng rng(23);
  auto xd = random_tensor<double>(rng, Shape{1, 2, 6, 6});
  auto f = [&] { return sum_all(sigmoid(maxpool2(xd))); };
  CHECK(grad_check(f, {xd}) < 1e-4);
  Tensor<float> odd(Shape{1, 1, 3, 4}, 0.0f);
  CHECK_THROWS_AS(maxpool2(odd), ShapeError);
}

TEST_CASE("relu, scale and softmax gradients match finite differences") {
  Rng rng(29);
  auto x = random_tensor<double>(rng, Shape{1, 2, 5, 5});
  auto fr = [&] { return sum_all(sigmoid(relu(x))); };
  CHECK(grad_check(fr, {x}) < 1e-4);
  auto fsc = [&] { return scale(sum_all(sigmoid(x)), 2.5); };
  CHECK(grad_check(fsc, {x}) < 1e-4);
  auto fsm = [&] { return sum_all(sigmoid(softmax_channels(x))); };
  CHECK(grad_check(fsm, {x}) < 1e-4);
  auto fcat = [&] {
    auto c = concat<double>({relu(x), sigmoid(x)});
    return sum_all(sigmoid(c));
  };
  CHECK(grad_check(fcat, {x}) < 1e-4);
}

TEST_CASE("grad_check on f(w) = sum(w) returns an all-ones gradient") {
  Tensor<double> w(Shape{1, 2, 3, 4}, 0.25);
  auto f = [&] { return sum_all(w); };
  CHECK(grad_check(f, {w}) < 1e-10);
  w.set_requires_grad(true);
  w.zero_grad();
  sum_all(w).backward();
  for (double g : w.grad()) CHECK(g == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("a diamond-shaped graph accumulates both contributions") {
  Rng rng(37);
  auto x = random_tensor<double>(rng, Shape{1, 1, 4, 4});
  auto f = [&] {
    auto r = relu(x);
    auto s = sigmoid(x);
    return sum_all(add_broadcast(r, s));
  };
  CHECK(grad_check(f, {x}) < 1e-4);
  // analytic spot check: d/dx sum(x + x) = 2
  x.zero_grad();
  sum_all(add_broadcast(x, x)).backward();
  for (double g : x.grad()) CHECK(g == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("chained sigmoid-of-conv gradcheck stays under tolerance") {
  Rng rng(41);
  auto x = random_tensor<double>(rng, Shape{1, 2, 6, 6});
  auto w1 = random_tensor<double>(rng, Shape{3, 2, 3, 3});
  auto w2 = random_tensor<double>(rng, Shape{1, 3, 3, 3});
  auto f = [&] {
    auto h = sigmoid(conv2d(x, w1, ConvSpec::conv(2, 3, 3, 1, 1)));
    auto o = sigmoid(conv2d(h, w2, ConvSpec::conv(3, 1, 3, 1, 1)));
    return sum_all(o);
  };
  CHECK(grad_check(f, {x, w1, w2}) < 1e-4);
}

TEST_CASE("tensor invariants: construction, item, backward preconditions") {
  CHECK_THROWS_AS(Tensor<float>(Shape{1, 1, 2, 2}, std::vector<float>{1.0f}),
                  ShapeError);
  CHECK_THROWS_AS(Tensor<float>(Shape{0, 1, 2, 2}), ShapeError);
  Tensor<float> t(Shape{1, 1, 1, 1}, std::vector<float>{3.0f});
  CHECK(t.item() == 3.0f);
  Tensor<float> big(Shape{1, 1, 2, 2}, 0.0f);
  CHECK_THROWS_AS(big.item(), ShapeError);
  CHECK_THROWS_AS(big.backward(), CheckError);
  Tensor<double> bigd(Shape{1, 1, 2, 2}, 0.0);
  CHECK_THROWS_AS(grad_check([&] { return sum_all(bigd); }, {bigd}, 1.0),
                  CheckError);
}

TEST_CASE("resize_bilinear at the identity size is exact") {
  Rng rng(43);
  auto x = random_tensor<float>(rng, Shape{1, 3, 8, 8}, 0, 1);
  auto y = resize_bilinear(x, 8, 8);
  CHECK(max_abs_diff(x.data(), y.data()) == 0.0);
  auto up = resize_bilinear(x, 16, 12);
  CHECK(up.shape() == Shape{1, 3, 16, 12});
  auto nn = resize_nearest(x, 8, 8);
  CHECK(max_abs_diff(x.data(), nn.data()) == 0.0);
}
