#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "oracles.hpp"
#include "revnet/kernels.hpp"
#include "revnet/tensor.hpp"

using namespace revnet;

namespace {

KernelParams<double> conv_params(Index oc, Index ic, Index k, Index stride,
                                 Index padding, Rng& rng, bool bias = true) {
  auto p = KernelParams<double>::conv2d(oc, ic, k, stride, padding, bias);
  fill_normal(p.weights, rng, 0.5);
  if (bias) fill_normal(p.bias, rng, 0.2);
  return p;
}

}  // namespace

TEST_CASE("conv2d scalar case") {
  auto p = KernelParams<double>::conv2d(1, 1, 1, 1, 0, true);
  p.weights[0] = 3.0;
  p.bias[0] = 0.0;
  Tensor<double> x = Tensor<double>::full(Shape{1, 1, 1, 1}, 2.0);
  auto y = conv2d(x, p);
  CHECK(y[0] == doctest::Approx(6.0));
}

TEST_CASE("conv2d ones counting with padding") {
  auto p = KernelParams<double>::conv2d(1, 1, 3, 1, 1, false);
  for (Index i = 0; i < p.weights.numel(); ++i) p.weights[i] = 1.0;
  Tensor<double> x = Tensor<double>::full(Shape{1, 1, 3, 3}, 1.0);
  auto y = conv2d(x, p);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  CHECK(y(0, 0, 1, 1) == 9.0);
  CHECK(y(0, 0, 0, 0) == 4.0);
  CHECK(y(0, 0, 0, 2) == 4.0);
  CHECK(y(0, 0, 2, 0) == 4.0);
  CHECK(y(0, 0, 2, 2) == 4.0);
}

TEST_CASE("conv2d matches six-loop reference bit for bit") {
  Rng rng(11);
  // strided case from the spec plus a padded stride-1 case
  struct Case {
    Shape in;
    Index oc, k, stride, pad;
  };
  for (const Case& c : {Case{{2, 4, 8, 8}, 3, 3, 2, 0},
                        Case{{2, 8, 16, 16}, 5, 3, 1, 1},
                        Case{{1, 3, 7, 9}, 4, 1, 1, 0}}) {
    auto x = oracle::random_tensor<double>(c.in, rng);
    auto p = conv_params(c.oc, c.in.c, c.k, c.stride, c.pad, rng);
    auto got = conv2d(x, p);
    auto want = oracle::conv2d_reference(x, p);
    REQUIRE(got.shape() == want.shape());
    for (Index i = 0; i < got.numel(); ++i) CHECK(got[i] == want[i]);
  }
}

TEST_CASE("conv2d shape errors name the dimension") {
  Rng rng(3);
  auto p = conv_params(2, 3, 3, 1, 1, rng);
  Tensor<double> x(1, 4, 8, 8);  // 4 channels vs kernel c_in 3
  CHECK_THROWS_AS(conv2d(x, p), ShapeError);
  CHECK_THROWS_WITH_AS(conv2d(x, p),
                       doctest::Contains("input channels 4"), ShapeError);
}

TEST_CASE("conv2d_vjp zeros and scalar product rule") {
  auto p = KernelParams<double>::conv2d(1, 1, 1, 1, 0, true);
  p.weights[0] = 3.0;
  Tensor<double> x = Tensor<double>::full(Shape{1, 1, 1, 1}, 2.0);

  Tensor<double> dy0(1, 1, 1, 1);
  auto g0 = conv2d_vjp(x, p, dy0);
  CHECK(g0.dx[0] == 0.0);
  CHECK(g0.dw[0] == 0.0);
  CHECK(g0.db[0] == 0.0);

  Tensor<double> dy1 = Tensor<double>::full(Shape{1, 1, 1, 1}, 1.0);
  auto g1 = conv2d_vjp(x, p, dy1);
  CHECK(g1.dx[0] == doctest::Approx(3.0));
  CHECK(g1.dw[0] == doctest::Approx(2.0));
  CHECK(g1.db[0] == doctest::Approx(1.0));
}

TEST_CASE("conv2d_vjp matches finite differences") {
  Rng rng(17);
  auto x = oracle::random_tensor<double>(Shape{2, 3, 6, 6}, rng);
  auto p = conv_params(4, 3, 3, 2, 1, rng);
  auto cot = oracle::random_tensor<double>(conv2d(x, p).shape(), rng);

  auto g = conv2d_vjp(x, p, cot);

  auto fd_x = oracle::central_diff(
      x, [&] { return oracle::weighted_sum(conv2d(x, p), cot); });
  CHECK(oracle::max_rel_err(g.dx, fd_x) < 1e-6);

  auto fd_w = oracle::central_diff(
      p.weights, [&] { return oracle::weighted_sum(conv2d(x, p), cot); });
  CHECK(oracle::max_rel_err(g.dw, fd_w) < 1e-6);

  auto fd_b = oracle::central_diff(
      p.bias, [&] { return oracle::weighted_sum(conv2d(x, p), cot); });
  CHECK(oracle::max_rel_err(g.db, fd_b) < 1e-6);
}

TEST_CASE("batchnorm constant input centers to zero") {
  auto p = KernelParams<double>::batchnorm(3);
  Tensor<double> x(2, 3, 4, 4);
  for (Index c = 0; c < 3; ++c)
    for (Index b = 0; b < 2; ++b)
      for (Index i = 0; i < 16; ++i)
        x.data()[x.offset(b, c, 0, 0) + i] = 5.0 + c;
  auto [y, st] = batchnorm_train(x, p);
  for (Index i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(0.0));
  CHECK(st.var[0] == doctest::Approx(0.0));
}

TEST_CASE("batchnorm gamma zero gives beta broadcast") {
  auto p = KernelParams<double>::batchnorm(2);
  p.gamma[0] = 0.0;
  p.gamma[1] = 0.0;
  p.bias[0] = -1.5;
  p.bias[1] = 2.5;
  Rng rng(5);
  auto x = oracle::random_tensor<double>(Shape{2, 2, 3, 3}, rng);
  auto [y, st] = batchnorm_train(x, p);
  for (Index b = 0; b < 2; ++b)
    for (Index c = 0; c < 2; ++c)
      for (Index i = 0; i < 9; ++i)
        CHECK(y.data()[y.offset(b, c, 0, 0) + i] ==
              doctest::Approx(p.bias[c]));
}

TEST_CASE("batchnorm normalizes to mean 0 variance 1") {
  auto p = KernelParams<double>::batchnorm(4);
  Rng rng(7);
  Tensor<double> x(3, 4, 5, 5);
  fill_normal(x, rng, 2.0);
  for (Index i = 0; i < x.numel(); ++i) x[i] += 0.7;
  auto [y, st] = batchnorm_train(x, p);

  const Index m = 3 * 5 * 5;
  for (Index c = 0; c < 4; ++c) {
    double mean = 0, var = 0;
    for (Index b = 0; b < 3; ++b)
      for (Index i = 0; i < 25; ++i) mean += y.data()[y.offset(b, c, 0, 0) + i];
    mean /= m;
    for (Index b = 0; b < 3; ++b)
      for (Index i = 0; i < 25; ++i) {
        double d = y.data()[y.offset(b, c, 0, 0) + i] - mean;
        var += d * d;
      }
    var /= m;
    CHECK(std::abs(mean) < 1e-10);
    CHECK(std::abs(var - 1.0) < 1e-4);  // epsilon 1e-5 shrinks variance a bit
  }
}

TEST_CASE("batchnorm replay is bitwise deterministic") {
  auto p = KernelParams<double>::batchnorm(3);
  Rng rng(9);
  fill_normal(p.gamma, rng, 1.0);
  fill_normal(p.bias, rng, 1.0);
  auto x = oracle::random_tensor<double>(Shape{2, 3, 4, 4}, rng);
  auto [y, st] = batchnorm_train(x, p);
  auto r1 = batchnorm_replay(x, p, st);
  auto r2 = batchnorm_replay(x, p, st);
  for (Index i = 0; i < y.numel(); ++i) {
    CHECK(r1[i] == y[i]);
    CHECK(r1[i] == r2[i]);
  }
}

TEST_CASE("batchnorm replay rejects stats channel mismatch") {
  auto p = KernelParams<double>::batchnorm(3);
  Rng rng(2);
  auto x = oracle::random_tensor<double>(Shape{1, 3, 2, 2}, rng);
  BatchStats<double> st;
  st.mean.setZero(2);
  st.var.setOnes(2);
  CHECK_THROWS_AS(batchnorm_replay(x, p, st), ShapeError);
}

TEST_CASE("batchnorm_vjp trivial cases") {
  auto p = KernelParams<double>::batchnorm(2);
  Rng rng(13);
  auto x = oracle::random_tensor<double>(Shape{2, 2, 3, 3}, rng);
  auto [y, st] = batchnorm_train(x, p);

  Tensor<double> dy0(x.shape());
  auto g0 = batchnorm_vjp(x, p, st, dy0);
  CHECK(g0.dx.max_abs() == 0.0);
  CHECK(g0.dgamma.max_abs() == 0.0);
  CHECK(g0.dbeta.max_abs() == 0.0);

  auto dy = oracle::random_tensor<double>(x.shape(), rng);
  auto g = batchnorm_vjp(x, p, st, dy);
  for (Index c = 0; c < 2; ++c) {
    double sum = 0;
    for (Index b = 0; b < 2; ++b)
      for (Index i = 0; i < 9; ++i) sum += dy.data()[dy.offset(b, c, 0, 0) + i];
    CHECK(g.dbeta[c] == doctest::Approx(sum));
  }
}

TEST_CASE("batchnorm_vjp matches finite differences") {
  auto p = KernelParams<double>::batchnorm(3);
  Rng rng(19);
  fill_normal(p.gamma, rng, 0.7);
  fill_normal(p.bias, rng, 0.3);
  auto x = oracle::random_tensor<double>(Shape{2, 3, 4, 4}, rng);
  auto cot = oracle::random_tensor<double>(x.shape(), rng);

  auto [y, st] = batchnorm_train(x, p);
  auto g = batchnorm_vjp(x, p, st, cot);

  auto loss = [&] {
    auto [yy, ss] = batchnorm_train(x, p);
    return oracle::weighted_sum(yy, cot);
  };
  auto fd_x = oracle::central_diff(x, loss);
  CHECK(oracle::max_rel_err(g.dx, fd_x) < 1e-6);
  auto fd_gamma = oracle::central_diff(p.gamma, loss);
  CHECK(oracle::max_rel_err(g.dgamma, fd_gamma) < 1e-6);
  auto fd_beta = oracle::central_diff(p.bias, loss);
  CHECK(oracle::max_rel_err(g.dbeta, fd_beta) < 1e-6);
}

TEST_CASE("relu and its vjp") {
  Tensor<double> x(1, 3, 1, 1);
  x[0] = -1.0;
  x[1] = 0.0;
  x[2] = 2.0;
  auto y = relu(x);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 2.0);

  Tensor<double> dy = Tensor<double>::full(x.shape(), 5.0);
  auto dx = relu_vjp(x, dy);
  CHECK(dx[0] == 0.0);
  CHECK(dx[1] == 0.0);  // subgradient at 0 is 0 by convention
  CHECK(dx[2] == 5.0);
}

TEST_CASE("relu vjp matches finite differences away from zero") {
  Rng rng(23);
  auto x = oracle::random_tensor<double>(Shape{2, 4, 5, 5}, rng);
  auto cot = oracle::random_tensor<double>(x.shape(), rng);
  auto dx = relu_vjp(x, cot);
  auto fd = oracle::central_diff(
      x, [&] { return oracle::weighted_sum(relu(x), cot); });
  for (Index i = 0; i < x.numel(); ++i) {
    if (std::abs(x[i]) < 1e-4) continue;
    CHECK(oracle::rel_err(dx[i], fd[i]) < 1e-6);
  }
}

TEST_CASE("pool_and_head identity-like linear") {
  const Index c = 4;
  auto lin = KernelParams<double>::linear(c, c, true);
  for (Index i = 0; i < c; ++i) lin.weights(i, i, 0, 0) = 1.0;
  Tensor<double> x = Tensor<double>::full(Shape{2, c, 3, 3}, 0.75);
  auto logits = pool_and_head(x, lin);
  CHECK(logits.shape() == Shape{2, c, 1, 1});
  for (Index i = 0; i < logits.numel(); ++i)
    CHECK(logits[i] == doctest::Approx(0.75));
}

TEST_CASE("pool_and_head vjp zeros and finite differences") {
  Rng rng(29);
  auto x = oracle::random_tensor<double>(Shape{2, 3, 4, 4}, rng);
  auto lin = KernelParams<double>::linear(5, 3, true);
  fill_normal(lin.weights, rng, 0.5);
  fill_normal(lin.bias, rng, 0.2);

  Tensor<double> dy0(2, 5, 1, 1);
  auto g0 = pool_and_head_vjp(x, lin, dy0);
  CHECK(g0.dx.max_abs() == 0.0);
  CHECK(g0.dw.max_abs() == 0.0);
  CHECK(g0.db.max_abs() == 0.0);

  auto cot = oracle::random_tensor<double>(Shape{2, 5, 1, 1}, rng);
  auto g = pool_and_head_vjp(x, lin, cot);
  auto loss = [&] { return oracle::weighted_sum(pool_and_head(x, lin), cot); };
  CHECK(oracle::max_rel_err(g.dx, oracle::central_diff(x, loss)) < 1e-6);
  CHECK(oracle::max_rel_err(g.dw, oracle::central_diff(lin.weights, loss)) <
        1e-6);
  CHECK(oracle::max_rel_err(g.db, oracle::central_diff(lin.bias, loss)) <
        1e-6);
}

TEST_CASE("softmax_xent uniform logits and margin monotonicity") {
  const Index k = 7;
  Tensor<double> logits = Tensor<double>::full(Shape{3, k, 1, 1}, 0.4);
  auto r = softmax_xent(logits, {0, 3, 6});
  CHECK(r.loss == doctest::Approx(std::log(static_cast<double>(k))));

  double prev = r.loss;
  for (double margin : {1.0, 4.0, 16.0, 64.0}) {
    Tensor<double> l(1, 2, 1, 1);
    l(0, 0, 0, 0) = margin;
    l(0, 1, 0, 0) = 0.0;
    auto rr = softmax_xent(l, {0});
    CHECK(rr.loss < prev);
    prev = rr.loss;
  }
  CHECK(prev < 1e-10);
}

TEST_CASE("softmax_xent rejects out-of-range labels") {
  Tensor<double> logits(2, 3, 1, 1);
  CHECK_THROWS_AS(softmax_xent(logits, {0, 3}), ShapeError);
  CHECK_THROWS_AS(softmax_xent(logits, {-1, 0}), ShapeError);
}

TEST_CASE("softmax_xent dlogits matches finite differences") {
  Rng rng(31);
  auto logits = oracle::random_tensor<double>(Shape{4, 6, 1, 1}, rng);
  std::vector<Index> labels = {2, 0, 5, 3};
  auto r = softmax_xent(logits, labels);
  auto fd = oracle::central_diff(logits, [&] {
    return static_cast<double>(softmax_xent(logits, labels).loss);
  });
  CHECK(oracle::max_rel_err(r.dlogits, fd) < 1e-6);
}

TEST_CASE("kernels do not mutate their inputs") {
  Rng rng(37);
  auto x = oracle::random_tensor<double>(Shape{2, 4, 6, 6}, rng);
  auto before = x;
  auto p = conv_params(4, 4, 3, 1, 1, rng);
  auto bn = KernelParams<double>::batchnorm(4);

  conv2d(x, p);
  batchnorm_train(x, bn);
  relu(x);
  global_avg_pool(x);
  for (Index i = 0; i < x.numel(); ++i) CHECK(x[i] == before[i]);
}

TEST_CASE("kernel outputs stay finite on finite input") {
  Rng rng(41);
  auto x = oracle::random_tensor<double>(Shape{2, 4, 8, 8}, rng, 10.0);
  auto p = conv_params(6, 4, 3, 1, 1, rng);
  auto y = conv2d(x, p);
  CHECK(y.all_finite());
  auto bn = KernelParams<double>::batchnorm(6);
  auto [z, st] = batchnorm_train(y, bn);
  CHECK(z.all_finite());
  CHECK(relu(z).all_finite());
}
