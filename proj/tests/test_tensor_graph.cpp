#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "lrfr/graph.hpp"
#include "lrfr/rng.hpp"
#include "lrfr/tensor.hpp"

using namespace lrfr;

namespace {

Tensor randn(RngStream& rng, std::vector<int64_t> shape, double scale = 1.0,
             bool grad = false) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, scale);
  t.requires_grad = grad;
  return t;
}

// Direct convolution: out[n][co][oy][ox] = bias[co] + sum over ci,ky,kx.
Tensor naive_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                    int stride, int pad) {
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  Tensor out({N, Co, Ho, Wo});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t co = 0; co < Co; ++co)
      for (int64_t oy = 0; oy < Ho; ++oy)
        for (int64_t ox = 0; ox < Wo; ++ox) {
          double acc = bias[co];
          for (int64_t ci = 0; ci < C; ++ci)
            for (int64_t ky = 0; ky < kh; ++ky)
              for (int64_t kx = 0; kx < kw; ++kx) {
                const int64_t iy = oy * stride + ky - pad;
                const int64_t ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x[((n * C + ci) * H + iy) * W + ix] *
                       w[((co * C + ci) * kh + ky) * kw + kx];
              }
          out[((n * Co + co) * Ho + oy) * Wo + ox] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("tensor shape and data length must agree") {
  CHECK_NOTHROW(Tensor({2, 3}, std::vector<double>(6, 0.0)));
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5, 0.0)), Error);
  Tensor t({2, 2});
  CHECK(t.numel() == 4);
  CHECK_THROWS_AS((void)t.dim(2), Error);
}

TEST_CASE("non-finite detection reports the first offender") {
  Tensor t({4});
  CHECK(t.all_finite());
  CHECK(t.first_nonfinite() == -1);
  t[2] = std::nan("");
  t[3] = INFINITY;
  CHECK(!t.all_finite());
  CHECK(t.first_nonfinite() == 2);
}

TEST_CASE("elementwise ops and row broadcast add") {
  OpGraph g;
  const auto a = g.input("a");
  const auto r = g.input("r");
  g.set_output(g.add(a, r));
  NamedTensors in;
  in["a"] = Tensor({2, 3}, {1, 2, 3, 4, 5, 6});
  in["r"] = Tensor({3}, {10, 20, 30});
  const Tensor out = evaluate(g, in).output;
  const std::vector<double> want = {11, 22, 33, 14, 25, 36};
  for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == want[size_t(i)]);
}

TEST_CASE("matmul with and without rhs transpose") {
  OpGraph g;
  const auto a = g.input("a");
  const auto b = g.input("b");
  g.set_output(g.matmul(a, b, /*trans_b=*/true));
  NamedTensors in;
  in["a"] = Tensor({2, 3}, {1, 2, 3, 4, 5, 6});
  in["b"] = Tensor({2, 3}, {1, 0, 1, 0, 1, 0});  // b^T is 3x2
  const Tensor out = evaluate(g, in).output;
  CHECK(out.dim(0) == 2);
  CHECK(out.dim(1) == 2);
  CHECK(out[0] == 4);   // 1+3
  CHECK(out[1] == 2);   // 2
  CHECK(out[2] == 10);  // 4+6
  CHECK(out[3] == 5);
}

TEST_CASE("conv2d matches the direct nested-loop convolution") {
  RngStream rng(21);
  const struct {
    int64_t N, C, H, W, Co;
    int k, stride, pad;
  } cases[] = {
      {1, 1, 5, 5, 1, 3, 1, 0},
      {2, 3, 8, 7, 4, 3, 1, 1},
      {1, 2, 9, 9, 3, 3, 2, 1},
      {2, 4, 6, 6, 2, 1, 1, 0},
      {1, 1, 4, 4, 1, 4, 4, 0},
  };
  for (const auto& c : cases) {
    NamedTensors in;
    in["x"] = randn(rng, {c.N, c.C, c.H, c.W});
    in["w"] = randn(rng, {c.Co, c.C, c.k, c.k});
    in["b"] = randn(rng, {c.Co});
    OpGraph g;
    g.set_output(g.conv2d(g.input("x"), g.input("w"), g.input("b"), c.stride,
                          c.pad));
    const Tensor got = evaluate(g, in).output;
    const Tensor want = naive_conv2d(in["x"], in["w"], in["b"], c.stride,
                                     c.pad);
    REQUIRE(got.shape() == want.shape());
    for (int64_t i = 0; i < got.numel(); ++i)
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("prelu applies per-channel slopes to negative inputs only") {
  OpGraph g;
  g.set_output(g.prelu(g.input("x"), g.input("s")));
  NamedTensors in;
  in["x"] = Tensor({1, 2, 1, 2}, {-2, 3, -4, 5});
  in["s"] = Tensor({2}, {0.5, 0.25});
  const Tensor out = evaluate(g, in).output;
  CHECK(out[0] == -1.0);
  CHECK(out[1] == 3.0);
  CHECK(out[2] == -1.0);
  CHECK(out[3] == 5.0);
}

TEST_CASE("l2_normalize produces unit rows and handles tiny rows") {
  OpGraph g;
  g.set_output(g.l2_normalize(g.input("x")));
  NamedTensors in;
  in["x"] = Tensor({2, 2}, {3, 4, 0, 0});
  const Tensor out = evaluate(g, in).output;
  CHECK(out[0] == doctest::Approx(0.6));
  CHECK(out[1] == doctest::Approx(0.8));
  // Zero row: eps guard keeps the output finite.
  CHECK(std::isfinite(out[2]));
  CHECK(std::isfinite(out[3]));
}

TEST_CASE("global_avg_pool averages each channel plane") {
  OpGraph g;
  g.set_output(g.global_avg_pool(g.input("x")));
  NamedTensors in;
  in["x"] = Tensor({1, 2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
  const Tensor out = evaluate(g, in).output;
  CHECK(out.dim(0) == 1);
  CHECK(out.dim(1) == 2);
  CHECK(out[0] == doctest::Approx(2.5));
  CHECK(out[1] == doctest::Approx(25.0));
}

TEST_CASE("evaluate requires every named input") {
  OpGraph g;
  g.set_output(g.add(g.input("x"), g.input("y")));
  NamedTensors in;
  in["x"] = Tensor::scalar(1.0);
  CHECK_THROWS_AS(evaluate(g, in), Error);
}

TEST_CASE("evaluate rejects non-finite intermediate values") {
  OpGraph g;
  g.set_output(g.log(g.input("x")));
  NamedTensors in;
  in["x"] = Tensor::scalar(-1.0);
  CHECK_THROWS_AS(evaluate(g, in), Error);
}

TEST_CASE("evaluation is bitwise deterministic") {
  RngStream rng(22);
  NamedTensors in;
  in["x"] = randn(rng, {2, 3, 6, 6});
  in["w"] = randn(rng, {4, 3, 3, 3});
  in["b"] = randn(rng, {4});
  in["s"] = randn(rng, {4}, 0.1);
  OpGraph g;
  const auto conv = g.conv2d(g.input("x"), g.input("w"), g.input("b"), 2, 1);
  g.set_output(g.sum(g.global_avg_pool(g.prelu(conv, g.input("s")))));
  const Tensor a = evaluate(g, in).output;
  const Tensor b = evaluate(g, in).output;
  REQUIRE(a.numel() == b.numel());
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("backprop rejects a cache from a modified graph") {
  OpGraph g;
  const auto x = g.input("x");
  g.set_output(g.square(x));
  NamedTensors in;
  in["x"] = Tensor({2}, {1, 2});
  in["x"].requires_grad = true;
  EvalResult res = evaluate(g, in);
  g.set_output(g.sum(g.square(x)));  // bump revision
  CHECK_THROWS_AS(backprop(g, res.cache, Tensor::scalar(1.0)), Error);
}

TEST_CASE("built-in grad check validates a composite smooth graph") {
  RngStream rng(23);
  NamedTensors in;
  in["x"] = randn(rng, {1, 2, 6, 6}, 1.0, true);
  in["w"] = randn(rng, {3, 2, 3, 3}, 0.5, true);
  in["b"] = randn(rng, {3}, 0.5, true);
  in["s"] = Tensor({3}, {0.3, 0.5, 0.7});
  in["s"].requires_grad = true;
  in["m"] = randn(rng, {3, 4}, 0.5, true);
  // Keep pre-activations away from the prelu kink.
  for (int64_t i = 0; i < in["b"].numel(); ++i) in["b"][i] += 2.0;

  OpGraph g;
  const auto conv = g.conv2d(g.input("x"), g.input("w"), g.input("b"), 2, 1);
  const auto act = g.prelu(conv, g.input("s"));
  const auto pooled = g.global_avg_pool(act);
  const auto proj = g.matmul(pooled, g.input("m"));
  const auto norm = g.l2_normalize(proj);
  g.set_output(g.mean(g.square(norm)));

  const GradReport rep = grad_check(g, in, 1e-6, 1e-6);
  CHECK(rep.pass);
  CHECK(rep.max_rel_err < 1e-6);
  CHECK(rep.entries.size() == 5);
}

TEST_CASE("grad check flags a kink inside the difference stencil") {
  // With x halfway inside the stencil, central differences across the
  // abs kink report slope 1/2 while the analytic gradient is 1. The
  // harness must surface the mismatch rather than smooth it away.
  OpGraph g;
  g.set_output(g.sum(g.abs(g.input("x"))));
  NamedTensors in;
  in["x"] = Tensor({3}, {1.0, 5e-7, -1.0});
  in["x"].requires_grad = true;
  const GradReport rep = grad_check(g, in, 1e-6, 1e-4);
  CHECK(!rep.pass);
  CHECK(rep.max_rel_err > 0.1);
}
