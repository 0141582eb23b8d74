#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "lrfr/losses.hpp"
#include "lrfr/rng.hpp"
#include "lrfr/tensor.hpp"

using namespace lrfr;

namespace {

Tensor randn(RngStream& rng, std::vector<int64_t> shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, scale);
  return t;
}

// Central-difference derivative of f along coordinate i of t.
double fd(Tensor& t, int64_t i, const std::function<double()>& f,
          double eps = 1e-6) {
  const double saved = t[i];
  t[i] = saved + eps;
  const double hi = f();
  t[i] = saved - eps;
  const double lo = f();
  t[i] = saved;
  return (hi - lo) / (2.0 * eps);
}

void check_grad_pair(Tensor x, Tensor y,
                     const std::function<DistResult(const Tensor&,
                                                    const Tensor&)>& d) {
  const DistResult res = d(x, y);
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double nx = fd(x, i, [&] { return d(x, y).value; });
    const double ny = fd(y, i, [&] { return d(x, y).value; });
    CHECK(res.grad_x[i] == doctest::Approx(nx).epsilon(1e-6));
    CHECK(res.grad_y[i] == doctest::Approx(ny).epsilon(1e-6));
    CHECK(res.grad_y[i] == -res.grad_x[i]);
  }
}

}  // namespace

TEST_CASE("logexp frozen scalar values") {
  const std::vector<double> ones = {1.0, 1.0};
  // (1/2) log(1 + 2(e - 1)) = 0.5 ln(2e - 1)
  CHECK(std::abs(logexp_value(ones, 1.0) - 0.744940062822375) < 1e-12);

  const std::vector<double> pair = {1.0, 0.0};
  const std::vector<double> g = logexp_grad_magnitudes(pair, 1.0);
  REQUIRE(g.size() == 2);
  CHECK(std::abs(g[0] - 0.5) < 1e-12);
  CHECK(std::abs(g[1] - 0.18393972058572116) < 1e-12);  // 1/(2e)
}

TEST_CASE("logexp remainder form agrees with the vector form") {
  RngStream rng(51);
  for (double p : {1.0, 2.0}) {
    for (int rep = 0; rep < 50; ++rep) {
      const int64_t dim = 1 + int64_t(rng.uniform_index(8));
      std::vector<double> d(size_t(dim), 0.0);
      for (double& v : d) v = rng.uniform(0.0, 2.0);
      const std::vector<double> mags = logexp_grad_magnitudes(d, p);
      for (size_t i = 0; i < d.size(); ++i) {
        double c = 0.0;
        for (size_t j = 0; j < d.size(); ++j)
          if (j != i) c += std::expm1(std::pow(d[j], p));
        CHECK(mags[i] ==
              doctest::Approx(logexp_grad_magnitude(d[i], c, p, dim))
                  .epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("logexp inequality suite at unit scale") {
  RngStream rng(52);
  const int64_t dim = 16;
  for (int rep = 0; rep < 2000; ++rep) {
    std::vector<double> d(size_t(dim), 0.0);
    double maxd = 0.0, mean = 0.0;
    for (double& v : d) {
      v = rng.uniform(0.0, 2.0);
      maxd = std::max(maxd, v);
      mean += v;
    }
    mean /= double(dim);
    const double L = logexp_value(d, 1.0);
    CHECK(L >= maxd / double(dim) - 1e-12);
    CHECK(L <= mean + 1e-12);

    const std::vector<double> g = logexp_grad_magnitudes(d, 1.0);
    for (size_t i = 0; i < d.size(); ++i) {
      CHECK(g[i] <= 1.0 / double(dim) + 1e-12);
      for (size_t j = i + 1; j < d.size(); ++j) {
        // Larger error, larger gradient share.
        if (d[i] > d[j]) CHECK(g[i] >= g[j] - 1e-12);
        if (d[j] > d[i]) CHECK(g[j] >= g[i] - 1e-12);
      }
    }
  }
}

TEST_CASE("logexp per-dim gradient reaches 1/D exactly when C vanishes") {
  // Single dimension: C = 0 and the magnitude is exactly 1/D.
  CHECK(std::abs(logexp_grad_magnitude(0.7, 0.0, 1.0, 1) - 1.0) < 1e-12);
  CHECK(std::abs(logexp_grad_magnitude(1.3, 0.0, 1.0, 4) - 0.25) < 1e-12);
  // Any positive remainder pulls it strictly below.
  CHECK(logexp_grad_magnitude(0.7, 0.05, 1.0, 1) < 1.0 - 1e-6);
}

TEST_CASE("logexp gradient magnitude is monotone decreasing in C") {
  RngStream rng(53);
  for (int rep = 0; rep < 200; ++rep) {
    const double d = rng.uniform(0.05, 2.0);
    const double p = rng.bernoulli(0.5) ? 1.0 : 2.0;
    double prev = logexp_grad_magnitude(d, 0.0, p, 8);
    for (double c : {0.1, 0.5, 2.0, 10.0, 100.0}) {
      const double cur = logexp_grad_magnitude(d, c, p, 8);
      CHECK(cur < prev + 1e-15);
      prev = cur;
    }
  }
}

TEST_CASE("logexp clamps huge arguments instead of overflowing") {
  const std::vector<double> big = {100.0, 3.0};
  const double v = logexp_value(big, 2.0);
  CHECK(std::isfinite(v));
  const std::vector<double> g = logexp_grad_magnitudes(big, 2.0);
  for (double m : g) CHECK(std::isfinite(m));
}

TEST_CASE("l1 value and sign convention") {
  const Tensor x({4}, {1.0, -2.0, 0.5, 0.5});
  const Tensor y({4}, {0.0, 0.0, 0.5, 1.5});
  const DistResult r = dist_l1(x, y);
  CHECK(r.value == doctest::Approx(1.0));  // (1+2+0+1)/4
  CHECK(r.grad_x[0] == 0.25);
  CHECK(r.grad_x[1] == -0.25);
  CHECK(r.grad_x[2] == 0.0);  // sign(0) = 0
  CHECK(r.grad_x[3] == -0.25);
}

TEST_CASE("l2 halves the squared error per dimension") {
  const Tensor x({2}, {3.0, 0.0});
  const Tensor y({2}, {0.0, -4.0});
  const DistResult r = dist_l2(x, y);
  CHECK(r.value == doctest::Approx((9.0 + 16.0) / 4.0));
  CHECK(r.grad_x[0] == doctest::Approx(1.5));
  CHECK(r.grad_x[1] == doctest::Approx(2.0));
}

TEST_CASE("smooth l1 and its quadratic-to-linear transition") {
  const Tensor x({1}, {0.5});
  const Tensor y({1}, {0.0});
  CHECK(dist_smooth_l1(x, y, 1.0).value == doctest::Approx(0.125));
  const Tensor x2({1}, {2.0});
  CHECK(dist_smooth_l1(x2, y, 1.0).value == doctest::Approx(1.5));
  // Value and slope are continuous at the transition.
  const Tensor xa({1}, {1.0 - 1e-9});
  const Tensor xb({1}, {1.0 + 1e-9});
  CHECK(dist_smooth_l1(xa, y, 1.0).value ==
        doctest::Approx(dist_smooth_l1(xb, y, 1.0).value).epsilon(1e-8));
  CHECK(dist_smooth_l1(xa, y, 1.0).grad_x[0] ==
        doctest::Approx(dist_smooth_l1(xb, y, 1.0).grad_x[0]).epsilon(1e-6));
}

TEST_CASE("identical inputs give zero distance for every kind") {
  RngStream rng(54);
  const Tensor x = randn(rng, {8});
  LossSpec spec;
  for (DistKind kind :
       {DistKind::l1, DistKind::l2, DistKind::smooth_l1, DistKind::logexp}) {
    spec.dist_kind = kind;
    const DistResult r = dist(x, x, spec);
    CHECK(r.value == 0.0);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(r.grad_x[i] == 0.0);
  }
}

TEST_CASE("distance gradients agree with finite differences") {
  RngStream rng(55);
  // Components drawn away from kinks: |x - y| kept off 0 and off beta.
  Tensor x = randn(rng, {6});
  Tensor y = randn(rng, {6});
  for (int64_t i = 0; i < x.numel(); ++i) {
    double d = x[i] - y[i];
    if (std::abs(d) < 0.05) x[i] += (d >= 0 ? 0.1 : -0.1);
    d = x[i] - y[i];
    if (std::abs(std::abs(d) - 1.0) < 0.05) x[i] += (d >= 0 ? 0.1 : -0.1);
  }
  check_grad_pair(x, y, [](const Tensor& a, const Tensor& b) {
    return dist_l1(a, b);
  });
  check_grad_pair(x, y, [](const Tensor& a, const Tensor& b) {
    return dist_l2(a, b);
  });
  check_grad_pair(x, y, [](const Tensor& a, const Tensor& b) {
    return dist_smooth_l1(a, b, 1.0);
  });
  check_grad_pair(x, y, [](const Tensor& a, const Tensor& b) {
    return dist_logexp(a, b, 1.0);
  });
  check_grad_pair(x, y, [](const Tensor& a, const Tensor& b) {
    return dist_logexp(a, b, 2.0);
  });
}

TEST_CASE("dist kind names round-trip and reject unknowns") {
  for (DistKind kind :
       {DistKind::l1, DistKind::l2, DistKind::smooth_l1, DistKind::logexp})
    CHECK(dist_kind_from_name(dist_kind_name(kind)) == kind);
  CHECK_THROWS_AS(dist_kind_from_name("huber"), Error);
}

TEST_CASE("loss spec validation bounds") {
  LossSpec spec;
  CHECK_NOTHROW(spec.validate());
  spec.p = 0.0;
  CHECK_THROWS_AS(spec.validate(), Error);
  spec.p = 1.0;
  spec.lambda = -0.5;
  CHECK_THROWS_AS(spec.validate(), Error);
  spec.lambda = 1.0;
  spec.cosface_m = 1.0;
  CHECK_THROWS_AS(spec.validate(), Error);
}

TEST_CASE("cosface with m=0 and s=1 is softmax over cosine logits") {
  RngStream rng(56);
  const int64_t B = 3, K = 4, D = 8;
  const Tensor emb = randn(rng, {B, D});
  const Tensor w = randn(rng, {K, D});
  const std::vector<int> labels = {1, 3, 0};
  const CosfaceResult r = cosface_loss(emb, w, labels, 1.0, 0.0);

  double want = 0.0;
  for (int64_t b = 0; b < B; ++b) {
    double norms_e = 0.0;
    for (int64_t i = 0; i < D; ++i) norms_e += emb[b * D + i] * emb[b * D + i];
    norms_e = std::sqrt(norms_e);
    std::vector<double> logits(size_t(K), 0.0);
    double maxl = -1e30;
    for (int64_t k = 0; k < K; ++k) {
      double dotv = 0.0, nw = 0.0;
      for (int64_t i = 0; i < D; ++i) {
        dotv += emb[b * D + i] * w[k * D + i];
        nw += w[k * D + i] * w[k * D + i];
      }
      logits[size_t(k)] = dotv / (norms_e * std::sqrt(nw));
      maxl = std::max(maxl, logits[size_t(k)]);
    }
    double z = 0.0;
    for (double l : logits) z += std::exp(l - maxl);
    want += -(logits[size_t(labels[size_t(b)])] - maxl) + std::log(z);
  }
  want /= double(B);
  CHECK(r.value == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("cosface loss at the two-class degenerate geometries") {
  // Both class rows equal to the embedding: the margin alone decides,
  // loss = log(1 + e^{s m}).
  const Tensor emb({1, 2}, {1.0, 0.0});
  const Tensor w_same({2, 2}, {1.0, 0.0, 1.0, 0.0});
  const std::vector<int> label0 = {0};
  const CosfaceResult tied = cosface_loss(emb, w_same, label0, 48.0, 0.4);
  CHECK(tied.value == doctest::Approx(19.2 + std::log1p(std::exp(-19.2)))
                          .epsilon(1e-12));

  // Antipodal wrong class: loss collapses to ~0.
  const Tensor w_anti({2, 2}, {1.0, 0.0, -1.0, 0.0});
  const CosfaceResult easy = cosface_loss(emb, w_anti, label0, 48.0, 0.4);
  CHECK(easy.value == doctest::Approx(std::log1p(std::exp(-76.8)))
                          .epsilon(1e-9));
  CHECK(easy.value < 1e-12);
}

TEST_CASE("cosface gradients agree with finite differences") {
  RngStream rng(57);
  const int64_t B = 3, K = 4, D = 6;
  Tensor emb = randn(rng, {B, D}, 0.8);
  Tensor w = randn(rng, {K, D}, 0.8);
  const std::vector<int> labels = {2, 0, 3};
  const CosfaceResult r = cosface_loss(emb, w, labels, 48.0, 0.4);
  auto value = [&] { return cosface_loss(emb, w, labels, 48.0, 0.4).value; };
  for (int64_t i = 0; i < emb.numel(); ++i) {
    const double n = fd(emb, i, value);
    CHECK(r.grad_embeddings[i] ==
          doctest::Approx(n).epsilon(1e-5).scale(std::max(1.0, std::abs(n))));
  }
  for (int64_t i = 0; i < w.numel(); ++i) {
    const double n = fd(w, i, value);
    CHECK(r.grad_weights[i] ==
          doctest::Approx(n).epsilon(1e-5).scale(std::max(1.0, std::abs(n))));
  }
}

TEST_CASE("total loss decomposes into its three terms") {
  RngStream rng(58);
  const int64_t B = 4, K = 5, D = 8;
  const Tensor f_hr = randn(rng, {B, D});
  const Tensor f_lr = randn(rng, {B, D});
  const Tensor w = randn(rng, {K, D});
  const std::vector<int> labels = {0, 2, 4, 1};
  LossSpec spec;
  spec.dist_kind = DistKind::logexp;
  spec.lambda = 0.7;
  const TotalLossResult r = total_loss(f_hr, f_lr, w, labels, spec);
  CHECK(r.l_all == doctest::Approx(0.7 * r.l_dist +
                                   0.5 * (r.l_cls_hr + r.l_cls_lr))
                       .epsilon(1e-14));
  CHECK(r.l_dist > 0.0);

  // Equal branches: the distance term vanishes and the halves agree.
  const TotalLossResult same = total_loss(f_hr, f_hr, w, labels, spec);
  CHECK(same.l_dist == 0.0);
  CHECK(same.l_cls_hr == same.l_cls_lr);
  CHECK(same.l_all == doctest::Approx(same.l_cls_hr).epsilon(1e-14));
}

TEST_CASE("lambda zero removes the distance term from the gradients") {
  RngStream rng(59);
  const int64_t B = 2, K = 3, D = 6;
  const Tensor f_hr = randn(rng, {B, D});
  const Tensor f_lr = randn(rng, {B, D});
  const Tensor w = randn(rng, {K, D});
  const std::vector<int> labels = {1, 2};
  LossSpec spec;
  spec.lambda = 0.0;
  const TotalLossResult r = total_loss(f_hr, f_lr, w, labels, spec);
  const CosfaceResult hr = cosface_loss(f_hr, w, labels, spec.cosface_s,
                                        spec.cosface_m);
  for (int64_t i = 0; i < r.grad_f_hr.numel(); ++i)
    CHECK(r.grad_f_hr[i] ==
          doctest::Approx(0.5 * hr.grad_embeddings[i]).epsilon(1e-12));
}

TEST_CASE("total loss gradients agree with finite differences") {
  RngStream rng(60);
  const int64_t B = 3, K = 4, D = 6;
  Tensor f_hr = randn(rng, {B, D});
  Tensor f_lr = randn(rng, {B, D});
  Tensor w = randn(rng, {K, D});
  const std::vector<int> labels = {3, 1, 0};
  LossSpec spec;
  spec.dist_kind = DistKind::logexp;
  spec.p = 1.0;
  spec.lambda = 1.0;
  // Keep normalized differences away from the |.| kink at 0.
  for (int64_t i = 0; i < f_hr.numel(); ++i)
    if (std::abs(f_hr[i] - f_lr[i]) < 0.05) f_hr[i] += 0.15;

  const TotalLossResult r = total_loss(f_hr, f_lr, w, labels, spec);
  auto value = [&] { return total_loss(f_hr, f_lr, w, labels, spec).l_all; };
  for (Tensor* t : {&f_hr, &f_lr, &w}) {
    const Tensor& g = t == &f_hr ? r.grad_f_hr
                    : t == &f_lr ? r.grad_f_lr
                                 : r.grad_weights;
    for (int64_t i = 0; i < t->numel(); ++i) {
      const double n = fd(*t, i, value);
      CHECK(g[i] ==
            doctest::Approx(n).epsilon(2e-5).scale(std::max(1.0, std::abs(n))));
    }
  }
}
