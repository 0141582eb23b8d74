#include "lrfr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "lrfr/common.hpp"
#include "lrfr/kernels.hpp"

namespace lrfr {
namespace {

// Exponent arguments are clamped here before e^(.). Normalized embeddings
// keep |x_i - y_i| <= 2 so this never fires in intended use; it only
// protects direct calls on raw tensors.
constexpr double kExpClamp = 50.0;
constexpr double kNormEps = 1e-12;

double sgn(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

double pow_p(double d, double p) { return p == 1.0 ? d : std::pow(d, p); }

void check_pair(const Tensor& x, const Tensor& y) {
  check(x.same_shape(y), "distance: shape mismatch, ", x.shape_str(), " vs ",
        y.shape_str());
  check(x.numel() >= 1, "distance: empty tensor");
}

DistResult make_result(const Tensor& x) {
  DistResult r;
  r.grad_x = Tensor(x.shape());
  r.grad_y = Tensor(x.shape());
  return r;
}

void negate_into(const Tensor& src, Tensor& dst) {
  for (int64_t i = 0; i < src.numel(); ++i) dst[i] = -src[i];
}

double logexp_core(const double* x, const double* y, int64_t n, double p,
                   double* gx) {
  // S = 1 + sum expm1(d_i^p); accumulating expm1 terms keeps the small-d
  // regime exact where e^d - 1 would cancel.
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = std::abs(x[i] - y[i]);
    acc += std::expm1(std::min(pow_p(d, p), kExpClamp));
  }
  const double s = 1.0 + acc;
  if (gx) {
    for (int64_t i = 0; i < n; ++i) {
      const double diff = x[i] - y[i];
      if (diff == 0.0) {
        gx[i] = 0.0;
        continue;
      }
      const double d = std::abs(diff);
      const double dp1 = p == 1.0 ? 1.0 : std::pow(d, p - 1.0);
      const double e = std::exp(std::min(pow_p(d, p), kExpClamp));
      gx[i] = sgn(diff) * dp1 * e / (double(n) * s);
    }
  }
  return std::log1p(acc) / (p * double(n));
}

}  // namespace

const char* dist_kind_name(DistKind k) {
  switch (k) {
    case DistKind::l1: return "l1";
    case DistKind::l2: return "l2";
    case DistKind::smooth_l1: return "smooth_l1";
    case DistKind::logexp: return "logexp";
  }
  return "?";
}

DistKind dist_kind_from_name(const std::string& name) {
  if (name == "l1") return DistKind::l1;
  if (name == "l2") return DistKind::l2;
  if (name == "smooth_l1") return DistKind::smooth_l1;
  if (name == "logexp") return DistKind::logexp;
  fail("unknown distance kind '", name,
       "', expected l1|l2|smooth_l1|logexp");
}

void LossSpec::validate() const {
  check(std::isfinite(p) && p > 0, "loss spec: p must be positive, got ", p);
  check(std::isfinite(beta) && beta > 0,
        "loss spec: beta must be positive, got ", beta);
  check(std::isfinite(lambda) && lambda >= 0,
        "loss spec: lambda must be non-negative, got ", lambda);
  check(std::isfinite(cosface_s) && cosface_s > 0,
        "loss spec: cosface scale must be positive, got ", cosface_s);
  check(std::isfinite(cosface_m) && cosface_m >= 0 && cosface_m < 1,
        "loss spec: cosface margin must be in [0,1), got ", cosface_m);
}

DistResult dist_l1(const Tensor& x, const Tensor& y) {
  check_pair(x, y);
  DistResult r = make_result(x);
  const int64_t n = x.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double diff = x[i] - y[i];
    acc += std::abs(diff);
    r.grad_x[i] = sgn(diff) / double(n);
  }
  r.value = acc / double(n);
  negate_into(r.grad_x, r.grad_y);
  return r;
}

DistResult dist_l2(const Tensor& x, const Tensor& y) {
  check_pair(x, y);
  DistResult r = make_result(x);
  const int64_t n = x.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double diff = x[i] - y[i];
    acc += diff * diff;
    r.grad_x[i] = diff / double(n);
  }
  r.value = acc / (2.0 * double(n));
  negate_into(r.grad_x, r.grad_y);
  return r;
}

DistResult dist_smooth_l1(const Tensor& x, const Tensor& y, double beta) {
  check_pair(x, y);
  check(beta > 0, "smooth_l1: beta must be positive, got ", beta);
  DistResult r = make_result(x);
  const int64_t n = x.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double diff = x[i] - y[i];
    const double d = std::abs(diff);
    if (d < beta) {
      acc += d * d / (2.0 * beta);
      r.grad_x[i] = diff / (beta * double(n));
    } else {
      acc += d - beta / 2.0;
      r.grad_x[i] = sgn(diff) / double(n);
    }
  }
  r.value = acc / double(n);
  negate_into(r.grad_x, r.grad_y);
  return r;
}

DistResult dist_logexp(const Tensor& x, const Tensor& y, double p) {
  check_pair(x, y);
  check(std::isfinite(p) && p > 0, "logexp: p must be positive, got ", p);
  DistResult r = make_result(x);
  r.value = logexp_core(x.data(), y.data(), x.numel(), p, r.grad_x.data());
  negate_into(r.grad_x, r.grad_y);
  return r;
}

DistResult dist(const Tensor& x, const Tensor& y, const LossSpec& spec) {
  switch (spec.dist_kind) {
    case DistKind::l1: return dist_l1(x, y);
    case DistKind::l2: return dist_l2(x, y);
    case DistKind::smooth_l1: return dist_smooth_l1(x, y, spec.beta);
    case DistKind::logexp: return dist_logexp(x, y, spec.p);
  }
  fail("unreachable distance kind");
}

double logexp_value(std::span<const double> dists, double p) {
  check(!dists.empty(), "logexp_value: empty distance vector");
  double acc = 0.0;
  for (double d : dists) {
    check(d >= 0, "logexp_value: negative distance ", d);
    acc += std::expm1(std::min(pow_p(d, p), kExpClamp));
  }
  return std::log1p(acc) / (p * double(dists.size()));
}

std::vector<double> logexp_grad_magnitudes(std::span<const double> dists,
                                           double p) {
  check(!dists.empty(), "logexp gradient: empty distance vector");
  double acc = 0.0;
  for (double d : dists) {
    check(d >= 0, "logexp gradient: negative distance ", d);
    acc += std::expm1(std::min(pow_p(d, p), kExpClamp));
  }
  const double s = 1.0 + acc;
  std::vector<double> out(dists.size());
  const auto n = double(dists.size());
  for (size_t i = 0; i < dists.size(); ++i) {
    const double d = dists[i];
    const double dp1 = p == 1.0 ? 1.0 : std::pow(d, p - 1.0);
    const double e = std::exp(std::min(pow_p(d, p), kExpClamp));
    out[i] = dp1 * e / (n * s);
  }
  return out;
}

double logexp_grad_magnitude(double d, double c, double p,
                             int64_t dim_count) {
  check(d >= 0, "logexp gradient: negative distance ", d);
  check(c >= 0, "logexp gradient: negative remainder ", c);
  check(dim_count >= 1, "logexp gradient: dim_count must be >= 1");
  const double dp1 = p == 1.0 ? 1.0 : std::pow(d, p - 1.0);
  const double e = std::exp(std::min(pow_p(d, p), kExpClamp));
  return dp1 * e / (double(dim_count) * (c + e));
}

namespace {

// Row-wise x / ||x||; returns 1/sqrt(ss + eps) per row for the backward
// pass. Matches the graph l2-normalize op bit for bit.
std::vector<double> normalize_rows(const Tensor& x, Tensor& out) {
  const int64_t d = x.dim(x.rank() - 1);
  const int64_t rows = x.numel() / d;
  std::vector<double> inv(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const double* xs = x.data() + r * d;
    const double ss = kernels::dot(xs, xs, size_t(d));
    inv[size_t(r)] = 1.0 / std::sqrt(ss + kNormEps);
    kernels::scale(xs, inv[size_t(r)], out.data() + r * d, size_t(d));
  }
  return inv;
}

// g_x += inv (g_xhat - xhat (xhat . g_xhat)) per row, scaled by alpha.
void normalize_backward(const Tensor& xhat, const std::vector<double>& inv,
                        const Tensor& g_xhat, double alpha, Tensor& g_x) {
  const int64_t d = xhat.dim(xhat.rank() - 1);
  const int64_t rows = xhat.numel() / d;
  for (int64_t r = 0; r < rows; ++r) {
    const double* ys = xhat.data() + r * d;
    const double* gs = g_xhat.data() + r * d;
    double* out = g_x.data() + r * d;
    const double proj = kernels::dot(ys, gs, size_t(d));
    const double a = alpha * inv[size_t(r)];
    for (int64_t i = 0; i < d; ++i) out[i] += a * (gs[i] - ys[i] * proj);
  }
}

}  // namespace

CosfaceResult cosface_loss(const Tensor& embeddings, const Tensor& weights,
                           std::span<const int> labels, double s, double m) {
  check(embeddings.rank() == 2, "cosface: embeddings must be B x D, got ",
        embeddings.shape_str());
  check(weights.rank() == 2, "cosface: class weights must be K x D, got ",
        weights.shape_str());
  const int64_t b = embeddings.dim(0);
  const int64_t d = embeddings.dim(1);
  const int64_t k = weights.dim(0);
  check(weights.dim(1) == d, "cosface: embedding dim ", d,
        " vs class weight dim ", weights.dim(1));
  check(int64_t(labels.size()) == b, "cosface: ", labels.size(),
        " labels for batch of ", b);
  for (int64_t i = 0; i < b; ++i)
    check(labels[size_t(i)] >= 0 && labels[size_t(i)] < k, "cosface: label ",
          labels[size_t(i)], " out of range [0,", k, ")");
  check(s > 0, "cosface: scale must be positive, got ", s);
  check(m >= 0 && m < 1, "cosface: margin must be in [0,1), got ", m);

  Tensor ehat(embeddings.shape());
  Tensor what(weights.shape());
  const std::vector<double> inv_e = normalize_rows(embeddings, ehat);
  const std::vector<double> inv_w = normalize_rows(weights, what);

  // cos[b][k] = ehat_b . what_k
  Tensor cosines({b, k});
  kernels::gemm(false, true, int(b), int(k), int(d), 1.0, ehat.data(), int(d),
                what.data(), int(d), 0.0, cosines.data(), int(k));

  // Per row: logits s cos (minus s m on the target), then softmax
  // cross-entropy via the max-shift trick. glogits = (softmax - onehot)/B.
  Tensor glogits({b, k});
  double total = 0.0;
  for (int64_t r = 0; r < b; ++r) {
    const double* cs = cosines.data() + r * k;
    double* gs = glogits.data() + r * k;
    const int y = labels[size_t(r)];
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < k; ++j) {
      const double logit = s * cs[j] - (j == y ? s * m : 0.0);
      gs[j] = logit;
      mx = std::max(mx, logit);
    }
    double denom = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      gs[j] = std::exp(gs[j] - mx);
      denom += gs[j];
    }
    total += std::log(denom) - (s * cs[y] - s * m - mx);
    for (int64_t j = 0; j < k; ++j) {
      gs[j] = gs[j] / denom - (j == y ? 1.0 : 0.0);
      gs[j] /= double(b);
    }
  }

  CosfaceResult res;
  res.value = total / double(b);

  // d logit / d cos = s everywhere: the margin is a constant shift.
  for (int64_t i = 0; i < glogits.numel(); ++i) glogits[i] *= s;

  // Back through the two matmul operands, then the two normalizations.
  Tensor g_ehat({b, d});
  Tensor g_what({k, d});
  kernels::gemm(false, false, int(b), int(d), int(k), 1.0, glogits.data(),
                int(k), what.data(), int(d), 0.0, g_ehat.data(), int(d));
  kernels::gemm(true, false, int(k), int(d), int(b), 1.0, glogits.data(),
                int(k), ehat.data(), int(d), 0.0, g_what.data(), int(d));

  res.grad_embeddings = Tensor({b, d});
  res.grad_weights = Tensor({k, d});
  normalize_backward(ehat, inv_e, g_ehat, 1.0, res.grad_embeddings);
  normalize_backward(what, inv_w, g_what, 1.0, res.grad_weights);
  return res;
}

TotalLossResult total_loss(const Tensor& f_hr, const Tensor& f_lr,
                           const Tensor& class_weights,
                           std::span<const int> labels,
                           const LossSpec& spec) {
  spec.validate();
  check(f_hr.rank() == 2, "total loss: embeddings must be B x D, got ",
        f_hr.shape_str());
  check(f_hr.same_shape(f_lr), "total loss: branch shape mismatch, ",
        f_hr.shape_str(), " vs ", f_lr.shape_str());
  const int64_t b = f_hr.dim(0);
  const int64_t d = f_hr.dim(1);

  Tensor nhr(f_hr.shape());
  Tensor nlr(f_lr.shape());
  const std::vector<double> inv_hr = normalize_rows(f_hr, nhr);
  const std::vector<double> inv_lr = normalize_rows(f_lr, nlr);

  // Distance term: mean over rows of dist(nhr_b, nlr_b). Row gradients
  // land on the normalized embeddings and are pushed back through the
  // normalization below.
  Tensor g_nhr({b, d});
  std::vector<double> row_grad(static_cast<size_t>(d));
  double dist_acc = 0.0;
  for (int64_t r = 0; r < b; ++r) {
    const double* x = nhr.data() + r * d;
    const double* y = nlr.data() + r * d;
    double v = 0.0;
    switch (spec.dist_kind) {
      case DistKind::l1: {
        double acc = 0.0;
        for (int64_t i = 0; i < d; ++i) {
          const double diff = x[i] - y[i];
          acc += std::abs(diff);
          row_grad[size_t(i)] = sgn(diff) / double(d);
        }
        v = acc / double(d);
        break;
      }
      case DistKind::l2: {
        double acc = 0.0;
        for (int64_t i = 0; i < d; ++i) {
          const double diff = x[i] - y[i];
          acc += diff * diff;
          row_grad[size_t(i)] = diff / double(d);
        }
        v = acc / (2.0 * double(d));
        break;
      }
      case DistKind::smooth_l1: {
        double acc = 0.0;
        for (int64_t i = 0; i < d; ++i) {
          const double diff = x[i] - y[i];
          const double ad = std::abs(diff);
          if (ad < spec.beta) {
            acc += ad * ad / (2.0 * spec.beta);
            row_grad[size_t(i)] = diff / (spec.beta * double(d));
          } else {
            acc += ad - spec.beta / 2.0;
            row_grad[size_t(i)] = sgn(diff) / double(d);
          }
        }
        v = acc / double(d);
        break;
      }
      case DistKind::logexp:
        v = logexp_core(x, y, d, spec.p, row_grad.data());
        break;
    }
    dist_acc += v;
    for (int64_t i = 0; i < d; ++i)
      g_nhr[r * d + i] = row_grad[size_t(i)] / double(b);
  }

  TotalLossResult res;
  res.l_dist = dist_acc / double(b);

  res.grad_f_hr = Tensor({b, d});
  res.grad_f_lr = Tensor({b, d});
  normalize_backward(nhr, inv_hr, g_nhr, spec.lambda, res.grad_f_hr);
  for (int64_t i = 0; i < g_nhr.numel(); ++i) g_nhr[i] = -g_nhr[i];
  normalize_backward(nlr, inv_lr, g_nhr, spec.lambda, res.grad_f_lr);

  const CosfaceResult cls_hr =
      cosface_loss(f_hr, class_weights, labels, spec.cosface_s, spec.cosface_m);
  const CosfaceResult cls_lr =
      cosface_loss(f_lr, class_weights, labels, spec.cosface_s, spec.cosface_m);
  res.l_cls_hr = cls_hr.value;
  res.l_cls_lr = cls_lr.value;

  kernels::axpy(0.5, cls_hr.grad_embeddings.data(), res.grad_f_hr.data(),
                size_t(b * d));
  kernels::axpy(0.5, cls_lr.grad_embeddings.data(), res.grad_f_lr.data(),
                size_t(b * d));

  res.grad_weights = Tensor(class_weights.shape());
  kernels::axpy(0.5, cls_hr.grad_weights.data(), res.grad_weights.data(),
                size_t(res.grad_weights.numel()));
  kernels::axpy(0.5, cls_lr.grad_weights.data(), res.grad_weights.data(),
                size_t(res.grad_weights.numel()));

  res.l_all = spec.lambda * res.l_dist + 0.5 * res.l_cls_hr +
              0.5 * res.l_cls_lr;
  return res;
}

}  // namespace lrfr
