#pragma once

#include <span>
#include <string>

#include "lrfr/tensor.hpp"

namespace lrfr {

enum class DistKind { l1, l2, smooth_l1, logexp };

const char* dist_kind_name(DistKind k);
DistKind dist_kind_from_name(const std::string& name);

struct LossSpec {
  DistKind dist_kind = DistKind::logexp;
  double p = 1.0;          // logexp exponent
  double beta = 1.0;       // smooth-l1 transition
  double lambda = 1.0;     // distance term weight
  double cosface_s = 48.0;
  double cosface_m = 0.4;

  void validate() const;
};

// Distance between two equal-length vectors plus analytic gradients.
// All four kinds are symmetric functions of x - y, so grad_y == -grad_x.
struct DistResult {
  double value = 0.0;
  Tensor grad_x;
  Tensor grad_y;
};

// value = mean |x_i - y_i|; gradient sign(x_i - y_i)/D with sign(0) = 0.
DistResult dist_l1(const Tensor& x, const Tensor& y);

// value = sum (x_i - y_i)^2 / 2D; gradient (x_i - y_i)/D.
DistResult dist_l2(const Tensor& x, const Tensor& y);

// Per-dim d^2/2b for |d| < b else |d| - b/2, averaged.
DistResult dist_smooth_l1(const Tensor& x, const Tensor& y, double beta);

// value = log(1 + sum_i (e^{|x_i-y_i|^p} - 1)) / (p D).
// The per-dimension gradient magnitude is e^{d_i^p} d_i^{p-1} / (D S)
// where S is the log argument; dimensions with larger error get a larger
// share, and error in the other dimensions (the remainder of S) shrinks
// the current dimension's gradient. Exponent arguments are clamped at 50;
// normalized embeddings keep |d| <= 2 so the clamp never fires in
// intended use.
DistResult dist_logexp(const Tensor& x, const Tensor& y, double p);

// Dispatch on spec.dist_kind.
DistResult dist(const Tensor& x, const Tensor& y, const LossSpec& spec);

// Analysis forms over the nonnegative distance vector itself, used to
// study the loss independently of any particular (x, y) realization.
double logexp_value(std::span<const double> dists, double p);
std::vector<double> logexp_grad_magnitudes(std::span<const double> dists,
                                           double p);

// One dimension's gradient magnitude with the other dimensions
// summarized as c = sum_{j != i} (e^{d_j^p} - 1):
//   d^{p-1} e^{d^p} / (dim_count (c + e^{d^p})).
double logexp_grad_magnitude(double d, double c, double p, int64_t dim_count);

struct CosfaceResult {
  double value = 0.0;
  Tensor grad_embeddings;  // B x D
  Tensor grad_weights;     // K x D
};

// Margin softmax over cosine logits: the target class logit is
// s (cos t - m), the rest s cos t; mean cross-entropy over the batch.
// Both embeddings and class weights are L2-normalized internally and
// gradients flow through both normalizations.
CosfaceResult cosface_loss(const Tensor& embeddings, const Tensor& weights,
                           std::span<const int> labels, double s, double m);

struct TotalLossResult {
  double l_all = 0.0;
  double l_dist = 0.0;
  double l_cls_hr = 0.0;
  double l_cls_lr = 0.0;
  Tensor grad_f_hr;
  Tensor grad_f_lr;
  Tensor grad_weights;
};

// l_all = lambda * L_dist(normalize rows of f_hr, f_lr)
//       + 1/2 L_cls(f_hr) + 1/2 L_cls(f_lr),
// with L_dist averaged over the batch. The distance sees normalized
// embeddings; the classification halves take the raw embeddings
// (cosface normalizes internally).
TotalLossResult total_loss(const Tensor& f_hr, const Tensor& f_lr,
                           const Tensor& class_weights,
                           std::span<const int> labels, const LossSpec& spec);

}  // namespace lrfr
