#include "lrfr/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "lrfr/common.hpp"
#include "lrfr/graph.hpp"
#include "lrfr/kernels.hpp"
#include "lrfr/losses.hpp"
#include "lrfr/model.hpp"
#include "lrfr/rng.hpp"

namespace lrfr {
namespace {

constexpr uint64_t kGcStreamBase = uint64_t(3) << 42;

Tensor randn(RngStream& rng, std::vector<int64_t> shape, double scale) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * scale;
  return t;
}

// Draws (x, y) with every |x_i - y_i| at least `gap` away from each
// value in `kinks`, so central differences never straddle a
// non-differentiable point.
void draw_away_from_kinks(RngStream& rng, Tensor& x, Tensor& y, double gap,
                          std::initializer_list<double> kinks) {
  for (int64_t i = 0; i < x.numel(); ++i) {
    for (;;) {
      const double xi = rng.normal() * 0.5;
      const double yi = rng.normal() * 0.5;
      const double d = std::abs(xi - yi);
      bool ok = true;
      for (double k : kinks)
        if (std::abs(d - k) < gap) ok = false;
      if (ok) {
        x[i] = xi;
        y[i] = yi;
        break;
      }
    }
  }
}

void append(Battery& b, FdEntry e) { b.entries.push_back(std::move(e)); }

void check_dist_kind(Battery& b, RngStream& rng, const LossSpec& spec,
                     const std::string& tag, int seed_no) {
  const int64_t d = 32;
  Tensor x({d}), y({d});
  switch (spec.dist_kind) {
    case DistKind::l1:
    case DistKind::logexp:
      draw_away_from_kinks(rng, x, y, 0.05, {0.0});
      break;
    case DistKind::smooth_l1:
      draw_away_from_kinks(rng, x, y, 0.05, {0.0, spec.beta});
      break;
    case DistKind::l2:
      x = randn(rng, {d}, 0.5);
      y = randn(rng, {d}, 0.5);
      break;
  }
  if (spec.dist_kind == DistKind::logexp && spec.p == 2.0) {
    // d^2 is smooth at 0; no exclusion needed.
    x = randn(rng, {d}, 0.5);
    y = randn(rng, {d}, 0.5);
  }
  const DistResult r = dist(x, y, spec);
  const std::string id = tag + "#" + std::to_string(seed_no);
  append(b, fd_check(
                id + "/x",
                [&](const Tensor& t) { return dist(t, y, spec).value; }, x,
                r.grad_x));
  append(b, fd_check(
                id + "/y",
                [&](const Tensor& t) { return dist(x, t, spec).value; }, y,
                r.grad_y));
}

void check_cosface(Battery& b, RngStream& rng, int seed_no) {
  const int64_t bsz = 4, k = 5, d = 16;
  const Tensor emb = randn(rng, {bsz, d}, 0.8);
  const Tensor w = randn(rng, {k, d}, 0.8);
  std::vector<int> labels(size_t(bsz), 0);
  for (auto& l : labels) l = int(rng.uniform_index(uint64_t(k)));
  const double s = 48.0, m = 0.4;

  const CosfaceResult r = cosface_loss(emb, w, labels, s, m);
  const std::string id = "cosface#" + std::to_string(seed_no);
  append(b, fd_check(
                id + "/emb",
                [&](const Tensor& t) {
                  return cosface_loss(t, w, labels, s, m).value;
                },
                emb, r.grad_embeddings));
  append(b, fd_check(
                id + "/w",
                [&](const Tensor& t) {
                  return cosface_loss(emb, t, labels, s, m).value;
                },
                w, r.grad_weights));
}

// Smallest |x_i - y_i| over the row-normalized embeddings; differences
// straddling the |.| kink would poison the FD comparison.
double min_normalized_gap(const Tensor& a, const Tensor& bt) {
  const int64_t rows = a.dim(0), d = a.dim(1);
  double mn = 1e300;
  for (int64_t r = 0; r < rows; ++r) {
    const double* xs = a.data() + r * d;
    const double* ys = bt.data() + r * d;
    const double nx = std::sqrt(kernels::dot(xs, xs, size_t(d)) + 1e-12);
    const double ny = std::sqrt(kernels::dot(ys, ys, size_t(d)) + 1e-12);
    for (int64_t i = 0; i < d; ++i)
      mn = std::min(mn, std::abs(xs[i] / nx - ys[i] / ny));
  }
  return mn;
}

void check_total(Battery& b, RngStream& rng, int seed_no) {
  const int64_t bsz = 3, d = 16, k = 4;
  LossSpec spec;  // logexp p=1, lambda=1
  Tensor f_hr, f_lr;
  do {
    f_hr = randn(rng, {bsz, d}, 0.8);
    f_lr = randn(rng, {bsz, d}, 0.8);
  } while (min_normalized_gap(f_hr, f_lr) < 1e-3);
  const Tensor w = randn(rng, {k, d}, 0.8);
  std::vector<int> labels(size_t(bsz), 0);
  for (auto& l : labels) l = int(rng.uniform_index(uint64_t(k)));

  const TotalLossResult r = total_loss(f_hr, f_lr, w, labels, spec);
  const std::string id = "total#" + std::to_string(seed_no);
  append(b, fd_check(
                id + "/f_hr",
                [&](const Tensor& t) {
                  return total_loss(t, f_lr, w, labels, spec).l_all;
                },
                f_hr, r.grad_f_hr));
  append(b, fd_check(
                id + "/f_lr",
                [&](const Tensor& t) {
                  return total_loss(f_hr, t, w, labels, spec).l_all;
                },
                f_lr, r.grad_f_lr));
  append(b, fd_check(
                id + "/w",
                [&](const Tensor& t) {
                  return total_loss(f_hr, f_lr, t, labels, spec).l_all;
                },
                w, r.grad_weights));
}

// Smallest |pre-activation| feeding any PReLU in a forward cache.
double min_preact(const OpGraph& g, const EvalCache& cache) {
  double mn = 1e300;
  const auto& nodes = g.nodes();
  for (size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].kind != OpKind::prelu) continue;
    const Tensor& pre = cache.values[size_t(nodes[i].inputs[0])];
    for (int64_t j = 0; j < pre.numel(); ++j)
      mn = std::min(mn, std::abs(pre[j]));
  }
  return mn;
}

void check_network(Battery& b, RngStream& rng, int seed_no) {
  NetworkConfig cfg;
  cfg.channel_widths = {4, 6};
  cfg.embedding_dim = 8;
  cfg.input_size = 16;
  const int64_t bsz = 2, k = 3;
  LossSpec spec;  // logexp p=1
  const EmbedNetwork net(cfg);

  NetworkParams params;
  Tensor cls;
  Tensor hr, lr;
  std::vector<int> labels = {0, 1};
  bool clean = false;
  // PReLU inputs within 2e-5 of zero (or normalized-embedding gaps
  // within 1e-3) could flip sign under the FD perturbation; redraw.
  for (int attempt = 0; attempt < 50 && !clean; ++attempt) {
    params = init_network(cfg, rng.next_u64());
    cls = randn(rng, {k, cfg.embedding_dim}, 0.1);
    hr = Tensor({bsz, 3, cfg.input_size, cfg.input_size});
    lr = Tensor({bsz, 3, cfg.input_size, cfg.input_size});
    for (int64_t i = 0; i < hr.numel(); ++i) hr[i] = rng.uniform();
    for (int64_t i = 0; i < lr.numel(); ++i) lr[i] = rng.uniform();
    const EmbedResult eh = net.embed(params, hr);
    const EmbedResult el = net.embed(params, lr);
    clean = min_preact(net.graph(), eh.cache) > 2e-5 &&
            min_preact(net.graph(), el.cache) > 2e-5 &&
            min_normalized_gap(eh.embeddings, el.embeddings) > 1e-3;
  }
  check(clean, "gradient battery: could not draw a kink-free network case");

  const EmbedResult eh = net.embed(params, hr);
  const EmbedResult el = net.embed(params, lr);
  const TotalLossResult tl =
      total_loss(eh.embeddings, el.embeddings, cls, labels, spec);
  NamedTensors grads = net.backward(eh, tl.grad_f_hr);
  const NamedTensors grads_lr = net.backward(el, tl.grad_f_lr);
  for (auto& [name, g] : grads)
    kernels::axpy(1.0, grads_lr.at(name).data(), g.data(), size_t(g.numel()));

  const std::string id = "network#" + std::to_string(seed_no);
  auto loss_with = [&](const NetworkParams& p, const Tensor& w) {
    const EmbedResult a = net.embed(p, hr);
    const EmbedResult c = net.embed(p, lr);
    return total_loss(a.embeddings, c.embeddings, w, labels, spec).l_all;
  };
  for (const auto& [name, p] : params) {
    append(b, fd_check(
                  id + "/" + name,
                  [&](const Tensor& t) {
                    NetworkParams mod = params;
                    mod[name] = t;
                    return loss_with(mod, cls);
                  },
                  p, grads.at(name)));
  }
  append(b, fd_check(
                id + "/class_weights",
                [&](const Tensor& t) { return loss_with(params, t); }, cls,
                tl.grad_weights));
}

}  // namespace

FdEntry fd_check(const std::string& name,
                 const std::function<double(const Tensor&)>& f,
                 const Tensor& x, const Tensor& analytic_grad, double eps) {
  check(x.same_shape(analytic_grad), "fd_check ", name,
        ": gradient shape ", analytic_grad.shape_str(),
        " does not match input ", x.shape_str());
  check(eps > 0, "fd_check ", name, ": eps must be positive");

  FdEntry e;
  e.name = name;
  Tensor probe = x;
  for (int64_t i = 0; i < x.numel(); ++i) {
    probe[i] = x[i] + eps;
    const double hi = f(probe);
    probe[i] = x[i] - eps;
    const double lo = f(probe);
    probe[i] = x[i];
    check(std::isfinite(hi) && std::isfinite(lo), "fd_check ", name,
          ": non-finite value while perturbing coordinate ", i);
    const double numeric = (hi - lo) / (2.0 * eps);
    const double analytic = analytic_grad[i];
    const double abs_err = std::abs(analytic - numeric);
    const double rel_err =
        abs_err / std::max({1.0, std::abs(analytic), std::abs(numeric)});
    if (rel_err > e.max_rel_err) {
      e.max_rel_err = rel_err;
      e.worst_index = i;
    }
    e.max_abs_err = std::max(e.max_abs_err, abs_err);
  }
  return e;
}

double Battery::max_rel_err() const {
  double mx = 0.0;
  for (const auto& e : entries) mx = std::max(mx, e.max_rel_err);
  return mx;
}

const FdEntry* Battery::worst() const {
  const FdEntry* w = nullptr;
  for (const auto& e : entries)
    if (!w || e.max_rel_err > w->max_rel_err) w = &e;
  return w;
}

bool Battery::pass() const {
  for (const auto& e : entries)
    if (!(e.max_rel_err <= tolerance)) return false;
  return !entries.empty();
}

Battery gradient_battery(uint64_t base_seed, int seeds, double tolerance) {
  check(seeds >= 1, "gradient battery: need >= 1 seed");
  Battery b;
  b.tolerance = tolerance;
  for (int s = 0; s < seeds; ++s) {
    RngStream rng(base_seed, kGcStreamBase + uint64_t(s));
    LossSpec spec;

    spec.dist_kind = DistKind::l1;
    check_dist_kind(b, rng, spec, "l1", s);
    spec.dist_kind = DistKind::l2;
    check_dist_kind(b, rng, spec, "l2", s);
    spec.dist_kind = DistKind::smooth_l1;
    check_dist_kind(b, rng, spec, "smooth_l1", s);
    spec.dist_kind = DistKind::logexp;
    spec.p = 1.0;
    check_dist_kind(b, rng, spec, "logexp_p1", s);
    spec.p = 2.0;
    check_dist_kind(b, rng, spec, "logexp_p2", s);

    check_cosface(b, rng, s);
    check_total(b, rng, s);
    check_network(b, rng, s);
  }
  return b;
}

}  // namespace lrfr
