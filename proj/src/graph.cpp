#include "lrfr/graph.hpp"

#include <cmath>

#include "lrfr/kernels.hpp"

namespace lrfr {

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::input: return "input";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scalar_mul: return "scalar-mul";
    case OpKind::matmul: return "matmul";
    case OpKind::conv2d: return "conv2d";
    case OpKind::prelu: return "prelu";
    case OpKind::abs: return "abs";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::square: return "square";
    case OpKind::sqrt: return "sqrt";
    case OpKind::l2_normalize: return "l2-normalize";
    case OpKind::global_avg_pool: return "global-avg-pool";
  }
  return "?";
}

OpGraph::NodeId OpGraph::push(OpNode n) {
  nodes_.push_back(std::move(n));
  ++revision_;
  return NodeId(nodes_.size()) - 1;
}

OpGraph::NodeId OpGraph::check_id(NodeId id) const {
  check(id >= 0 && id < NodeId(nodes_.size()), "graph: bad node id ", id);
  return id;
}

OpGraph::NodeId OpGraph::input(std::string name) {
  check(!name.empty(), "graph: input needs a name");
  for (const auto& existing : input_names_)
    check(existing != name, "graph: duplicate input name '", name, "'");
  input_names_.push_back(name);
  OpNode n;
  n.kind = OpKind::input;
  n.name = std::move(name);
  return push(std::move(n));
}

namespace {
OpNode make(OpKind k, std::vector<int> in) {
  OpNode n;
  n.kind = k;
  n.inputs = std::move(in);
  return n;
}
}  // namespace

OpGraph::NodeId OpGraph::add(NodeId a, NodeId b) {
  return push(make(OpKind::add, {check_id(a), check_id(b)}));
}
OpGraph::NodeId OpGraph::sub(NodeId a, NodeId b) {
  return push(make(OpKind::sub, {check_id(a), check_id(b)}));
}
OpGraph::NodeId OpGraph::mul(NodeId a, NodeId b) {
  return push(make(OpKind::mul, {check_id(a), check_id(b)}));
}
OpGraph::NodeId OpGraph::scalar_mul(NodeId a, double s) {
  OpNode n = make(OpKind::scalar_mul, {check_id(a)});
  n.scalar = s;
  return push(std::move(n));
}
OpGraph::NodeId OpGraph::matmul(NodeId a, NodeId b, bool trans_b) {
  OpNode n = make(OpKind::matmul, {check_id(a), check_id(b)});
  n.trans_b = trans_b;
  return push(std::move(n));
}
OpGraph::NodeId OpGraph::conv2d(NodeId x, NodeId w, NodeId bias, int stride,
                                int pad) {
  check(stride >= 1, "conv2d: stride must be >= 1");
  check(pad >= 0, "conv2d: pad must be >= 0");
  OpNode n = make(OpKind::conv2d, {check_id(x), check_id(w), check_id(bias)});
  n.stride = stride;
  n.pad = pad;
  return push(std::move(n));
}
OpGraph::NodeId OpGraph::prelu(NodeId x, NodeId slopes) {
  return push(make(OpKind::prelu, {check_id(x), check_id(slopes)}));
}
OpGraph::NodeId OpGraph::abs(NodeId a) {
  return push(make(OpKind::abs, {check_id(a)}));
}
OpGraph::NodeId OpGraph::exp(NodeId a) {
  return push(make(OpKind::exp, {check_id(a)}));
}
OpGraph::NodeId OpGraph::log(NodeId a) {
  return push(make(OpKind::log, {check_id(a)}));
}
OpGraph::NodeId OpGraph::sum(NodeId a) {
  return push(make(OpKind::sum, {check_id(a)}));
}
OpGraph::NodeId OpGraph::mean(NodeId a) {
  return push(make(OpKind::mean, {check_id(a)}));
}
OpGraph::NodeId OpGraph::square(NodeId a) {
  return push(make(OpKind::square, {check_id(a)}));
}
OpGraph::NodeId OpGraph::sqrt(NodeId a) {
  return push(make(OpKind::sqrt, {check_id(a)}));
}
OpGraph::NodeId OpGraph::l2_normalize(NodeId a) {
  return push(make(OpKind::l2_normalize, {check_id(a)}));
}
OpGraph::NodeId OpGraph::global_avg_pool(NodeId x) {
  return push(make(OpKind::global_avg_pool, {check_id(x)}));
}

void OpGraph::set_output(NodeId id) {
  output_ = check_id(id);
  ++revision_;
}

namespace {

constexpr double kNormEps = 1e-12;  // under the sqrt of l2-normalize

struct ConvDims {
  int batch, cin, h, w, cout, kh, kw, oh, ow;
};

ConvDims conv_dims(const OpNode& n, const Tensor& x, const Tensor& w,
                   const Tensor& bias) {
  check(x.rank() == 4, "conv2d: input must be 4-D NCHW, got ", x.shape_str());
  check(w.rank() == 4, "conv2d: weight must be 4-D, got ", w.shape_str());
  check(bias.rank() == 1, "conv2d: bias must be 1-D, got ", bias.shape_str());
  ConvDims d;
  d.batch = int(x.dim(0));
  d.cin = int(x.dim(1));
  d.h = int(x.dim(2));
  d.w = int(x.dim(3));
  d.cout = int(w.dim(0));
  d.kh = int(w.dim(2));
  d.kw = int(w.dim(3));
  check(int(w.dim(1)) == d.cin, "conv2d: weight expects ", w.dim(1),
        " input channels, input has ", d.cin);
  check(int(bias.dim(0)) == d.cout, "conv2d: bias length ", bias.dim(0),
        " != output channels ", d.cout);
  check(d.h + 2 * n.pad >= d.kh && d.w + 2 * n.pad >= d.kw,
        "conv2d: kernel ", d.kh, "x", d.kw, " larger than padded input");
  d.oh = (d.h + 2 * n.pad - d.kh) / n.stride + 1;
  d.ow = (d.w + 2 * n.pad - d.kw) / n.stride + 1;
  return d;
}

// Column layout: rows are (cin, kh, kw), columns are output positions.
void im2col(const double* img, const ConvDims& d, int stride, int pad,
            double* col) {
  const int patch = d.cin * d.kh * d.kw;
  const int positions = d.oh * d.ow;
  for (int r = 0; r < patch; ++r) {
    const int c = r / (d.kh * d.kw);
    const int ky = (r / d.kw) % d.kh;
    const int kx = r % d.kw;
    const double* plane = img + size_t(c) * d.h * d.w;
    double* out_row = col + size_t(r) * positions;
    for (int oy = 0; oy < d.oh; ++oy) {
      const int iy = oy * stride - pad + ky;
      const bool row_in = iy >= 0 && iy < d.h;
      for (int ox = 0; ox < d.ow; ++ox) {
        const int ix = ox * stride - pad + kx;
        out_row[oy * d.ow + ox] =
            (row_in && ix >= 0 && ix < d.w) ? plane[iy * d.w + ix] : 0.0;
      }
    }
  }
}

void col2im_accum(const double* col, const ConvDims& d, int stride, int pad,
                  double* img) {
  const int patch = d.cin * d.kh * d.kw;
  for (int r = 0; r < patch; ++r) {
    const int c = r / (d.kh * d.kw);
    const int ky = (r / d.kw) % d.kh;
    const int kx = r % d.kw;
    double* plane = img + size_t(c) * d.h * d.w;
    const double* in_row = col + size_t(r) * d.oh * d.ow;
    for (int oy = 0; oy < d.oh; ++oy) {
      const int iy = oy * stride - pad + ky;
      if (iy < 0 || iy >= d.h) continue;
      for (int ox = 0; ox < d.ow; ++ox) {
        const int ix = ox * stride - pad + kx;
        if (ix < 0 || ix >= d.w) continue;
        plane[iy * d.w + ix] += in_row[oy * d.ow + ox];
      }
    }
  }
}

void forward_node(const OpGraph& g, int id, std::vector<Tensor>& vals) {
  const OpNode& n = g.nodes()[size_t(id)];
  auto& in = n.inputs;
  auto val = [&](int i) -> const Tensor& { return vals[size_t(in[size_t(i)])]; };

  switch (n.kind) {
    case OpKind::input:
      return;  // bound before the sweep
    case OpKind::add: {
      const Tensor& a = val(0);
      const Tensor& b = val(1);
      if (a.same_shape(b)) {
        Tensor out(a.shape());
        kernels::add(a.data(), b.data(), out.data(), size_t(a.numel()));
        vals[size_t(id)] = std::move(out);
      } else if (a.rank() == 2 && b.rank() == 1 && b.dim(0) == a.dim(1)) {
        Tensor out(a.shape());
        const int64_t cols = a.dim(1);
        for (int64_t r = 0; r < a.dim(0); ++r)
          kernels::add(a.data() + r * cols, b.data(), out.data() + r * cols,
                       size_t(cols));
        vals[size_t(id)] = std::move(out);
      } else {
        fail("add: shapes ", a.shape_str(), " and ", b.shape_str(),
             " are not addable");
      }
      return;
    }
    case OpKind::sub: {
      const Tensor& a = val(0);
      const Tensor& b = val(1);
      check(a.same_shape(b), "sub: shape mismatch ", a.shape_str(), " vs ",
            b.shape_str());
      Tensor out(a.shape());
      kernels::sub(a.data(), b.data(), out.data(), size_t(a.numel()));
      vals[size_t(id)] = std::move(out);
      return;
    }
    case OpKind::mul: {
      const Tensor& a = val(0);
      const Tensor& b = val(1);
      check(a.same_shape(b), "mul: shape mismatch ", a.shape_str(), " vs ",
            b.shape_str());
      Tensor out(a.shape());
      kernels::mul(a.data(), b.data(), out.data(), size_t(a.numel()));
      vals[size_t(id)] = std::move(out);
      return;
    }
    case OpKind::scalar_mul: {
      const Tensor& a = val(0);
      Tensor out(a.shape());
      kernels::scale(a.data(), n.scalar, out.data(), size_t(a.numel()));
      vals[size_t(id)] = std::move(out);
      return;
    }
    case OpKind::matmul: {
      const Tensor& a = val(0);
      const Tensor& b = val(1);
      check(a.rank() == 2 && b.rank() == 2, "matmul: need 2-D operands, got ",
            a.shape_str(), " and ", b.shape_str());
      const int m = int(a.dim(0));
      const int kk = int(a.dim(1));
      const int cols = n.trans_b ? int(b.dim(0)) : int(b.dim(1));
      const int inner = n.trans_b ? int(b.dim(1)) : int(b.dim(0));
      check(inner == kk, "matmul: inner dims differ, ", a.shape_str(), " vs ",
            b.shape_str(), n.trans_b ? " (rhs transposed)" : "");
      Tensor out({m, cols});
      kernels::gemm(false, n.trans_b, m, cols, kk, 1.0, a.data(), kk, b.data(),
                    int(b.dim(1)), 0.0, out.data(), cols);
      vals[size_t(id)] = std::move(out);
      return;
    }
    case OpKind::conv2d: {
      const Tensor& x = val(0);
      const Tensor& w = val(1);
      const Tensor& bias = val(2);
      const ConvDims d = conv_dims(n, x, w, bias);
      const int patch = d.cin * d.kh * d.kw;
      const int positions = d.oh * d.ow;
      Tensor out({d.batch, d.cout, d.oh, d.ow});
      std::vector<double> col(size_t(patch) * positions);
      for (int b = 0; b < d.batch; ++b) {
        im2col(x.data() + size_t(b) * d.cin * d.h * d.w, d, n.stride, n.pad,
               col.data());
        double* ob = out.data() + size_t(b) * d.cout * positions;
        kernels::gemm(false, false, d.cout, positions, patch, 1.0, w.data(),
                      patch, col.data(), positions, 0.0, ob, positions);
        for (int c = 0; c < d.cout; ++c) {
          double* plane = ob + size_t(c) * positions;
          const double bv = bias[c];
          for (int p = 0; p < positions; ++p) plane[p] += bv;
        }
      }
      vals[size_t(id)] = std::move(out);
      return;
    }
    case OpKind::prelu: {
      const Tensor& x = val(0);
      const Tensor& a = val(1);
      check(x.rank() == 4, "prelu: input must be 4-D NCHW, got ",
            x.shape_str());
      check(a.rank() == 1 && a.dim(0) == x.dim(1),
            "prelu: slopes must have one entry per channel (", x.dim(1),
            "), got ", a.shape_str());
      Tensor out(x.shape());
      const int64_t hw = x.dim(2) * x.dim(3);
      for (int64_t b = 0; b < x.dim(0); ++b) {
        for (int64_t c = 0; c < x.dim(1); ++c) {
          const double slope = a[c];
          const double* xs = x.data() + (b * x.dim(1) + c) * hw;
          double* os = out.data() + (b * x.dim(1) + c) * hw;
          for (int64_t i = 0; i < hw; ++i)
            os[i] = xs[i] > 0.0 ? xs[i] : slope * xs[i];
        }
      }
      vals[size_t(id)] = std::move(out);
      return;
    }
    case OpKind::abs: {
      const Tensor& a = val(0);
      Tensor out(a.shape());
      for (int64_t i = 0; i < a.numel(); ++i) out[i] = std::fabs(a[i]);
      vals[size_t(id)] = std::move(out);
      return;
    }
    case OpKind::exp: {
      const Tensor& a = val(0);
      Tensor out(a.shape());
      for (int64_t i = 0; i < a.numel(); ++i) out[i] = std::exp(a[i]);
      vals[size_t(id)] = std::move(out);
      return;
    }
    case OpKind::log: {
      const Tensor& a = val(0);
      Tensor out(a.shape());
      for (int64_t i = 0; i < a.numel(); ++i) out[i] = std::log(a[i]);
      vals[size_t(id)] = std::move(out);
      return;
    }
    case OpKind::sum: {
      const Tensor& a = val(0);
      vals[size_t(id)] =
          Tensor::scalar(kernels::sum(a.data(), size_t(a.numel())));
      return;
    }
    case OpKind::mean: {
      const Tensor& a = val(0);
      vals[size_t(id)] = Tensor::scalar(
          kernels::sum(a.data(), size_t(a.numel())) / double(a.numel()));
      return;
    }
    case OpKind::square: {
      const Tensor& a = val(0);
      Tensor out(a.shape());
      kernels::mul(a.data(), a.data(), out.data(), size_t(a.numel()));
      vals[size_t(id)] = std::move(out);
      return;
    }
    case OpKind::sqrt: {
      const Tensor& a = val(0);
      Tensor out(a.shape());
      for (int64_t i = 0; i < a.numel(); ++i) out[i] = std::sqrt(a[i]);
      vals[size_t(id)] = std::move(out);
      return;
    }
    case OpKind::l2_normalize: {
      const Tensor& a = val(0);
      check(a.rank() >= 1, "l2-normalize: need rank >= 1");
      const int64_t dlen = a.dim(a.rank() - 1);
      const int64_t rows = a.numel() / dlen;
      Tensor out(a.shape());
      for (int64_t r = 0; r < rows; ++r) {
        const double* xs = a.data() + r * dlen;
        const double ss = kernels::dot(xs, xs, size_t(dlen));
        const double inv = 1.0 / std::sqrt(ss + kNormEps);
        kernels::scale(xs, inv, out.data() + r * dlen, size_t(dlen));
      }
      vals[size_t(id)] = std::move(out);
      return;
    }
    case OpKind::global_avg_pool: {
      const Tensor& x = val(0);
      check(x.rank() == 4, "global-avg-pool: input must be 4-D NCHW, got ",
            x.shape_str());
      const int64_t hw = x.dim(2) * x.dim(3);
      Tensor out({x.dim(0), x.dim(1)});
      for (int64_t b = 0; b < x.dim(0); ++b)
        for (int64_t c = 0; c < x.dim(1); ++c)
          out[b * x.dim(1) + c] =
              kernels::sum(x.data() + (b * x.dim(1) + c) * hw, size_t(hw)) /
              double(hw);
      vals[size_t(id)] = std::move(out);
      return;
    }
  }
  fail("graph: unknown op kind");
}

}  // namespace

EvalResult evaluate(const OpGraph& g, const NamedTensors& inputs) {
  check(g.output() >= 0, "graph: no output set");
  EvalCache cache;
  cache.graph_revision = g.revision();
  cache.values.resize(g.nodes().size());
  cache.requires_grad.assign(g.nodes().size(), false);

  for (size_t id = 0; id < g.nodes().size(); ++id) {
    const OpNode& n = g.nodes()[id];
    if (n.kind == OpKind::input) {
      auto it = inputs.find(n.name);
      check(it != inputs.end(), "evaluate: missing input '", n.name, "'");
      cache.values[id] = it->second;
      cache.requires_grad[id] = it->second.requires_grad;
    } else {
      forward_node(g, int(id), cache.values);
      for (int src : n.inputs)
        if (cache.requires_grad[size_t(src)]) cache.requires_grad[id] = true;
    }
    const int64_t bad = cache.values[id].first_nonfinite();
    check(bad < 0, "evaluate: non-finite value at node ", id, " (",
          op_name(n.kind), "), element ", bad);
  }

  EvalResult res;
  res.output = cache.values[size_t(g.output())];
  res.cache = std::move(cache);
  return res;
}

NamedTensors backprop(const OpGraph& g, const EvalCache& cache,
                      const Tensor& seed_grad) {
  check(g.output() >= 0, "graph: no output set");
  check(cache.graph_revision == g.revision(),
        "backprop: cache is stale (graph modified after evaluate)");
  check(cache.values.size() == g.nodes().size(),
        "backprop: cache does not match graph");
  const Tensor& out_val = cache.values[size_t(g.output())];
  check(seed_grad.same_shape(out_val), "backprop: seed grad shape ",
        seed_grad.shape_str(), " != output shape ", out_val.shape_str());

  std::vector<Tensor> grads(g.nodes().size());
  auto grad_of = [&](int id) -> Tensor& {
    Tensor& t = grads[size_t(id)];
    if (t.numel() == 0) t = Tensor(cache.values[size_t(id)].shape());
    return t;
  };
  grad_of(g.output()) = seed_grad;

  for (int id = int(g.nodes().size()) - 1; id >= 0; --id) {
    if (!cache.requires_grad[size_t(id)]) continue;
    if (grads[size_t(id)].numel() == 0) continue;  // no path to the output
    const OpNode& n = g.nodes()[size_t(id)];
    if (n.kind == OpKind::input) continue;
    const Tensor& gr = grads[size_t(id)];
    auto needs = [&](int i) {
      return cache.requires_grad[size_t(n.inputs[size_t(i)])];
    };
    auto val = [&](int i) -> const Tensor& {
      return cache.values[size_t(n.inputs[size_t(i)])];
    };

    switch (n.kind) {
      case OpKind::input:
        break;
      case OpKind::add: {
        if (needs(0))
          kernels::add(grad_of(n.inputs[0]).data(), gr.data(),
                       grad_of(n.inputs[0]).data(), size_t(gr.numel()));
        if (needs(1)) {
          Tensor& gb = grad_of(n.inputs[1]);
          if (gb.same_shape(gr)) {
            kernels::add(gb.data(), gr.data(), gb.data(), size_t(gr.numel()));
          } else {  // row broadcast: column sums
            const int64_t cols = gb.numel();
            for (int64_t r = 0; r < gr.numel() / cols; ++r)
              kernels::add(gb.data(), gr.data() + r * cols, gb.data(),
                           size_t(cols));
          }
        }
        break;
      }
      case OpKind::sub: {
        if (needs(0))
          kernels::add(grad_of(n.inputs[0]).data(), gr.data(),
                       grad_of(n.inputs[0]).data(), size_t(gr.numel()));
        if (needs(1))
          kernels::axpy(-1.0, gr.data(), grad_of(n.inputs[1]).data(),
                        size_t(gr.numel()));
        break;
      }
      case OpKind::mul: {
        if (needs(0)) {
          Tensor& ga = grad_of(n.inputs[0]);
          const Tensor& b = val(1);
          for (int64_t i = 0; i < gr.numel(); ++i) ga[i] += gr[i] * b[i];
        }
        if (needs(1)) {
          Tensor& gb = grad_of(n.inputs[1]);
          const Tensor& a = val(0);
          for (int64_t i = 0; i < gr.numel(); ++i) gb[i] += gr[i] * a[i];
        }
        break;
      }
      case OpKind::scalar_mul:
        if (needs(0))
          kernels::axpy(n.scalar, gr.data(), grad_of(n.inputs[0]).data(),
                        size_t(gr.numel()));
        break;
      case OpKind::matmul: {
        const Tensor& a = val(0);
        const Tensor& b = val(1);
        const int m = int(a.dim(0));
        const int kk = int(a.dim(1));
        const int cols = int(gr.dim(1));
        if (!n.trans_b) {
          if (needs(0))  // ga += gr * b^T
            kernels::gemm(false, true, m, kk, cols, 1.0, gr.data(), cols,
                          b.data(), cols, 1.0, grad_of(n.inputs[0]).data(),
                          kk);
          if (needs(1))  // gb += a^T * gr
            kernels::gemm(true, false, kk, cols, m, 1.0, a.data(), kk,
                          gr.data(), cols, 1.0, grad_of(n.inputs[1]).data(),
                          cols);
        } else {
          if (needs(0))  // ga += gr * b
            kernels::gemm(false, false, m, kk, cols, 1.0, gr.data(), cols,
                          b.data(), kk, 1.0, grad_of(n.inputs[0]).data(), kk);
          if (needs(1))  // gb += gr^T * a
            kernels::gemm(true, false, cols, kk, m, 1.0, gr.data(), cols,
                          a.data(), kk, 1.0, grad_of(n.inputs[1]).data(), kk);
        }
        break;
      }
      case OpKind::conv2d: {
        const Tensor& x = val(0);
        const Tensor& w = val(1);
        const ConvDims d = conv_dims(n, x, w, val(2));
        const int patch = d.cin * d.kh * d.kw;
        const int positions = d.oh * d.ow;
        std::vector<double> col(size_t(patch) * positions);
        std::vector<double> gcol(size_t(patch) * positions);
        for (int b = 0; b < d.batch; ++b) {
          const double* gb = gr.data() + size_t(b) * d.cout * positions;
          if (needs(0)) {  // gx via col2im(w^T * gout)
            kernels::gemm(true, false, patch, positions, d.cout, 1.0,
                          w.data(), patch, gb, positions, 0.0, gcol.data(),
                          positions);
            col2im_accum(gcol.data(), d, n.stride, n.pad,
                         grad_of(n.inputs[0]).data() +
                             size_t(b) * d.cin * d.h * d.w);
          }
          if (needs(1)) {  // gw += gout * col^T
            im2col(x.data() + size_t(b) * d.cin * d.h * d.w, d, n.stride,
                   n.pad, col.data());
            kernels::gemm(false, true, d.cout, patch, positions, 1.0, gb,
                          positions, col.data(), positions, 1.0,
                          grad_of(n.inputs[1]).data(), patch);
          }
          if (needs(2)) {
            Tensor& gbias = grad_of(n.inputs[2]);
            for (int c = 0; c < d.cout; ++c)
              gbias[c] +=
                  kernels::sum(gb + size_t(c) * positions, size_t(positions));
          }
        }
        break;
      }
      case OpKind::prelu: {
        const Tensor& x = val(0);
        const Tensor& a = val(1);
        const int64_t hw = x.dim(2) * x.dim(3);
        for (int64_t b = 0; b < x.dim(0); ++b) {
          for (int64_t c = 0; c < x.dim(1); ++c) {
            const double slope = a[c];
            const double* xs = x.data() + (b * x.dim(1) + c) * hw;
            const double* gs = gr.data() + (b * x.dim(1) + c) * hw;
            double* gx =
                needs(0)
                    ? grad_of(n.inputs[0]).data() + (b * x.dim(1) + c) * hw
                    : nullptr;
            double ga_acc = 0.0;
            for (int64_t i = 0; i < hw; ++i) {
              if (xs[i] > 0.0) {
                if (gx) gx[i] += gs[i];
              } else {
                if (gx) gx[i] += slope * gs[i];
                ga_acc += gs[i] * xs[i];
              }
            }
            if (needs(1)) grad_of(n.inputs[1])[c] += ga_acc;
          }
        }
        break;
      }
      case OpKind::abs: {
        if (!needs(0)) break;
        const Tensor& x = val(0);
        Tensor& gx = grad_of(n.inputs[0]);
        for (int64_t i = 0; i < x.numel(); ++i) {
          if (x[i] > 0.0)
            gx[i] += gr[i];
          else if (x[i] < 0.0)
            gx[i] -= gr[i];
          // subgradient at 0 is 0
        }
        break;
      }
      case OpKind::exp: {
        if (!needs(0)) break;
        const Tensor& out = cache.values[size_t(id)];
        Tensor& gx = grad_of(n.inputs[0]);
        for (int64_t i = 0; i < out.numel(); ++i) gx[i] += gr[i] * out[i];
        break;
      }
      case OpKind::log: {
        if (!needs(0)) break;
        const Tensor& x = val(0);
        Tensor& gx = grad_of(n.inputs[0]);
        for (int64_t i = 0; i < x.numel(); ++i) gx[i] += gr[i] / x[i];
        break;
      }
      case OpKind::sum:
        if (needs(0)) {
          Tensor& gx = grad_of(n.inputs[0]);
          const double gv = gr[0];
          for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += gv;
        }
        break;
      case OpKind::mean:
        if (needs(0)) {
          Tensor& gx = grad_of(n.inputs[0]);
          const double gv = gr[0] / double(gx.numel());
          for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += gv;
        }
        break;
      case OpKind::square: {
        if (!needs(0)) break;
        const Tensor& x = val(0);
        Tensor& gx = grad_of(n.inputs[0]);
        for (int64_t i = 0; i < x.numel(); ++i) gx[i] += 2.0 * x[i] * gr[i];
        break;
      }
      case OpKind::sqrt: {
        if (!needs(0)) break;
        const Tensor& out = cache.values[size_t(id)];
        Tensor& gx = grad_of(n.inputs[0]);
        for (int64_t i = 0; i < out.numel(); ++i)
          gx[i] += gr[i] / (2.0 * out[i]);
        break;
      }
      case OpKind::l2_normalize: {
        if (!needs(0)) break;
        const Tensor& x = val(0);
        const Tensor& y = cache.values[size_t(id)];
        Tensor& gx = grad_of(n.inputs[0]);
        const int64_t dlen = x.dim(x.rank() - 1);
        for (int64_t r = 0; r < x.numel() / dlen; ++r) {
          const double* xs = x.data() + r * dlen;
          const double* ys = y.data() + r * dlen;
          const double* gs = gr.data() + r * dlen;
          double* gxs = gx.data() + r * dlen;
          const double ss = kernels::dot(xs, xs, size_t(dlen));
          const double inv = 1.0 / std::sqrt(ss + kNormEps);
          const double proj = kernels::dot(ys, gs, size_t(dlen));
          for (int64_t i = 0; i < dlen; ++i)
            gxs[i] += inv * (gs[i] - ys[i] * proj);
        }
        break;
      }
      case OpKind::global_avg_pool: {
        if (!needs(0)) break;
        const Tensor& x = val(0);
        Tensor& gx = grad_of(n.inputs[0]);
        const int64_t hw = x.dim(2) * x.dim(3);
        for (int64_t b = 0; b < x.dim(0); ++b)
          for (int64_t c = 0; c < x.dim(1); ++c) {
            const double gv = gr[b * x.dim(1) + c] / double(hw);
            double* gs = gx.data() + (b * x.dim(1) + c) * hw;
            for (int64_t i = 0; i < hw; ++i) gs[i] += gv;
          }
        break;
      }
    }
  }

  NamedTensors out;
  for (size_t id = 0; id < g.nodes().size(); ++id) {
    const OpNode& n = g.nodes()[id];
    if (n.kind != OpKind::input || !cache.requires_grad[id]) continue;
    Tensor gt = grads[id].numel() > 0 ? std::move(grads[id])
                                      : Tensor(cache.values[id].shape());
    out.emplace(n.name, std::move(gt));
  }
  return out;
}

GradReport grad_check(const OpGraph& g, const NamedTensors& inputs,
                      double epsilon, double tolerance) {
  check(epsilon > 0.0, "grad_check: epsilon must be positive");
  for (const auto& [name, t] : inputs)
    check(t.all_finite(), "grad_check: input '", name, "' not finite");

  EvalResult fwd = evaluate(g, inputs);
  check(fwd.output.numel() == 1,
        "grad_check: graph output must be scalar, got ",
        fwd.output.shape_str());
  const NamedTensors analytic = backprop(g, fwd.cache, Tensor::scalar(1.0));

  GradReport report;
  report.tolerance = tolerance;

  NamedTensors probe = inputs;
  for (const auto& [name, grad] : analytic) {
    GradReport::Entry entry;
    entry.param = name;
    Tensor& x = probe.at(name);
    for (int64_t i = 0; i < x.numel(); ++i) {
      const double orig = x[i];
      x[i] = orig + epsilon;
      const double f_plus = evaluate(g, probe).output[0];
      x[i] = orig - epsilon;
      const double f_minus = evaluate(g, probe).output[0];
      x[i] = orig;
      check(std::isfinite(f_plus) && std::isfinite(f_minus),
            "grad_check: non-finite perturbation result for '", name,
            "' coordinate ", i);
      const double numeric = (f_plus - f_minus) / (2.0 * epsilon);
      const double a = grad[i];
      const double abs_err = std::fabs(a - numeric);
      const double rel_err =
          abs_err / std::max({1.0, std::fabs(a), std::fabs(numeric)});
      entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
      entry.max_rel_err = std::max(entry.max_rel_err, rel_err);
    }
    report.max_abs_err = std::max(report.max_abs_err, entry.max_abs_err);
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  report.pass = report.max_rel_err <= tolerance;
  return report;
}

}  // namespace lrfr
