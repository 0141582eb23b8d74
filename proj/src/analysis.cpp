#include "lrfr/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>

#include <json.hpp>

#include "lrfr/common.hpp"
#include "lrfr/kernels.hpp"
#include "lrfr/parallel.hpp"
#include "lrfr/rng.hpp"

namespace lrfr {
namespace {

constexpr double kNormEps = 1e-12;
constexpr uint64_t kPcaStream = 0x706361ULL;  // "pca"

void write_text_atomic(const std::filesystem::path& path,
                       const std::string& text) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  FILE* f = std::fopen(tmp.string().c_str(), "w");
  check(f != nullptr, "cannot write ", tmp.string());
  const size_t n = std::fwrite(text.data(), 1, text.size(), f);
  std::fclose(f);
  check(n == text.size(), "short write to ", tmp.string());
  std::filesystem::rename(tmp, path);
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<ImageBuffer> degrade_all(
    const std::vector<const ImageBuffer*>& images, int resolution) {
  std::vector<ImageBuffer> out(images.size());
  parallel_for(int64_t(images.size()), [&](int64_t i) {
    out[size_t(i)] = degrade(*images[size_t(i)], resolution);
  });
  return out;
}

void check_resolutions(std::span<const int> resolutions, int input_size) {
  check(!resolutions.empty(), "sweep: empty resolution list");
  for (size_t i = 0; i < resolutions.size(); ++i) {
    check(resolutions[i] >= 1 && resolutions[i] <= input_size,
          "sweep: resolution ", resolutions[i], " outside [1,", input_size,
          "]");
    if (i > 0)
      check(resolutions[i] > resolutions[i - 1],
            "sweep: resolutions must be strictly increasing");
  }
}

// Pair similarities at one resolution; each referenced image is
// embedded once.
std::vector<double> pair_similarities(const EmbedNetwork& net,
                                      const Checkpoint& ckpt,
                                      const LabeledDataset& ds,
                                      const VerificationPairs& pairs,
                                      int resolution) {
  std::vector<int> unique;
  std::vector<int> slot(ds.images.size(), -1);
  for (const auto& p : pairs.pairs) {
    for (int idx : {p.a, p.b}) {
      check(idx >= 0 && idx < int(ds.images.size()),
            "pairs reference image ", idx, " outside dataset of ",
            ds.images.size());
      if (slot[size_t(idx)] < 0) {
        slot[size_t(idx)] = int(unique.size());
        unique.push_back(idx);
      }
    }
  }
  std::vector<const ImageBuffer*> ptrs(unique.size());
  for (size_t i = 0; i < unique.size(); ++i)
    ptrs[i] = &ds.images[size_t(unique[i])];
  const Tensor emb = embed_images(net, ckpt, ptrs, resolution);
  const int64_t d = emb.dim(1);

  std::vector<double> sims(pairs.pairs.size());
  for (size_t i = 0; i < pairs.pairs.size(); ++i) {
    const auto& p = pairs.pairs[i];
    sims[i] = cosine_similarity(emb.data() + slot[size_t(p.a)] * d,
                                emb.data() + slot[size_t(p.b)] * d, d);
  }
  return sims;
}

}  // namespace

Tensor embed_images(const EmbedNetwork& net, const Checkpoint& ckpt,
                    const std::vector<const ImageBuffer*>& images,
                    int resolution, int batch_size) {
  check(!images.empty(), "embed_images: empty image list");
  check(batch_size >= 1, "embed_images: bad batch size ", batch_size);
  const int input_size = net.config().input_size;
  check(resolution >= 1 && resolution <= input_size,
        "embed_images: resolution ", resolution, " outside [1,", input_size,
        "]");
  const std::vector<ImageBuffer> degraded = degrade_all(images, resolution);

  const int64_t n = int64_t(images.size());
  Tensor out({n, int64_t(net.config().embedding_dim)});
  const int64_t d = out.dim(1);
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t end = std::min(start + batch_size, n);
    std::vector<const ImageBuffer*> batch;
    for (int64_t i = start; i < end; ++i)
      batch.push_back(&degraded[size_t(i)]);
    const EmbedResult r =
        net.embed(ckpt.params, pack_batch(batch, input_size));
    std::copy(r.embeddings.data(), r.embeddings.data() + (end - start) * d,
              out.data() + start * d);
  }
  return out;
}

double cosine_similarity(const double* a, const double* b, int64_t d) {
  const double na = std::sqrt(kernels::dot(a, a, size_t(d)) + kNormEps);
  const double nb = std::sqrt(kernels::dot(b, b, size_t(d)) + kNormEps);
  return kernels::dot(a, b, size_t(d)) / (na * nb);
}

double verification_accuracy(std::span<const double> sims,
                             std::span<const uint8_t> same, int n_folds) {
  const int64_t n = int64_t(sims.size());
  check(n >= 2, "verification: need >= 2 pairs, got ", n);
  check(sims.size() == same.size(), "verification: ", sims.size(),
        " similarities vs ", same.size(), " labels");
  n_folds = int(std::min<int64_t>(n_folds, n));
  check(n_folds >= 2, "verification: need >= 2 folds");

  auto accuracy_at = [&](double t, int64_t skip_lo, int64_t skip_hi,
                         bool inside) {
    int64_t correct = 0, total = 0;
    for (int64_t i = 0; i < n; ++i) {
      const bool in_fold = i >= skip_lo && i < skip_hi;
      if (in_fold != inside) continue;
      ++total;
      if ((sims[size_t(i)] >= t) == bool(same[size_t(i)])) ++correct;
    }
    return total == 0 ? 0.0 : double(correct) / double(total);
  };

  double fold_acc_sum = 0.0;
  for (int f = 0; f < n_folds; ++f) {
    const int64_t lo = n * f / n_folds;
    const int64_t hi = n * (f + 1) / n_folds;
    double best_t = -1.0, best_acc = -1.0;
    for (int i = 0; i <= 400; ++i) {
      const double t = -1.0 + i * 0.005;
      const double acc = accuracy_at(t, lo, hi, /*inside=*/false);
      if (acc > best_acc) {
        best_acc = acc;
        best_t = t;
      }
    }
    fold_acc_sum += accuracy_at(best_t, lo, hi, /*inside=*/true);
  }
  return fold_acc_sum / n_folds;
}

void SweepReport::validate() const {
  check(resolutions.size() == values.size(), "sweep report: ",
        resolutions.size(), " resolutions vs ", values.size(), " values");
  for (size_t i = 1; i < resolutions.size(); ++i)
    check(resolutions[i] > resolutions[i - 1],
          "sweep report: resolutions must be strictly increasing");
  for (double v : values)
    check(std::isfinite(v), "sweep report: non-finite metric value");
}

void SweepReport::write_csv(const std::filesystem::path& path) const {
  validate();
  std::string out = "resolution," + metric + "\n";
  for (size_t i = 0; i < resolutions.size(); ++i)
    out += std::to_string(resolutions[i]) + "," + fmt_double(values[i]) + "\n";
  write_text_atomic(path, out);
}

void SweepReport::write_json(const std::filesystem::path& path) const {
  validate();
  nlohmann::json j{{"metric", metric},
                   {"model_id", model_id},
                   {"seed", seed},
                   {"resolutions", resolutions},
                   {"values", values}};
  write_text_atomic(path, j.dump(2) + "\n");
}

SweepReport resolution_accuracy_sweep(const EmbedNetwork& net,
                                      const Checkpoint& ckpt,
                                      const LabeledDataset& ds,
                                      const VerificationPairs& pairs,
                                      std::span<const int> resolutions) {
  check(!pairs.pairs.empty(), "accuracy sweep: no pairs");
  check_resolutions(resolutions, net.config().input_size);

  std::vector<uint8_t> same;
  for (const auto& p : pairs.pairs) same.push_back(p.same ? 1 : 0);

  SweepReport rep;
  rep.metric = "accuracy";
  for (int r : resolutions) {
    const std::vector<double> sims =
        pair_similarities(net, ckpt, ds, pairs, r);
    rep.resolutions.push_back(r);
    rep.values.push_back(verification_accuracy(sims, same));
  }
  return rep;
}

SweepReport gradient_norm_sweep(const EmbedNetwork& net, const Checkpoint& ckpt,
                                const std::vector<const ImageBuffer*>& batch,
                                std::span<const int> labels,
                                std::span<const int> resolutions,
                                const LossSpec& loss) {
  check(!batch.empty(), "gradient norm sweep: empty batch");
  check_resolutions(resolutions, net.config().input_size);
  loss.validate();

  const int input_size = net.config().input_size;
  const Tensor hr_batch = pack_batch(batch, input_size);
  const EmbedResult f_hr = net.embed(ckpt.params, hr_batch);

  SweepReport rep;
  rep.metric = "grad_norm_sum";
  for (int r : resolutions) {
    const std::vector<ImageBuffer> degraded = degrade_all(batch, r);
    std::vector<const ImageBuffer*> ptrs(degraded.size());
    for (size_t i = 0; i < degraded.size(); ++i) ptrs[i] = &degraded[i];
    const EmbedResult f_lr = net.embed(ckpt.params, pack_batch(ptrs, input_size));

    const TotalLossResult tl = total_loss(
        f_hr.embeddings, f_lr.embeddings, ckpt.class_weights, labels, loss);
    NamedTensors grads = net.backward(f_hr, tl.grad_f_hr);
    const NamedTensors grads_lr = net.backward(f_lr, tl.grad_f_lr);
    for (auto& [name, g] : grads)
      kernels::axpy(1.0, grads_lr.at(name).data(), g.data(),
                    size_t(g.numel()));

    double norm_sum = 0.0;
    auto add_norm = [&](const std::string& name, const Tensor& g) {
      check(g.all_finite(), "gradient norm sweep: non-finite gradient for '",
            name, "' at resolution ", r);
      norm_sum += std::sqrt(kernels::dot(g.data(), g.data(),
                                         size_t(g.numel())));
    };
    for (const auto& [name, g] : grads) add_norm(name, g);
    add_norm("class_weights", tl.grad_weights);

    rep.resolutions.push_back(r);
    rep.values.push_back(norm_sum);
  }
  return rep;
}

void SimilarityHistogram::write_csv(const std::filesystem::path& path) const {
  std::string out = "bin_lo,bin_hi,pos_count,neg_count\n";
  for (int i = 0; i < bins; ++i) {
    const double lo = -1.0 + 2.0 * i / bins;
    const double hi = -1.0 + 2.0 * (i + 1) / bins;
    out += fmt_double(lo) + "," + fmt_double(hi) + "," +
           std::to_string(pos_counts[size_t(i)]) + "," +
           std::to_string(neg_counts[size_t(i)]) + "\n";
  }
  write_text_atomic(path, out);
}

void SimilarityHistogram::write_json(const std::filesystem::path& path) const {
  nlohmann::json j{{"bins", bins},
                   {"resolution", resolution},
                   {"model_id", model_id},
                   {"seed", seed},
                   {"n_pos", n_pos},
                   {"n_neg", n_neg},
                   {"overlap", overlap},
                   {"pos_counts", pos_counts},
                   {"neg_counts", neg_counts}};
  write_text_atomic(path, j.dump(2) + "\n");
}

SimilarityHistogram similarity_distributions(const EmbedNetwork& net,
                                             const Checkpoint& ckpt,
                                             const LabeledDataset& ds,
                                             const VerificationPairs& pairs,
                                             int resolution) {
  check(!pairs.pairs.empty(), "similarity histogram: no pairs");
  const std::vector<double> sims =
      pair_similarities(net, ckpt, ds, pairs, resolution);

  SimilarityHistogram h;
  h.resolution = resolution;
  h.pos_counts.assign(size_t(h.bins), 0);
  h.neg_counts.assign(size_t(h.bins), 0);
  for (size_t i = 0; i < sims.size(); ++i) {
    const int bin = std::clamp(int((sims[i] + 1.0) / 2.0 * h.bins), 0,
                               h.bins - 1);
    if (pairs.pairs[i].same) {
      ++h.pos_counts[size_t(bin)];
      ++h.n_pos;
    } else {
      ++h.neg_counts[size_t(bin)];
      ++h.n_neg;
    }
  }
  if (h.n_pos > 0 && h.n_neg > 0) {
    for (int i = 0; i < h.bins; ++i)
      h.overlap += std::min(double(h.pos_counts[size_t(i)]) / double(h.n_pos),
                            double(h.neg_counts[size_t(i)]) / double(h.n_neg));
  }
  return h;
}

void DimErrorReport::write_csv(const std::filesystem::path& path) const {
  std::string out = "dim,mean_abs_error\n";
  for (size_t i = 0; i < mean_abs_error.size(); ++i)
    out += std::to_string(i) + "," + fmt_double(mean_abs_error[i]) + "\n";
  write_text_atomic(path, out);
}

void DimErrorReport::write_json(const std::filesystem::path& path) const {
  nlohmann::json j{{"resolution", resolution},
                   {"model_id", model_id},
                   {"seed", seed},
                   {"overall_mean", overall_mean},
                   {"mean_abs_error", mean_abs_error},
                   {"histogram", histogram},
                   {"hist_lo", hist_lo},
                   {"hist_hi", hist_hi}};
  write_text_atomic(path, j.dump(2) + "\n");
}

DimErrorReport per_dim_error(const EmbedNetwork& net, const Checkpoint& ckpt,
                             const std::vector<const ImageBuffer*>& probe,
                             int resolution) {
  check(!probe.empty(), "per-dim error: empty probe set");
  const Tensor f_hr =
      embed_images(net, ckpt, probe, net.config().input_size);
  const Tensor f_lr = embed_images(net, ckpt, probe, resolution);
  const int64_t n = f_hr.dim(0);
  const int64_t d = f_hr.dim(1);

  DimErrorReport rep;
  rep.resolution = resolution;
  rep.mean_abs_error.assign(size_t(d), 0.0);
  std::vector<double> a(static_cast<size_t>(d)), b(static_cast<size_t>(d));
  for (int64_t i = 0; i < n; ++i) {
    const double* xh = f_hr.data() + i * d;
    const double* xl = f_lr.data() + i * d;
    const double nh = std::sqrt(kernels::dot(xh, xh, size_t(d)) + kNormEps);
    const double nl = std::sqrt(kernels::dot(xl, xl, size_t(d)) + kNormEps);
    for (int64_t j = 0; j < d; ++j)
      rep.mean_abs_error[size_t(j)] += std::abs(xh[j] / nh - xl[j] / nl);
  }
  for (double& v : rep.mean_abs_error) v /= double(n);
  rep.overall_mean =
      std::accumulate(rep.mean_abs_error.begin(), rep.mean_abs_error.end(),
                      0.0) /
      double(d);

  const double mx =
      *std::max_element(rep.mean_abs_error.begin(), rep.mean_abs_error.end());
  rep.hist_lo = 0.0;
  rep.hist_hi = mx > 0 ? mx : 1.0;
  const int bins = 32;
  rep.histogram.assign(bins, 0);
  for (double v : rep.mean_abs_error) {
    const int bin =
        std::clamp(int(v / rep.hist_hi * bins), 0, bins - 1);
    ++rep.histogram[size_t(bin)];
  }
  return rep;
}

PcaResult pca_project(const Tensor& embeddings, int k) {
  check(embeddings.rank() == 2, "pca: data must be N x D, got ",
        embeddings.shape_str());
  const int64_t n = embeddings.dim(0);
  const int64_t d = embeddings.dim(1);
  check(k >= 1 && int64_t(k) <= d, "pca: k must be in [1,", d, "], got ", k);
  check(n > int64_t(k), "pca: need more samples than components (", n,
        " <= ", k, ")");

  PcaResult res;
  res.mean.assign(size_t(d), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j)
      res.mean[size_t(j)] += embeddings[i * d + j];
  for (double& m : res.mean) m /= double(n);

  Tensor centered({n, d});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j)
      centered[i * d + j] = embeddings[i * d + j] - res.mean[size_t(j)];

  Tensor cov({d, d});
  kernels::gemm(true, false, int(d), int(d), int(n), 1.0 / double(n - 1),
                centered.data(), int(d), centered.data(), int(d), 0.0,
                cov.data(), int(d));
  for (int64_t i = 0; i < d; ++i) res.total_variance += cov[i * d + i];

  res.components = Tensor({int64_t(k), d});
  RngStream rng(0, kPcaStream);
  std::vector<double> v(size_t(d), 0.0), w(size_t(d), 0.0);
  for (int comp = 0; comp < k; ++comp) {
    // Remaining variance is the sum of the undeflated eigenvalues; when
    // it is gone the covariance has rank < comp+1.
    double remaining = 0.0;
    for (int64_t i = 0; i < d; ++i) remaining += cov[i * d + i];
    check(remaining > 1e-12 * std::max(res.total_variance, 1e-300),
          "pca: degenerate covariance, rank < ", comp + 1);
    for (double& x : v) x = rng.normal();
    double nv = std::sqrt(kernels::dot(v.data(), v.data(), size_t(d)));
    check(nv > 0, "pca: degenerate start vector");
    for (double& x : v) x /= nv;

    double eigenvalue = 0.0;
    bool converged = false;
    for (int iter = 0; iter < 1000 && !converged; ++iter) {
      kernels::gemm(false, false, int(d), 1, int(d), 1.0, cov.data(), int(d),
                    v.data(), 1, 0.0, w.data(), 1);
      const double nw = std::sqrt(kernels::dot(w.data(), w.data(), size_t(d)));
      check(nw > 1e-300 * double(d),
            "pca: degenerate covariance, rank < ", comp + 1);
      double diff = 0.0;
      for (size_t i = 0; i < v.size(); ++i) {
        w[i] /= nw;
        diff = std::max(diff, std::abs(w[i] - v[i]));
      }
      v = w;
      converged = diff < 1e-9;
    }
    check(converged, "pca: power iteration did not converge for component ",
          comp + 1);

    kernels::gemm(false, false, int(d), 1, int(d), 1.0, cov.data(), int(d),
                  v.data(), 1, 0.0, w.data(), 1);
    eigenvalue = kernels::dot(v.data(), w.data(), size_t(d));
    const double scale = res.eigenvalues.empty()
                             ? std::max(res.total_variance, 1e-300)
                             : res.eigenvalues.front();
    check(eigenvalue > 1e-9 * scale,
          "pca: degenerate covariance, rank < ", comp + 1);
    res.eigenvalues.push_back(eigenvalue);

    int64_t arg = 0;
    for (int64_t i = 1; i < d; ++i)
      if (std::abs(v[size_t(i)]) > std::abs(v[size_t(arg)])) arg = i;
    if (v[size_t(arg)] < 0)
      for (double& x : v) x = -x;

    for (int64_t i = 0; i < d; ++i)
      res.components[comp * d + i] = v[size_t(i)];
    for (int64_t i = 0; i < d; ++i)
      for (int64_t j = 0; j < d; ++j)
        cov[i * d + j] -= eigenvalue * v[size_t(i)] * v[size_t(j)];
  }

  res.coordinates = Tensor({n, int64_t(k)});
  kernels::gemm(false, true, int(n), k, int(d), 1.0, centered.data(), int(d),
                res.components.data(), int(d), 0.0, res.coordinates.data(),
                k);
  return res;
}

void PcaReport::write_csv(const std::filesystem::path& path) const {
  const int64_t k = pca.coordinates.dim(1);
  std::string out = "resolution,is_centroid";
  for (int64_t c = 0; c < k; ++c) out += ",pc" + std::to_string(c + 1);
  out += "\n";
  for (int64_t i = 0; i < pca.coordinates.dim(0); ++i) {
    out += std::to_string(resolutions[size_t(group_of_row[size_t(i)])]);
    out += ",0";
    for (int64_t c = 0; c < k; ++c)
      out += "," + fmt_double(pca.coordinates[i * k + c]);
    out += "\n";
  }
  for (int64_t g = 0; g < centroids.dim(0); ++g) {
    out += std::to_string(resolutions[size_t(g)]) + ",1";
    for (int64_t c = 0; c < k; ++c)
      out += "," + fmt_double(centroids[g * k + c]);
    out += "\n";
  }
  write_text_atomic(path, out);
}

void PcaReport::write_json(const std::filesystem::path& path) const {
  const int64_t k = pca.coordinates.dim(1);
  nlohmann::json groups = nlohmann::json::array();
  for (int64_t g = 0; g < centroids.dim(0); ++g) {
    std::vector<double> c(centroids.data() + g * k,
                          centroids.data() + (g + 1) * k);
    groups.push_back({{"resolution", resolutions[size_t(g)]},
                      {"centroid", c}});
  }
  nlohmann::json j{{"model_id", model_id},
                   {"seed", seed},
                   {"eigenvalues", pca.eigenvalues},
                   {"total_variance", pca.total_variance},
                   {"groups", groups}};
  write_text_atomic(path, j.dump(2) + "\n");
}

PcaReport pca_by_resolution(const EmbedNetwork& net, const Checkpoint& ckpt,
                            const std::vector<const ImageBuffer*>& probe,
                            std::span<const int> resolutions, int k) {
  check(!probe.empty(), "pca: empty probe set");
  check_resolutions(resolutions, net.config().input_size);

  const int64_t n = int64_t(probe.size());
  const int64_t d = net.config().embedding_dim;
  const int64_t groups = int64_t(resolutions.size());
  Tensor all({groups * n, d});
  PcaReport rep;
  for (int64_t g = 0; g < groups; ++g) {
    const Tensor emb = embed_images(net, ckpt, probe, resolutions[size_t(g)]);
    std::copy(emb.data(), emb.data() + n * d, all.data() + g * n * d);
    for (int64_t i = 0; i < n; ++i) rep.group_of_row.push_back(int(g));
  }
  rep.resolutions.assign(resolutions.begin(), resolutions.end());
  rep.pca = pca_project(all, k);

  rep.centroids = Tensor({groups, int64_t(k)});
  for (int64_t g = 0; g < groups; ++g) {
    for (int64_t i = 0; i < n; ++i)
      for (int64_t c = 0; c < k; ++c)
        rep.centroids[g * k + c] += rep.pca.coordinates[(g * n + i) * k + c];
    for (int64_t c = 0; c < k; ++c) rep.centroids[g * k + c] /= double(n);
  }
  return rep;
}

std::filesystem::path report_path(const std::filesystem::path& out_dir,
                                  const std::string& report,
                                  const std::string& model_id, uint64_t seed,
                                  const std::string& ext) {
  return out_dir /
         (report + "_" + model_id + "_" + std::to_string(seed) + "." + ext);
}

}  // namespace lrfr
