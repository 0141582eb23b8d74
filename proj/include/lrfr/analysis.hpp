#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lrfr/checkpoint.hpp"
#include "lrfr/datagen.hpp"
#include "lrfr/losses.hpp"
#include "lrfr/model.hpp"
#include "lrfr/tensor.hpp"

namespace lrfr {

// Embeds images through a checkpointed network, optionally degrading to
// a resolution first (resolution == input_size leaves pixels untouched).
// Returns raw (unnormalized) B x D embeddings; batching does not affect
// values.
Tensor embed_images(const EmbedNetwork& net, const Checkpoint& ckpt,
                    const std::vector<const ImageBuffer*>& images,
                    int resolution, int batch_size = 32);

// Cosine over eps-guarded normalized vectors.
double cosine_similarity(const double* a, const double* b, int64_t d);

// Folded best-threshold protocol: pairs are split into contiguous folds;
// each fold is scored at the threshold (grid -1..1, step 0.005, lowest
// argmax) that maximizes accuracy on the other folds; result is the mean
// fold accuracy. A pair counts as "same" when similarity >= threshold.
double verification_accuracy(std::span<const double> sims,
                             std::span<const uint8_t> same, int n_folds = 10);

struct SweepReport {
  std::string metric;  // "accuracy" or "grad_norm_sum"
  std::string model_id;
  uint64_t seed = 0;
  std::vector<int> resolutions;  // strictly increasing
  std::vector<double> values;

  void validate() const;
  void write_csv(const std::filesystem::path& path) const;
  void write_json(const std::filesystem::path& path) const;
};

// Verification accuracy after degrading both pair images to each
// resolution.
SweepReport resolution_accuracy_sweep(const EmbedNetwork& net,
                                      const Checkpoint& ckpt,
                                      const LabeledDataset& ds,
                                      const VerificationPairs& pairs,
                                      std::span<const int> resolutions);

// One forward/backward of the combined loss per resolution (HR branch
// undegraded, partner degraded to r, no update); the metric sums the L2
// norm of every parameter gradient, class weights included.
SweepReport gradient_norm_sweep(const EmbedNetwork& net, const Checkpoint& ckpt,
                                const std::vector<const ImageBuffer*>& batch,
                                std::span<const int> labels,
                                std::span<const int> resolutions,
                                const LossSpec& loss);

struct SimilarityHistogram {
  int bins = 64;  // uniform over [-1, 1]
  std::vector<int64_t> pos_counts;
  std::vector<int64_t> neg_counts;
  int64_t n_pos = 0;
  int64_t n_neg = 0;
  double overlap = 0.0;  // sum over bins of min of the normalized pair
  std::string model_id;
  uint64_t seed = 0;
  int resolution = 0;

  void write_csv(const std::filesystem::path& path) const;
  void write_json(const std::filesystem::path& path) const;
};

SimilarityHistogram similarity_distributions(const EmbedNetwork& net,
                                             const Checkpoint& ckpt,
                                             const LabeledDataset& ds,
                                             const VerificationPairs& pairs,
                                             int resolution);

struct DimErrorReport {
  std::vector<double> mean_abs_error;  // per embedding dimension
  double overall_mean = 0.0;
  std::vector<int64_t> histogram;  // of the per-dim means
  double hist_lo = 0.0, hist_hi = 0.0;
  std::string model_id;
  uint64_t seed = 0;
  int resolution = 0;

  void write_csv(const std::filesystem::path& path) const;
  void write_json(const std::filesystem::path& path) const;
};

// Mean |f_hr,i - f_lr,i| per dimension over a probe set, embeddings
// L2-normalized before differencing.
DimErrorReport per_dim_error(const EmbedNetwork& net, const Checkpoint& ckpt,
                             const std::vector<const ImageBuffer*>& probe,
                             int resolution);

struct PcaResult {
  Tensor components;   // k x D, rows unit length
  std::vector<double> eigenvalues;
  double total_variance = 0.0;  // trace of the covariance
  std::vector<double> mean;     // D
  Tensor coordinates;  // N x k
};

// Top-k principal components of N x D data via power iteration with
// deflation (tolerance 1e-9, at most 1000 iterations, fixed seeded
// start). Sign convention: the largest-magnitude entry of each component
// is positive. Covariance of rank < k is an error.
PcaResult pca_project(const Tensor& embeddings, int k);

struct PcaReport {
  PcaResult pca;
  std::vector<int> resolutions;      // group tag per block of rows
  std::vector<int> group_of_row;     // index into resolutions
  Tensor centroids;                  // n_groups x k, in PCA coordinates

  std::string model_id;
  uint64_t seed = 0;

  void write_csv(const std::filesystem::path& path) const;
  void write_json(const std::filesystem::path& path) const;
};

// Embeds a probe set at each resolution, projects everything into one
// shared PCA basis, and reports per-resolution centroids.
PcaReport pca_by_resolution(const EmbedNetwork& net, const Checkpoint& ckpt,
                            const std::vector<const ImageBuffer*>& probe,
                            std::span<const int> resolutions, int k);

// <out_dir>/<report>_<model_id>_<seed>.<ext>
std::filesystem::path report_path(const std::filesystem::path& out_dir,
                                  const std::string& report,
                                  const std::string& model_id, uint64_t seed,
                                  const std::string& ext);

}  // namespace lrfr
