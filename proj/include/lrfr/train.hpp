#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "lrfr/datagen.hpp"
#include "lrfr/image.hpp"
#include "lrfr/losses.hpp"
#include "lrfr/model.hpp"
#include "lrfr/tensor.hpp"

namespace lrfr {

struct TrainConfig {
  LossSpec loss;
  AugmentationPlan plan;
  int epochs = 20;
  int batch_size = 64;
  double lr = 0.05;
  std::vector<int> lr_milestones = {12, 17};
  int warmup_epochs = 0;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double flip_prob = 0.5;
  uint64_t seed = 0;

  void validate() const;
  // Effective rate for a 1-based epoch: divided by 10 on entering each
  // milestone epoch, scaled linearly up over the warmup epochs.
  double lr_at_epoch(int epoch) const;
};

struct StepRecord {
  int epoch = 0;
  int64_t step = 0;
  double l_all = 0, l_dist = 0, l_cls_hr = 0, l_cls_lr = 0;
  double lr = 0;
  std::vector<int> resolutions;  // sampled per batch item
};

// Append-only and timestamp-free so identical runs produce identical
// files.
struct TrainLog {
  std::vector<StepRecord> records;
  void write_jsonl(const std::filesystem::path& path) const;
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainState {
  NetworkParams params;
  Tensor class_weights;      // K x embedding_dim
  NamedTensors velocity;     // mirrors params
  Tensor class_velocity;
  int64_t step = 0;
  int epoch = 0;
};

TrainState init_train_state(const NetworkConfig& net, int n_classes,
                            uint64_t seed);

// v <- momentum v + g + wd p, then p <- p - lr v. The map form skips
// weight decay for PReLU slopes.
void sgd_update(Tensor& param, const Tensor& grad, Tensor& velocity,
                double lr, double momentum, double weight_decay);
void sgd_update(NamedTensors& params, const NamedTensors& grads,
                NamedTensors& velocity, double lr, double momentum,
                double weight_decay);

// One batch: per item, coin-flip horizontal flip (shared by both
// branches so the pair stays aligned), sample a plan resolution, degrade
// the partner; forward both branches through the shared network, apply
// the combined loss, SGD step. item_uids derive per-item RNG substreams,
// so results are independent of LRFR_THREADS.
StepRecord train_step(TrainState& state, const EmbedNetwork& net,
                      const TrainConfig& config,
                      const std::vector<const ImageBuffer*>& hr_batch,
                      std::span<const int> labels,
                      std::span<const uint64_t> item_uids, double lr);

struct TrainResult {
  TrainLog log;
  std::filesystem::path final_checkpoint;
};

// Seeded epoch shuffles, milestone decay, checkpoints at each milestone
// epoch and at the end (write-then-rename, never left partial).
TrainResult train(const TrainConfig& config, const NetworkConfig& net_config,
                  const LabeledDataset& dataset,
                  const std::filesystem::path& out_dir);

}  // namespace lrfr
