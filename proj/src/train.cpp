#include "lrfr/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include <json.hpp>

#include "lrfr/checkpoint.hpp"
#include "lrfr/common.hpp"
#include "lrfr/kernels.hpp"
#include "lrfr/parallel.hpp"
#include "lrfr/rng.hpp"

namespace lrfr {
namespace {

// RNG stream namespaces under the training seed. Offsets keep them
// disjoint from each other and from datagen/model-init streams.
constexpr uint64_t kClassInitStream = 0x636c617373ULL;       // "class"
constexpr uint64_t kAugStreamBase = uint64_t(1) << 40;       // + item uid
constexpr uint64_t kShuffleStreamBase = uint64_t(1) << 41;   // + epoch

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

}  // namespace

void TrainConfig::validate() const {
  loss.validate();
  plan.validate();
  check(epochs >= 0, "train config: epochs must be >= 0, got ", epochs);
  check(batch_size >= 1, "train config: batch size must be >= 1, got ",
        batch_size);
  check(std::isfinite(lr) && lr > 0, "train config: lr must be positive, got ",
        lr);
  for (size_t i = 0; i < lr_milestones.size(); ++i) {
    check(lr_milestones[i] >= 1 && lr_milestones[i] < epochs,
          "train config: milestone ", lr_milestones[i],
          " must lie in [1,", epochs, ")");
    if (i > 0)
      check(lr_milestones[i] > lr_milestones[i - 1],
            "train config: milestones must be strictly increasing");
  }
  check(warmup_epochs >= 0, "train config: warmup epochs must be >= 0, got ",
        warmup_epochs);
  check(momentum >= 0 && momentum < 1,
        "train config: momentum must be in [0,1), got ", momentum);
  check(weight_decay >= 0, "train config: weight decay must be >= 0, got ",
        weight_decay);
  check(flip_prob >= 0 && flip_prob <= 1,
        "train config: flip prob must be in [0,1], got ", flip_prob);
}

double TrainConfig::lr_at_epoch(int epoch) const {
  double v = lr;
  for (int m : lr_milestones)
    if (epoch >= m) v /= 10.0;
  if (epoch <= warmup_epochs)
    v *= double(epoch) / double(warmup_epochs + 1);
  return v;
}

void TrainLog::write_jsonl(const std::filesystem::path& path) const {
  std::string out;
  for (const StepRecord& r : records) {
    nlohmann::json j{{"epoch", r.epoch},        {"step", r.step},
                     {"l_all", r.l_all},        {"l_dist", r.l_dist},
                     {"l_cls_hr", r.l_cls_hr},  {"l_cls_lr", r.l_cls_lr},
                     {"lr", r.lr},              {"resolutions", r.resolutions}};
    out += j.dump();
    out += '\n';
  }
  write_text_atomic(path, out);
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::string out = "epoch,step,l_all,l_dist,l_cls_hr,l_cls_lr,lr,resolutions\n";
  for (const StepRecord& r : records) {
    out += std::to_string(r.epoch) + "," + std::to_string(r.step) + "," +
           fmt_double(r.l_all) + "," + fmt_double(r.l_dist) + "," +
           fmt_double(r.l_cls_hr) + "," + fmt_double(r.l_cls_lr) + "," +
           fmt_double(r.lr) + ",";
    for (size_t i = 0; i < r.resolutions.size(); ++i) {
      if (i) out += ';';
      out += std::to_string(r.resolutions[i]);
    }
    out += '\n';
  }
  write_text_atomic(path, out);
}

TrainState init_train_state(const NetworkConfig& net, int n_classes,
                            uint64_t seed) {
  check(n_classes >= 1, "train state: need >= 1 class, got ", n_classes);
  TrainState state;
  state.params = init_network(net, seed);
  for (const auto& [name, t] : state.params)
    state.velocity.emplace(name, Tensor(t.shape()));

  RngStream rng(seed, kClassInitStream);
  state.class_weights = Tensor({n_classes, net.embedding_dim});
  // Rows start near unit norm. The margin loss normalizes rows, and its
  // backward divides by the row norm, so tiny-norm init amplifies class
  // gradients enough to destabilize early training.
  const double std = 1.0 / std::sqrt(double(net.embedding_dim));
  for (int64_t i = 0; i < state.class_weights.numel(); ++i)
    state.class_weights[i] = rng.normal(0.0, std);
  state.class_weights.requires_grad = true;
  state.class_velocity = Tensor(state.class_weights.shape());
  return state;
}

void sgd_update(Tensor& param, const Tensor& grad, Tensor& velocity,
                double lr, double momentum, double weight_decay) {
  check(param.same_shape(grad) && param.same_shape(velocity),
        "sgd: shape mismatch, param ", param.shape_str(), " grad ",
        grad.shape_str(), " velocity ", velocity.shape_str());
  for (int64_t i = 0; i < param.numel(); ++i) {
    velocity[i] =
        momentum * velocity[i] + grad[i] + weight_decay * param[i];
    param[i] -= lr * velocity[i];
  }
}

void sgd_update(NamedTensors& params, const NamedTensors& grads,
                NamedTensors& velocity, double lr, double momentum,
                double weight_decay) {
  for (auto& [name, p] : params) {
    const auto git = grads.find(name);
    check(git != grads.end(), "sgd: missing gradient for '", name, "'");
    const auto vit = velocity.find(name);
    check(vit != velocity.end(), "sgd: missing velocity for '", name, "'");
    const double wd =
        name.find("prelu") != std::string::npos ? 0.0 : weight_decay;
    sgd_update(p, git->second, vit->second, lr, momentum, wd);
  }
}

StepRecord train_step(TrainState& state, const EmbedNetwork& net,
                      const TrainConfig& config,
                      const std::vector<const ImageBuffer*>& hr_batch,
                      std::span<const int> labels,
                      std::span<const uint64_t> item_uids, double lr) {
  const int64_t b = int64_t(hr_batch.size());
  check(b >= 1, "train step: empty batch");
  check(int64_t(labels.size()) == b && int64_t(item_uids.size()) == b,
        "train step: batch of ", b, " with ", labels.size(), " labels and ",
        item_uids.size(), " uids");

  std::vector<ImageBuffer> hr(static_cast<size_t>(b));
  std::vector<ImageBuffer> lr_imgs(static_cast<size_t>(b));
  std::vector<int> resolutions(static_cast<size_t>(b));
  parallel_for(b, [&](int64_t i) {
    RngStream rng(config.seed, kAugStreamBase + item_uids[size_t(i)]);
    ImageBuffer img = *hr_batch[size_t(i)];
    if (rng.bernoulli(config.flip_prob)) img = hflip(img);
    const int r = sample_resolution(config.plan, rng);
    resolutions[size_t(i)] = r;
    lr_imgs[size_t(i)] = degrade(img, r);
    hr[size_t(i)] = std::move(img);
  });

  std::vector<const ImageBuffer*> hrp(static_cast<size_t>(b));
  std::vector<const ImageBuffer*> lrp(static_cast<size_t>(b));
  for (int64_t i = 0; i < b; ++i) {
    hrp[size_t(i)] = &hr[size_t(i)];
    lrp[size_t(i)] = &lr_imgs[size_t(i)];
  }
  const int s = net.config().input_size;
  const EmbedResult f_hr = net.embed(state.params, pack_batch(hrp, s));
  const EmbedResult f_lr = net.embed(state.params, pack_batch(lrp, s));

  const TotalLossResult loss =
      total_loss(f_hr.embeddings, f_lr.embeddings, state.class_weights,
                 labels, config.loss);
  check(std::isfinite(loss.l_all), "train step ", state.step,
        " (epoch ", state.epoch, "): non-finite loss, l_dist=", loss.l_dist,
        " l_cls_hr=", loss.l_cls_hr, " l_cls_lr=", loss.l_cls_lr);

  NamedTensors grads = net.backward(f_hr, loss.grad_f_hr);
  const NamedTensors grads_lr = net.backward(f_lr, loss.grad_f_lr);
  for (auto& [name, g] : grads) {
    const Tensor& o = grads_lr.at(name);
    kernels::axpy(1.0, o.data(), g.data(), size_t(g.numel()));
  }

  sgd_update(state.params, grads, state.velocity, lr, config.momentum,
             config.weight_decay);
  sgd_update(state.class_weights, loss.grad_weights, state.class_velocity,
             lr, config.momentum, config.weight_decay);

  StepRecord rec;
  rec.epoch = state.epoch;
  rec.step = state.step;
  rec.l_all = loss.l_all;
  rec.l_dist = loss.l_dist;
  rec.l_cls_hr = loss.l_cls_hr;
  rec.l_cls_lr = loss.l_cls_lr;
  rec.lr = lr;
  rec.resolutions = std::move(resolutions);
  ++state.step;
  return rec;
}

TrainResult train(const TrainConfig& config, const NetworkConfig& net_config,
                  const LabeledDataset& dataset,
                  const std::filesystem::path& out_dir) {
  config.validate();
  net_config.validate();
  check(dataset.input_size == net_config.input_size,
        "train: dataset images are ", dataset.input_size,
        " px but the network expects ", net_config.input_size);
  check(config.plan.input_size == net_config.input_size,
        "train: augmentation plan input size ", config.plan.input_size,
        " vs network input size ", net_config.input_size);
  const std::vector<int> train_idx = dataset.train_indices();
  check(!train_idx.empty(), "train: dataset has no train split");

  std::filesystem::create_directories(out_dir);
  const int n_classes = dataset.n_identities();
  TrainState state = init_train_state(net_config, n_classes, config.seed);
  const EmbedNetwork net(net_config);

  auto snapshot = [&](const std::filesystem::path& path) {
    save_checkpoint(path,
                    Checkpoint{net_config, state.params, state.class_weights});
  };

  TrainResult result;
  const int64_t n_train = int64_t(train_idx.size());
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    state.epoch = epoch;
    const double lr = config.lr_at_epoch(epoch);

    std::vector<int> order = train_idx;
    RngStream shuffle(config.seed, kShuffleStreamBase + uint64_t(epoch));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle.uniform_index(i)]);

    for (int64_t start = 0; start < n_train; start += config.batch_size) {
      const int64_t end = std::min(start + config.batch_size, n_train);
      std::vector<const ImageBuffer*> batch;
      std::vector<int> labels;
      std::vector<uint64_t> uids;
      for (int64_t i = start; i < end; ++i) {
        const int idx = order[size_t(i)];
        batch.push_back(&dataset.images[size_t(idx)]);
        labels.push_back(dataset.labels[size_t(idx)]);
        uids.push_back(uint64_t(epoch - 1) * uint64_t(n_train) + uint64_t(i));
      }
      result.log.records.push_back(
          train_step(state, net, config, batch, labels, uids, lr));
    }

    if (std::find(config.lr_milestones.begin(), config.lr_milestones.end(),
                  epoch) != config.lr_milestones.end())
      snapshot(out_dir / ("checkpoint_epoch" + std::to_string(epoch) +
                          ".ckpt"));
  }

  result.final_checkpoint = out_dir / "checkpoint_final.ckpt";
  snapshot(result.final_checkpoint);
  return result;
}

}  // namespace lrfr
