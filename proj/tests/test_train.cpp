#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "lrfr/datagen.hpp"
#include "lrfr/rng.hpp"
#include "lrfr/train.hpp"

using namespace lrfr;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("lrfr_tr_" + std::to_string(RngStream(uint64_t(std::time(nullptr)),
                                                  uint64_t(getpid()))
                             .next_u64()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::string((std::istreambuf_iterator<char>(f)), {});
}

NetworkConfig tiny_net() {
  NetworkConfig net;
  net.channel_widths = {4, 6};
  net.embedding_dim = 8;
  net.input_size = 16;
  return net;
}

LabeledDataset tiny_dataset() {
  DatasetSpec spec;
  spec.n_identities = 6;
  spec.images_per_identity = 4;
  spec.input_size = 16;
  spec.seed = 3;
  return generate_dataset(spec);
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.plan.entries = {{4, 1.0}, {8, 1.0}, {12, 2.0}};
  cfg.plan.input_size = 16;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.lr = 0.02;
  cfg.lr_milestones = {};
  cfg.seed = 1;
  return cfg;
}

}  // namespace

TEST_CASE("lr schedule: decade drops at milestones, linear warmup") {
  TrainConfig cfg;
  cfg.epochs = 7;
  cfg.lr = 1.0;
  cfg.lr_milestones = {3, 5};
  CHECK(cfg.lr_at_epoch(1) == 1.0);
  CHECK(cfg.lr_at_epoch(2) == 1.0);
  CHECK(cfg.lr_at_epoch(3) == doctest::Approx(0.1));
  CHECK(cfg.lr_at_epoch(4) == doctest::Approx(0.1));
  CHECK(cfg.lr_at_epoch(5) == doctest::Approx(0.01));
  CHECK(cfg.lr_at_epoch(7) == doctest::Approx(0.01));

  cfg.warmup_epochs = 2;
  CHECK(cfg.lr_at_epoch(1) == doctest::Approx(1.0 / 3.0));
  CHECK(cfg.lr_at_epoch(2) == doctest::Approx(2.0 / 3.0));
  CHECK(cfg.lr_at_epoch(3) == doctest::Approx(0.1));
}

TEST_CASE("train config validation") {
  TrainConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.epochs = 4;
  cfg.lr_milestones = {2};
  CHECK_NOTHROW(cfg.validate());
  cfg.lr_milestones = {4};  // >= epochs
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = tiny_config();
  cfg.warmup_epochs = -1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = tiny_config();
  cfg.momentum = 1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = tiny_config();
  cfg.flip_prob = 1.5;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = tiny_config();
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("sgd update follows the two-step closed form") {
  Tensor p({2}, {1.0, -2.0});
  Tensor g({2}, {0.5, 0.25});
  Tensor v({2});
  const double lr = 0.1, mu = 0.9, wd = 0.01;

  // v1 = g + wd p0; p1 = p0 - lr v1
  const double v1a = 0.5 + 0.01 * 1.0;
  const double v1b = 0.25 + 0.01 * -2.0;
  const double p1a = 1.0 - 0.1 * v1a;
  const double p1b = -2.0 - 0.1 * v1b;
  sgd_update(p, g, v, lr, mu, wd);
  CHECK(p[0] == doctest::Approx(p1a).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(p1b).epsilon(1e-15));
  CHECK(v[0] == doctest::Approx(v1a).epsilon(1e-15));

  // v2 = mu v1 + g + wd p1; p2 = p1 - lr v2
  const double v2a = mu * v1a + 0.5 + wd * p1a;
  const double v2b = mu * v1b + 0.25 + wd * p1b;
  sgd_update(p, g, v, lr, mu, wd);
  CHECK(p[0] == doctest::Approx(p1a - lr * v2a).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(p1b - lr * v2b).epsilon(1e-15));
}

TEST_CASE("weight decay skips prelu slopes in the map form") {
  NamedTensors params, grads, vel;
  params["conv0.w"] = Tensor({2}, {1.0, 1.0});
  params["prelu0.a"] = Tensor({2}, {0.25, 0.25});
  grads["conv0.w"] = Tensor({2});
  grads["prelu0.a"] = Tensor({2});
  vel["conv0.w"] = Tensor({2});
  vel["prelu0.a"] = Tensor({2});
  sgd_update(params, grads, vel, 0.1, 0.9, 0.5);
  CHECK(params.at("conv0.w")[0] < 1.0);       // decayed
  CHECK(params.at("prelu0.a")[0] == 0.25);    // untouched
}

TEST_CASE("train state init: mirrored velocity, near-unit class rows") {
  const NetworkConfig net = tiny_net();
  const TrainState a = init_train_state(net, 5, 7);
  const TrainState b = init_train_state(net, 5, 7);

  REQUIRE(a.class_weights.shape() == std::vector<int64_t>({5, 8}));
  REQUIRE(a.velocity.size() == a.params.size());
  for (const auto& [name, t] : a.velocity) {
    CHECK(t.same_shape(a.params.at(name)));
    for (int64_t i = 0; i < t.numel(); ++i) CHECK(t[i] == 0.0);
  }
  for (int64_t i = 0; i < a.class_weights.numel(); ++i)
    CHECK(a.class_weights[i] == b.class_weights[i]);

  // Rows drawn at 1/sqrt(D) scale: norms concentrate near 1, so the
  // normalization backward cannot blow up class gradients at step one.
  for (int64_t k = 0; k < 5; ++k) {
    double norm = 0.0;
    for (int64_t d = 0; d < 8; ++d) {
      const double w = a.class_weights[k * 8 + d];
      norm += w * w;
    }
    norm = std::sqrt(norm);
    CHECK(norm > 0.4);
    CHECK(norm < 2.0);
  }
}

TEST_CASE("a train step records the sampled resolutions and loss parts") {
  const NetworkConfig net_cfg = tiny_net();
  const LabeledDataset ds = tiny_dataset();
  TrainConfig cfg = tiny_config();
  TrainState state = init_train_state(net_cfg, ds.n_identities(), cfg.seed);
  const EmbedNetwork net(net_cfg);

  std::vector<const ImageBuffer*> batch;
  std::vector<int> labels;
  std::vector<uint64_t> uids;
  for (int i = 0; i < 8; ++i) {
    batch.push_back(&ds.images[size_t(i)]);
    labels.push_back(ds.labels[size_t(i)]);
    uids.push_back(uint64_t(i));
  }
  const StepRecord rec = train_step(state, net, cfg, batch, labels, uids,
                                    0.01);
  CHECK(rec.step == 0);  // records the pre-increment counter
  CHECK(std::isfinite(rec.l_all));
  CHECK(rec.l_dist >= 0.0);
  CHECK(rec.l_all == doctest::Approx(cfg.loss.lambda * rec.l_dist +
                                     0.5 * (rec.l_cls_hr + rec.l_cls_lr))
                         .epsilon(1e-12));
  CHECK(rec.lr == 0.01);
  REQUIRE(rec.resolutions.size() == batch.size());
  for (int r : rec.resolutions)
    CHECK((r == 4 || r == 8 || r == 12));
  CHECK(state.step == 1);
}

TEST_CASE("ten steps are bitwise reproducible") {
  const NetworkConfig net_cfg = tiny_net();
  const LabeledDataset ds = tiny_dataset();
  const TrainConfig cfg = tiny_config();
  const EmbedNetwork net(net_cfg);

  auto run = [&] {
    TrainState state = init_train_state(net_cfg, ds.n_identities(), cfg.seed);
    std::vector<const ImageBuffer*> batch;
    std::vector<int> labels;
    for (int i = 0; i < 8; ++i) {
      batch.push_back(&ds.images[size_t(i)]);
      labels.push_back(ds.labels[size_t(i)]);
    }
    for (int s = 0; s < 10; ++s) {
      std::vector<uint64_t> uids;
      for (int i = 0; i < 8; ++i) uids.push_back(uint64_t(s * 8 + i));
      train_step(state, net, cfg, batch, labels, uids, 0.01);
    }
    return state;
  };
  const TrainState s1 = run();
  const TrainState s2 = run();
  for (const auto& [name, t] : s1.params) {
    const Tensor& u = s2.params.at(name);
    for (int64_t i = 0; i < t.numel(); ++i) CHECK(t[i] == u[i]);
  }
  for (int64_t i = 0; i < s1.class_weights.numel(); ++i)
    CHECK(s1.class_weights[i] == s2.class_weights[i]);
}

TEST_CASE("full runs write identical logs and checkpoints") {
  TempDir tmp;
  const NetworkConfig net_cfg = tiny_net();
  const LabeledDataset ds = tiny_dataset();
  const TrainConfig cfg = tiny_config();

  const TrainResult r1 = train(cfg, net_cfg, ds, tmp.path / "a");
  const TrainResult r2 = train(cfg, net_cfg, ds, tmp.path / "b");
  r1.log.write_jsonl(tmp.path / "a" / "log.jsonl");
  r2.log.write_jsonl(tmp.path / "b" / "log.jsonl");
  r1.log.write_csv(tmp.path / "a" / "log.csv");
  r2.log.write_csv(tmp.path / "b" / "log.csv");

  CHECK(slurp(tmp.path / "a" / "log.jsonl") ==
        slurp(tmp.path / "b" / "log.jsonl"));
  CHECK(slurp(tmp.path / "a" / "log.csv") ==
        slurp(tmp.path / "b" / "log.csv"));
  CHECK(slurp(r1.final_checkpoint) == slurp(r2.final_checkpoint));
  CHECK(r1.log.records.size() == r2.log.records.size());
  CHECK(!r1.log.records.empty());
}

TEST_CASE("milestone epochs leave a checkpoint behind") {
  TempDir tmp;
  const NetworkConfig net_cfg = tiny_net();
  const LabeledDataset ds = tiny_dataset();
  TrainConfig cfg = tiny_config();
  cfg.epochs = 3;
  cfg.lr_milestones = {2};
  train(cfg, net_cfg, ds, tmp.path);
  CHECK(fs::exists(tmp.path / "checkpoint_epoch2.ckpt"));
  CHECK(fs::exists(tmp.path / "checkpoint_final.ckpt"));
}

TEST_CASE("training reduces the loss on the desk-scale toy run") {
  TempDir tmp;
  const NetworkConfig net_cfg = tiny_net();
  const LabeledDataset ds = tiny_dataset();
  TrainConfig cfg = tiny_config();
  cfg.epochs = 6;
  cfg.lr = 0.05;
  cfg.warmup_epochs = 1;
  const TrainResult res = train(cfg, net_cfg, ds, tmp.path);

  double first = 0.0, last = 0.0;
  int n_first = 0, n_last = 0;
  for (const StepRecord& r : res.log.records) {
    if (r.epoch == 1) {
      first += r.l_all;
      ++n_first;
    }
    if (r.epoch == cfg.epochs) {
      last += r.l_all;
      ++n_last;
    }
  }
  REQUIRE(n_first > 0);
  REQUIRE(n_last > 0);
  CHECK(last / n_last < first / n_first);
}
