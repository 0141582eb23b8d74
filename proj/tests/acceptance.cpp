// Acceptance battery. Prints exactly one [PASS]/[FAIL] line per
// criterion on stdout; progress goes to stderr. Exit code 0 iff every
// criterion passes.
//
// Desk-scale thresholds for criteria 7-9 were frozen after one pilot of
// the committed schedule (configs/desk.cfg) and are recorded next to
// each check; the inequality directions are the contract.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lrfr/analysis.hpp"
#include "lrfr/checkpoint.hpp"
#include "lrfr/config.hpp"
#include "lrfr/datagen.hpp"
#include "lrfr/gradcheck.hpp"
#include "lrfr/image.hpp"
#include "lrfr/losses.hpp"
#include "lrfr/model.hpp"
#include "lrfr/rng.hpp"
#include "lrfr/train.hpp"

using namespace lrfr;
namespace fs = std::filesystem;
using clock_type = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %2d: %s\n", pass ? "PASS" : "FAIL", criterion,
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

void note(const std::string& msg) {
  std::fprintf(stderr, "[info] %s\n", msg.c_str());
  std::fflush(stderr);
}

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof buf, f, args);
  va_end(args);
  return std::string(buf);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  check(f.good(), "cannot open ", p.string());
  return std::string((std::istreambuf_iterator<char>(f)), {});
}

// ---------------------------------------------------------------------------
// criterion 1: finite-difference agreement of every analytic gradient

void criterion_gradients() {
  const auto t0 = clock_type::now();
  const Battery b = gradient_battery(2026, 100, 1e-4);
  const double secs = seconds_since(t0);
  const bool pass = b.pass() && secs < 120.0;
  report(1, pass,
         fmt("loss and network gradients vs central differences: "
             "max rel err %.2e over %zu checks, %.1f s (limit 1e-4, 120 s)",
             b.max_rel_err(), b.entries.size(), secs));
}

// ---------------------------------------------------------------------------
// criterion 2: frozen closed-form values of the feature-contrast loss

void criterion_scalar_cases() {
  // D=2, dists (1,1): L = ln(2e-1)/2. The tensor route must agree.
  const std::vector<double> d1 = {1.0, 1.0};
  const double v = logexp_value(d1, 1.0);
  const double v_expected = 0.744940062822375;  // 0.5*ln(2e-1)
  const Tensor x1({2}, {1.0, 1.0});
  const Tensor y1({2}, {0.0, 0.0});
  const double v_tensor = dist_logexp(x1, y1, 1.0).value;

  // D=2, dists (1,0): gradient magnitudes wrt the distances (1/2, 1/(2e))
  const std::vector<double> d2 = {1.0, 0.0};
  const std::vector<double> g = logexp_grad_magnitudes(d2, 1.0);
  const double g0_expected = 0.5;
  const double g1_expected = 0.18393972058572116;  // 1/(2e)

  const double err = std::max({std::abs(v - v_expected),
                               std::abs(v_tensor - v_expected),
                               std::abs(g[0] - g0_expected),
                               std::abs(g[1] - g1_expected)});
  report(2, err <= 1e-12,
         fmt("closed-form loss values (ln(2e-1)/2, 1/2, 1/(2e)): "
             "max deviation %.2e (limit 1e-12)",
             err));
}

// ---------------------------------------------------------------------------
// criterion 3: inequality suite on random distance vectors

void criterion_inequalities() {
  constexpr int kPairs = 100000;
  constexpr int64_t kD = 128;
  constexpr double kSlack = 1e-12;
  RngStream rng(0x1e5, 3);
  int64_t violations = 0;

  std::vector<int64_t> order(kD);
  for (int rep = 0; rep < kPairs; ++rep) {
    Tensor x({kD}), y({kD});
    for (int64_t i = 0; i < kD; ++i) {
      x[i] = rng.normal();
      y[i] = rng.normal();
    }
    const DistResult le = dist_logexp(x, y, 1.0);
    const DistResult l1 = dist_l1(x, y);

    double dmax = 0.0;
    std::vector<double> d(size_t(kD), 0.0);
    for (int64_t i = 0; i < kD; ++i) {
      d[size_t(i)] = std::abs(x[i] - y[i]);
      dmax = std::max(dmax, d[size_t(i)]);
    }
    // sandwich: max_i d_i / D <= L <= mean d
    if (dmax / double(kD) > le.value + kSlack) ++violations;
    if (le.value > l1.value + kSlack) ++violations;

    // larger per-dim distance cannot get a smaller gradient
    std::iota(order.begin(), order.end(), int64_t(0));
    std::sort(order.begin(), order.end(),
              [&](int64_t a, int64_t b) { return d[size_t(a)] < d[size_t(b)]; });
    for (int64_t k = 1; k < kD; ++k) {
      const double lo = std::abs(le.grad_x[order[size_t(k - 1)]]);
      const double hi = std::abs(le.grad_x[order[size_t(k)]]);
      if (hi < lo - kSlack) ++violations;
    }
    // hard cap 1/D per dimension
    for (int64_t i = 0; i < kD; ++i)
      if (std::abs(le.grad_x[i]) > 1.0 / double(kD) + kSlack) ++violations;
  }

  // remainder-term behaviour, checked through the scalar form:
  // monotone decreasing in C, equality with 1/D exactly at C = 0
  RngStream rng2(0x1e5, 4);
  for (int rep = 0; rep < kPairs; ++rep) {
    const double dd = rng2.uniform(0.01, 3.0);
    const double c1 = rng2.uniform(0.0, 10.0);
    const double c2 = rng2.uniform(0.0, 10.0);
    const double lo_c = std::min(c1, c2), hi_c = std::max(c1, c2);
    const double g_lo = logexp_grad_magnitude(dd, lo_c, 1.0, kD);
    const double g_hi = logexp_grad_magnitude(dd, hi_c, 1.0, kD);
    if (g_hi > g_lo + kSlack) ++violations;

    if (std::abs(logexp_grad_magnitude(dd, 0.0, 1.0, kD) - 1.0 / double(kD)) >
        kSlack)
      ++violations;
    const double c_pos = rng2.uniform(1e-4, 10.0);
    if (logexp_grad_magnitude(dd, c_pos, 1.0, kD) >= 1.0 / double(kD))
      ++violations;
  }

  report(3, violations == 0,
         fmt("gradient/bound inequalities on %d random pairs at D=%d: "
             "%lld violations beyond 1e-12",
             kPairs, int(kD), (long long)violations));
}

// ---------------------------------------------------------------------------
// criterion 4: bicubic resampler vs direct kernel-sum oracle

ImageBuffer oracle_resample(const ImageBuffer& src, int ow, int oh) {
  ImageBuffer out(ow, oh);
  const double sx = double(src.width) / ow;
  const double sy = double(src.height) / oh;
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      const double cx = (ox + 0.5) * sx - 0.5;
      const double cy = (oy + 0.5) * sy - 0.5;
      const int bx = int(std::floor(cx));
      const int by = int(std::floor(cy));
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int ky = by - 1; ky <= by + 2; ++ky)
          for (int kx = bx - 1; kx <= bx + 2; ++kx) {
            const double w =
                bicubic_weight(cx - kx) * bicubic_weight(cy - ky);
            const int px = std::clamp(kx, 0, src.width - 1);
            const int py = std::clamp(ky, 0, src.height - 1);
            acc += w * src.at(py, px, c);
          }
        out.at(oy, ox, c) = std::clamp(acc, 0.0, 1.0);
      }
    }
  return out;
}

void criterion_bicubic() {
  RngStream rng(0xb1c, 1);
  double max_err = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    const int sw = 5 + int(rng.uniform_index(44));
    const int sh = 5 + int(rng.uniform_index(44));
    const int ow = 4 + int(rng.uniform_index(53));
    const int oh = 4 + int(rng.uniform_index(53));
    ImageBuffer img(sw, sh);
    for (double& v : img.data) v = rng.uniform(0.0, 1.0);
    const ImageBuffer got = resample_bicubic(img, ow, oh);
    const ImageBuffer want = oracle_resample(img, ow, oh);
    for (size_t i = 0; i < got.data.size(); ++i)
      max_err = std::max(max_err, std::abs(got.data[i] - want.data[i]));
  }

  // constant image stays constant through any resize
  ImageBuffer flat(31, 17);
  for (size_t i = 0; i < flat.data.size(); ++i)
    flat.data[i] = double(i % 3 == 0 ? 0.25 : 0.7);
  const ImageBuffer flat_rs = resample_bicubic(flat, 9, 23);
  double const_err = 0.0;
  for (int y = 0; y < 23; ++y)
    for (int x = 0; x < 9; ++x) {
      const_err = std::max(const_err, std::abs(flat_rs.at(y, x, 0) - 0.25));
      const_err = std::max(const_err, std::abs(flat_rs.at(y, x, 1) - 0.7));
    }

  // same-size resample and full-resolution degrade change nothing
  RngStream rng2(0xb1c, 2);
  ImageBuffer id_img(21, 21);
  for (double& v : id_img.data) v = rng2.uniform(0.0, 1.0);
  const ImageBuffer same = resample_bicubic(id_img, 21, 21);
  const ImageBuffer deg = degrade(id_img, 21);
  double id_err = 0.0;
  for (size_t i = 0; i < id_img.data.size(); ++i) {
    id_err = std::max(id_err, std::abs(same.data[i] - id_img.data[i]));
    id_err = std::max(id_err, std::abs(deg.data[i] - id_img.data[i]));
  }

  const double worst = std::max({max_err, const_err, id_err});
  report(4, worst <= 1e-9,
         fmt("bicubic resample vs kernel-sum oracle on 50 random images "
             "+ constant/identity invariants: max |diff| %.2e (limit 1e-9)",
             worst));
}

// ---------------------------------------------------------------------------
// criterion 5: tiered resolution sampler frequencies

void criterion_sampler() {
  AugmentationPlan plan;
  plan.input_size = 56;
  plan.entries = {{7, 1.0}, {14, 1.0}, {20, 2.0}};
  plan.validate();

  RngStream rng(0x5a9, 9);
  int n7 = 0, n14 = 0, n20 = 0;
  constexpr int kDraws = 10000;
  for (int i = 0; i < kDraws; ++i) {
    const int r = sample_resolution(plan, rng);
    if (r == 7) ++n7;
    else if (r == 14) ++n14;
    else if (r == 20) ++n20;
  }
  const double f7 = double(n7) / kDraws;
  const double f14 = double(n14) / kDraws;
  const double f20 = double(n20) / kDraws;
  const bool pass = n7 + n14 + n20 == kDraws &&
                    std::abs(f7 - 0.25) <= 0.02 &&
                    std::abs(f14 - 0.25) <= 0.02 &&
                    std::abs(f20 - 0.50) <= 0.02;
  report(5, pass,
         fmt("7:14:20 = 1:1:2 sampler over %d draws: frequencies "
             "%.4f/%.4f/%.4f (want 0.25/0.25/0.50 +- 0.02)",
             kDraws, f7, f14, f20));
}

// ---------------------------------------------------------------------------
// criterion 6: mean SSIM rises with degradation resolution

void criterion_ssim_monotone() {
  DatasetSpec spec;
  spec.n_identities = 25;
  spec.images_per_identity = 4;
  spec.input_size = 56;
  spec.seed = 0x551;
  const LabeledDataset ds = generate_dataset(spec);

  const std::vector<int> rs = {7, 14, 20, 28, 56};
  std::vector<double> means;
  for (int r : rs) {
    double acc = 0.0;
    for (const ImageBuffer& img : ds.images)
      acc += ssim(degrade(img, r), img);
    means.push_back(acc / double(ds.images.size()));
  }
  bool increasing = true;
  for (size_t i = 1; i < means.size(); ++i)
    if (!(means[i] > means[i - 1])) increasing = false;
  report(6, increasing,
         fmt("mean SSIM over a 100-image probe at 7/14/20/28/56 px: "
             "%.4f < %.4f < %.4f < %.4f < %.4f",
             means[0], means[1], means[2], means[3], means[4]));
}

// ---------------------------------------------------------------------------
// criteria 7-10: the desk-scale training battery

// Thresholds frozen from the pilot battery of the committed schedule
// (three seeds x three variants, dataset seed 0). Directions are the
// contract; margins record the pilot floor with a little headroom.
constexpr double kLrGapMinPoints = 8.0;    // (maug-logexp - baseline) @ 14 px
constexpr double kHrGapMaxPoints = 3.0;    // (baseline - maug-logexp) @ 56 px
constexpr double kTrainBudgetSecs = 3600;  // six criterion-7 trainings

struct BatteryRun {
  std::string variant;  // "baseline", "maug-logexp", "maug-l1"
  uint64_t seed = 0;
  fs::path dir;
  double train_secs = 0.0;
  double hr_acc = 0.0;
  double lr14_acc = 0.0;
  double dimerr14 = 0.0;
  int grad_argmax_px = 0;
};

NetworkConfig battery_network() {
  NetworkConfig net;
  net.channel_widths = {16, 32, 64, 64};
  net.embedding_dim = 64;
  net.input_size = 56;
  return net;
}

TrainConfig battery_train_config(const std::string& variant, uint64_t seed) {
  TrainConfig cfg;
  if (variant == "baseline") {
    cfg.plan.entries = {{56, 1.0}};
    cfg.loss.lambda = 0.0;
  } else {
    cfg.plan.entries = {{7, 1.0}, {14, 1.0}, {20, 2.0}};
    cfg.loss.lambda = 1.0;
    cfg.loss.dist_kind =
        variant == "maug-l1" ? DistKind::l1 : DistKind::logexp;
    cfg.loss.p = 1.0;
  }
  cfg.plan.input_size = 56;
  cfg.epochs = 34;
  cfg.batch_size = 32;
  cfg.lr = 0.02;
  cfg.lr_milestones = {20, 27};
  cfg.warmup_epochs = 2;
  cfg.momentum = 0.9;
  cfg.weight_decay = 5e-4;
  cfg.flip_prob = 0.5;
  cfg.seed = seed;
  return cfg;
}

BatteryRun run_battery_model(const LabeledDataset& ds,
                             const std::string& variant, uint64_t seed,
                             const fs::path& root) {
  BatteryRun run;
  run.variant = variant;
  run.seed = seed;
  run.dir = root / (variant + "_s" + std::to_string(seed));

  const TrainConfig cfg = battery_train_config(variant, seed);
  const NetworkConfig net_cfg = battery_network();
  note(fmt("training %s seed %llu", variant.c_str(),
           (unsigned long long)seed));
  const auto t0 = clock_type::now();
  const TrainResult res = train(cfg, net_cfg, ds, run.dir);
  run.train_secs = seconds_since(t0);

  const Checkpoint ckpt = load_checkpoint(res.final_checkpoint);
  const EmbedNetwork net(ckpt.config);

  const VerificationPairs pairs = make_pairs(ds, 500, seed);
  const std::vector<int> acc_rs = {14, 56};
  const SweepReport acc = resolution_accuracy_sweep(net, ckpt, ds, pairs,
                                                    acc_rs);
  run.lr14_acc = acc.values[0];
  run.hr_acc = acc.values[1];

  std::vector<const ImageBuffer*> probe;
  for (int i : ds.eval_indices()) probe.push_back(&ds.images[size_t(i)]);
  run.dimerr14 = per_dim_error(net, ckpt, probe, 14).overall_mean;

  const std::vector<int> train_idx = ds.train_indices();
  std::vector<const ImageBuffer*> batch;
  std::vector<int> labels;
  for (size_t i = 0; i < 32 && i < train_idx.size(); ++i) {
    batch.push_back(&ds.images[size_t(train_idx[i])]);
    labels.push_back(ds.labels[size_t(train_idx[i])]);
  }
  const std::vector<int> sweep_rs = {7, 14, 20, 28, 56};
  const SweepReport gn =
      gradient_norm_sweep(net, ckpt, batch, labels, sweep_rs, cfg.loss);
  size_t arg = 0;
  for (size_t i = 1; i < gn.values.size(); ++i)
    if (gn.values[i] > gn.values[arg]) arg = i;
  run.grad_argmax_px = sweep_rs[arg];

  note(fmt("%s seed %llu: %.0f s, hr %.3f, 14px %.3f, dimerr14 %.4f, "
           "grad argmax %d px",
           variant.c_str(), (unsigned long long)seed, run.train_secs,
           run.hr_acc, run.lr14_acc, run.dimerr14, run.grad_argmax_px));
  return run;
}

void criteria_battery(const fs::path& artifacts) {
  DatasetSpec spec;
  spec.n_identities = 50;
  spec.images_per_identity = 40;
  spec.input_size = 56;
  spec.seed = 0;
  note("generating the 50x40 battery dataset");
  const LabeledDataset ds = generate_dataset(spec);

  const std::vector<uint64_t> seeds = {0, 1, 2};
  std::vector<BatteryRun> base, logexp, l1;
  for (uint64_t s : seeds) {
    base.push_back(run_battery_model(ds, "baseline", s, artifacts));
    logexp.push_back(run_battery_model(ds, "maug-logexp", s, artifacts));
    l1.push_back(run_battery_model(ds, "maug-l1", s, artifacts));
  }

  // criterion 7: low-resolution gain without a high-resolution price
  bool c7 = true;
  double min_gap = 1e9, max_hr_gap = -1e9, c7_secs = 0.0;
  for (size_t i = 0; i < seeds.size(); ++i) {
    const double gap = 100.0 * (logexp[i].lr14_acc - base[i].lr14_acc);
    const double hr_gap = 100.0 * (base[i].hr_acc - logexp[i].hr_acc);
    min_gap = std::min(min_gap, gap);
    max_hr_gap = std::max(max_hr_gap, hr_gap);
    c7_secs += base[i].train_secs + logexp[i].train_secs;
    if (gap < kLrGapMinPoints || hr_gap > kHrGapMaxPoints) c7 = false;
  }
  if (c7_secs > kTrainBudgetSecs) c7 = false;
  report(7, c7,
         fmt("augmented contrastive model vs plain-classification baseline: "
             "14 px gain >= %.0f pts on every seed (min %.1f), HR cost <= "
             "%.0f pts (max %.1f), %.0f s train budget (limit %.0f)",
             kLrGapMinPoints, min_gap, kHrGapMaxPoints, max_hr_gap, c7_secs,
             kTrainBudgetSecs));

  // criterion 8: distance-loss shape shows up in per-dimension error
  bool c8 = true;
  std::string c8_vals;
  for (size_t i = 0; i < seeds.size(); ++i) {
    if (!(logexp[i].dimerr14 < l1[i].dimerr14)) c8 = false;
    c8_vals += fmt("%s%.4f<%.4f", i ? ", " : "", logexp[i].dimerr14,
                   l1[i].dimerr14);
  }
  report(8, c8,
         fmt("mean per-dim |f_HR - f_LR| at 14 px, logexp vs l1 training, "
             "per seed: %s",
             c8_vals.c_str()));

  // criterion 9: augmentation moves the gradient-norm peak down
  bool c9 = true;
  std::string c9_vals;
  for (size_t i = 0; i < seeds.size(); ++i) {
    if (logexp[i].grad_argmax_px > base[i].grad_argmax_px) c9 = false;
    c9_vals += fmt("%s%d<=%d", i ? ", " : "", logexp[i].grad_argmax_px,
                   base[i].grad_argmax_px);
  }
  report(9, c9,
         fmt("gradient-norm sweep argmax resolution, augmented vs baseline, "
             "per seed: %s px",
             c9_vals.c_str()));

  // criterion 10: the battery is bitwise reproducible
  bool c10 = true;
  std::string c10_detail;
  for (const char* variant : {"baseline", "maug-logexp"}) {
    const fs::path redo = artifacts / (std::string(variant) + "_s0_rerun");
    note(fmt("retraining %s seed 0 for the determinism check", variant));
    train(battery_train_config(variant, 0), battery_network(), ds, redo);
    const fs::path first = artifacts / (std::string(variant) + "_s0");
    for (const char* f :
         {"train_log.jsonl", "train_log.csv", "checkpoint_epoch20.ckpt",
          "checkpoint_epoch27.ckpt", "checkpoint_final.ckpt"}) {
      if (slurp(first / f) != slurp(redo / f)) {
        c10 = false;
        c10_detail += fmt(" %s/%s differs;", variant, f);
      }
    }
  }
  report(10, c10,
         fmt("identical-seed retraining reproduces logs and checkpoints "
             "byte for byte%s",
             c10 ? " (baseline, maug-logexp at seed 0)" : c10_detail.c_str()));
}

}  // namespace

int main() {
  const fs::path artifacts = fs::current_path() / "acceptance_artifacts";
  fs::create_directories(artifacts);

  criterion_gradients();
  criterion_scalar_cases();
  criterion_inequalities();
  criterion_bicubic();
  criterion_sampler();
  criterion_ssim_monotone();
  criteria_battery(artifacts);

  return g_failures == 0 ? 0 : 1;
}
