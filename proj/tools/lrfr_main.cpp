#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lrfr/analysis.hpp"
#include "lrfr/checkpoint.hpp"
#include "lrfr/common.hpp"
#include "lrfr/config.hpp"
#include "lrfr/datagen.hpp"
#include "lrfr/gradcheck.hpp"
#include "lrfr/image.hpp"
#include "lrfr/model.hpp"
#include "lrfr/png_io.hpp"
#include "lrfr/train.hpp"

namespace fs = std::filesystem;
using namespace lrfr;

namespace {

struct Options {
  std::string config;
  std::string out = ".";
  int64_t seed = -1;  // negative: no override
  std::string checkpoint;
  std::string model_id;
  std::string resolutions;  // CSV, empty: default ladder
  int pairs = 200;
  int resolution = 0;  // 0: native input size
  int probe = 200;     // probe-set cap, 0: all eval images
  int components = 2;
  int seeds = 100;
  double tolerance = 1e-4;
  std::string image;
  std::string augment_out;
};

uint64_t effective_seed(const Options& o, uint64_t fallback) {
  return o.seed >= 0 ? uint64_t(o.seed) : fallback;
}

std::string model_id_of(const Options& o) {
  if (!o.model_id.empty()) return o.model_id;
  return fs::path(o.checkpoint).stem().string();
}

void ensure_out(const Options& o) { fs::create_directories(o.out); }

LabeledDataset acquire_dataset(const RunConfig& run, int input_size) {
  if (!run.data_dir.empty()) return load_dataset(run.data_dir, input_size);
  check(run.data.input_size == input_size, "config: [data] input_size ",
        run.data.input_size, " does not match the model input size ",
        input_size);
  return generate_dataset(run.data);
}

int resolved_resolution(const Options& o, int input_size) {
  const int r = o.resolution == 0 ? input_size : o.resolution;
  check(r >= 1 && r <= input_size, "--resolution must be in [1, ", input_size,
        "], got ", r);
  return r;
}

std::vector<int> resolved_resolutions(const Options& o, int input_size) {
  std::vector<int> rs;
  if (o.resolutions.empty()) {
    for (int r : {7, 14, 20, 28, 56})
      if (r < input_size) rs.push_back(r);
    rs.push_back(input_size);
  } else {
    rs = parse_int_list(o.resolutions);
    check(!rs.empty(), "--resolutions: empty list");
    for (int r : rs)
      check(r >= 1 && r <= input_size, "--resolutions: ", r,
            " outside [1, ", input_size, "]");
    std::sort(rs.begin(), rs.end());
    rs.erase(std::unique(rs.begin(), rs.end()), rs.end());
  }
  return rs;
}

std::vector<const ImageBuffer*> probe_set(const LabeledDataset& ds,
                                          int cap) {
  const std::vector<int> eval = ds.eval_indices();
  check(!eval.empty(), "dataset has no eval images");
  const size_t n =
      cap > 0 ? std::min(size_t(cap), eval.size()) : eval.size();
  std::vector<const ImageBuffer*> probe;
  probe.reserve(n);
  for (size_t i = 0; i < n; ++i) probe.push_back(&ds.images[size_t(eval[i])]);
  return probe;
}

void run_gen_data(const Options& o) {
  RunConfig run = load_run_config(o.config);
  run.data.seed = effective_seed(o, run.data.seed);
  ensure_out(o);
  const LabeledDataset ds = generate_dataset(run.data);
  save_dataset(ds, o.out);
  std::cout << "wrote " << ds.images.size() << " images, "
            << ds.n_identities() << " identities ("
            << ds.eval_indices().size() << " eval) to " << o.out << "\n";
}

void run_train(const Options& o) {
  RunConfig run = load_run_config(o.config);
  run.train.seed = effective_seed(o, run.train.seed);
  ensure_out(o);
  const LabeledDataset ds = acquire_dataset(run, run.network.input_size);
  const TrainResult result = train(run.train, run.network, ds, o.out);
  const fs::path jsonl = fs::path(o.out) / "train_log.jsonl";
  const fs::path csv = fs::path(o.out) / "train_log.csv";
  result.log.write_jsonl(jsonl);
  result.log.write_csv(csv);
  std::cout << "trained " << run.train.epochs << " epochs, "
            << result.log.records.size() << " steps, seed "
            << run.train.seed << "\n";
  if (!result.log.records.empty())
    std::cout << "final l_all " << result.log.records.back().l_all << "\n";
  std::cout << "checkpoint " << result.final_checkpoint.string() << "\n"
            << "log " << jsonl.string() << "\n";
}

void run_eval(const Options& o) {
  const RunConfig run = load_run_config(o.config);
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const EmbedNetwork net(ckpt.config);
  const LabeledDataset ds = acquire_dataset(run, ckpt.config.input_size);
  const uint64_t seed = effective_seed(o, run.train.seed);
  const VerificationPairs pairs = make_pairs(ds, o.pairs, seed);
  const int r = resolved_resolution(o, ckpt.config.input_size);
  const std::vector<int> rs = {r};
  SweepReport report = resolution_accuracy_sweep(net, ckpt, ds, pairs, rs);
  report.model_id = model_id_of(o);
  report.seed = seed;
  ensure_out(o);
  const fs::path csv = report_path(o.out, "eval", report.model_id, seed, "csv");
  report.write_csv(csv);
  report.write_json(report_path(o.out, "eval", report.model_id, seed, "json"));
  std::cout << "pairs " << pairs.pairs.size() << ", resolution " << r
            << ", accuracy " << report.values[0] << "\n"
            << "report " << csv.string() << "\n";
}

void run_sweep_accuracy(const Options& o) {
  const RunConfig run = load_run_config(o.config);
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const EmbedNetwork net(ckpt.config);
  const LabeledDataset ds = acquire_dataset(run, ckpt.config.input_size);
  const uint64_t seed = effective_seed(o, run.train.seed);
  const VerificationPairs pairs = make_pairs(ds, o.pairs, seed);
  const std::vector<int> rs = resolved_resolutions(o, ckpt.config.input_size);
  SweepReport report = resolution_accuracy_sweep(net, ckpt, ds, pairs, rs);
  report.model_id = model_id_of(o);
  report.seed = seed;
  ensure_out(o);
  const fs::path csv =
      report_path(o.out, "accuracy", report.model_id, seed, "csv");
  report.write_csv(csv);
  report.write_json(
      report_path(o.out, "accuracy", report.model_id, seed, "json"));
  for (size_t i = 0; i < rs.size(); ++i)
    std::cout << rs[i] << " px: " << report.values[i] << "\n";
  std::cout << "report " << csv.string() << "\n";
}

void run_sweep_gradnorm(const Options& o) {
  const RunConfig run = load_run_config(o.config);
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const EmbedNetwork net(ckpt.config);
  const LabeledDataset ds = acquire_dataset(run, ckpt.config.input_size);
  const uint64_t seed = effective_seed(o, run.train.seed);
  const std::vector<int> rs = resolved_resolutions(o, ckpt.config.input_size);

  // Fixed probe batch: the first train images, capped at batch_size.
  const std::vector<int> train_idx = ds.train_indices();
  check(!train_idx.empty(), "dataset has no train images");
  const size_t bsz =
      std::min(size_t(run.train.batch_size), train_idx.size());
  std::vector<const ImageBuffer*> batch;
  std::vector<int> labels;
  for (size_t i = 0; i < bsz; ++i) {
    batch.push_back(&ds.images[size_t(train_idx[i])]);
    labels.push_back(ds.labels[size_t(train_idx[i])]);
  }

  SweepReport report =
      gradient_norm_sweep(net, ckpt, batch, labels, rs, run.train.loss);
  report.model_id = model_id_of(o);
  report.seed = seed;
  ensure_out(o);
  const fs::path csv =
      report_path(o.out, "gradnorm", report.model_id, seed, "csv");
  report.write_csv(csv);
  report.write_json(
      report_path(o.out, "gradnorm", report.model_id, seed, "json"));
  for (size_t i = 0; i < rs.size(); ++i)
    std::cout << rs[i] << " px: " << report.values[i] << "\n";
  std::cout << "report " << csv.string() << "\n";
}

void run_sim_hist(const Options& o) {
  const RunConfig run = load_run_config(o.config);
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const EmbedNetwork net(ckpt.config);
  const LabeledDataset ds = acquire_dataset(run, ckpt.config.input_size);
  const uint64_t seed = effective_seed(o, run.train.seed);
  const VerificationPairs pairs = make_pairs(ds, o.pairs, seed);
  const int r = resolved_resolution(o, ckpt.config.input_size);
  SimilarityHistogram hist = similarity_distributions(net, ckpt, ds, pairs, r);
  hist.model_id = model_id_of(o);
  hist.seed = seed;
  ensure_out(o);
  const fs::path csv =
      report_path(o.out, "simhist", hist.model_id, seed, "csv");
  hist.write_csv(csv);
  hist.write_json(report_path(o.out, "simhist", hist.model_id, seed, "json"));
  std::cout << "resolution " << r << ", " << hist.n_pos << " positive / "
            << hist.n_neg << " negative pairs, overlap " << hist.overlap
            << "\n"
            << "report " << csv.string() << "\n";
}

void run_dim_error(const Options& o) {
  const RunConfig run = load_run_config(o.config);
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const EmbedNetwork net(ckpt.config);
  const LabeledDataset ds = acquire_dataset(run, ckpt.config.input_size);
  const uint64_t seed = effective_seed(o, run.train.seed);
  const int r = resolved_resolution(o, ckpt.config.input_size);
  const std::vector<const ImageBuffer*> probe = probe_set(ds, o.probe);
  DimErrorReport report = per_dim_error(net, ckpt, probe, r);
  report.model_id = model_id_of(o);
  report.seed = seed;
  ensure_out(o);
  const fs::path csv =
      report_path(o.out, "dimerror", report.model_id, seed, "csv");
  report.write_csv(csv);
  report.write_json(
      report_path(o.out, "dimerror", report.model_id, seed, "json"));
  std::cout << "resolution " << r << ", " << probe.size()
            << " probe images, mean per-dim error " << report.overall_mean
            << "\n"
            << "report " << csv.string() << "\n";
}

void run_pca(const Options& o) {
  const RunConfig run = load_run_config(o.config);
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const EmbedNetwork net(ckpt.config);
  const LabeledDataset ds = acquire_dataset(run, ckpt.config.input_size);
  const uint64_t seed = effective_seed(o, run.train.seed);
  std::vector<int> rs;
  if (o.resolutions.empty()) {
    for (int r : {7, 14, 28})
      if (r < ckpt.config.input_size) rs.push_back(r);
    rs.push_back(ckpt.config.input_size);
  } else {
    rs = resolved_resolutions(o, ckpt.config.input_size);
  }
  const std::vector<const ImageBuffer*> probe = probe_set(ds, o.probe);
  PcaReport report = pca_by_resolution(net, ckpt, probe, rs, o.components);
  report.model_id = model_id_of(o);
  report.seed = seed;
  ensure_out(o);
  const fs::path csv = report_path(o.out, "pca", report.model_id, seed, "csv");
  report.write_csv(csv);
  report.write_json(report_path(o.out, "pca", report.model_id, seed, "json"));
  std::cout << probe.size() << " probe images x " << rs.size()
            << " resolutions, " << o.components << " components\n";
  for (size_t i = 0; i < report.pca.eigenvalues.size(); ++i)
    std::cout << "eigenvalue " << i + 1 << ": " << report.pca.eigenvalues[i]
              << "\n";
  std::cout << "report " << csv.string() << "\n";
}

void run_augment(const Options& o) {
  const ImageBuffer img = read_png(o.image);
  check(o.resolution >= 1, "--resolution is required and must be >= 1");
  const ImageBuffer degraded = degrade(img, o.resolution);
  std::cout << "resolution " << o.resolution << ", tier "
            << tier_name(classify_difficulty(o.resolution)) << ", ssim "
            << ssim(img, degraded) << "\n";
  if (!o.augment_out.empty()) {
    write_png(o.augment_out, degraded);
    std::cout << "wrote " << o.augment_out << "\n";
  }
}

// "l1#17/x" -> "l1/x": fold the per-seed repetitions of each check into
// one table row.
std::string family(const std::string& name) {
  const size_t hash = name.find('#');
  if (hash == std::string::npos) return name;
  std::string f = name.substr(0, hash);
  const size_t slash = name.find('/', hash);
  if (slash != std::string::npos) f += name.substr(slash);
  return f;
}

int run_grad_check(const Options& o) {
  const Battery battery =
      gradient_battery(effective_seed(o, 0), o.seeds, o.tolerance);

  std::map<std::string, FdEntry> agg;
  for (const FdEntry& e : battery.entries) {
    FdEntry& a = agg[family(e.name)];
    a.max_rel_err = std::max(a.max_rel_err, e.max_rel_err);
    a.max_abs_err = std::max(a.max_abs_err, e.max_abs_err);
  }
  std::cout << std::left << std::setw(26) << "check" << std::setw(14)
            << "max_rel_err" << "max_abs_err\n";
  std::cout << std::scientific << std::setprecision(3);
  for (const auto& [name, e] : agg)
    std::cout << std::setw(26) << name << std::setw(14) << e.max_rel_err
              << e.max_abs_err << "\n";
  std::cout.unsetf(std::ios::scientific);

  const bool ok = battery.pass();
  std::cout << battery.entries.size() << " checks over " << o.seeds
            << " seeds, tolerance " << battery.tolerance << ": "
            << (ok ? "PASS" : "FAIL") << "\n";
  if (!ok) {
    const FdEntry* w = battery.worst();
    std::cout << "worst: " << w->name << " rel err " << w->max_rel_err
              << " at index " << w->worst_index << "\n";
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  int rc = 0;

  CLI::App app{"Low-resolution face verification pipeline"};
  app.require_subcommand(1);

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "run config file")
        ->required()
        ->check(CLI::ExistingFile);
  };
  auto add_out = [&](CLI::App* sub) {
    sub->add_option("--out", o.out, "output directory (created if absent)");
  };
  auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "seed override");
  };
  auto add_checkpoint = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", o.checkpoint, "model checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--model-id", o.model_id,
                    "report tag (default: checkpoint file stem)");
  };
  auto add_pairs = [&](CLI::App* sub) {
    sub->add_option("--pairs", o.pairs, "verification pair count")
        ->check(CLI::PositiveNumber);
  };
  auto add_resolutions = [&](CLI::App* sub) {
    sub->add_option("--resolutions", o.resolutions,
                    "CSV resolution list (default 7,14,20,28,56,native)");
  };
  auto add_resolution = [&](CLI::App* sub) {
    sub->add_option("--resolution", o.resolution,
                    "degradation resolution in px (0 = native)");
  };
  auto add_probe = [&](CLI::App* sub) {
    sub->add_option("--probe", o.probe,
                    "probe image cap, 0 = all eval images");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "render a labeled dataset");
  add_config(gen);
  add_out(gen);
  add_seed(gen);
  gen->callback([&] { run_gen_data(o); });

  CLI::App* tr = app.add_subcommand("train", "train an embedding model");
  add_config(tr);
  add_out(tr);
  add_seed(tr);
  tr->callback([&] { run_train(o); });

  CLI::App* ev = app.add_subcommand("eval", "verification accuracy");
  add_config(ev);
  add_checkpoint(ev);
  add_out(ev);
  add_seed(ev);
  add_pairs(ev);
  add_resolution(ev);
  ev->callback([&] { run_eval(o); });

  CLI::App* swa = app.add_subcommand("sweep-accuracy",
                                     "accuracy across resolutions");
  add_config(swa);
  add_checkpoint(swa);
  add_out(swa);
  add_seed(swa);
  add_pairs(swa);
  add_resolutions(swa);
  swa->callback([&] { run_sweep_accuracy(o); });

  CLI::App* swg = app.add_subcommand("sweep-gradnorm",
                                     "gradient norm across resolutions");
  add_config(swg);
  add_checkpoint(swg);
  add_out(swg);
  add_seed(swg);
  add_resolutions(swg);
  swg->callback([&] { run_sweep_gradnorm(o); });

  CLI::App* sh = app.add_subcommand(
      "sim-hist", "genuine/impostor similarity histograms");
  add_config(sh);
  add_checkpoint(sh);
  add_out(sh);
  add_seed(sh);
  add_pairs(sh);
  add_resolution(sh);
  sh->callback([&] { run_sim_hist(o); });

  CLI::App* de = app.add_subcommand("dim-error",
                                    "per-dimension embedding error");
  add_config(de);
  add_checkpoint(de);
  add_out(de);
  add_seed(de);
  add_resolution(de);
  add_probe(de);
  de->callback([&] { run_dim_error(o); });

  CLI::App* pc = app.add_subcommand("pca",
                                    "embedding PCA across resolutions");
  add_config(pc);
  add_checkpoint(pc);
  add_out(pc);
  add_seed(pc);
  add_resolutions(pc);
  add_probe(pc);
  pc->add_option("--components", o.components, "principal component count")
      ->check(CLI::PositiveNumber);
  pc->callback([&] { run_pca(o); });

  CLI::App* au = app.add_subcommand("augment",
                                    "degrade one image and report ssim");
  au->add_option("image", o.image, "input PNG")
      ->required()
      ->check(CLI::ExistingFile);
  au->add_option("--resolution", o.resolution, "degradation resolution in px")
      ->required();
  au->add_option("--out", o.augment_out, "write the degraded PNG here");
  au->callback([&] { run_augment(o); });

  CLI::App* gc = app.add_subcommand("grad-check",
                                    "finite-difference gradient battery");
  add_seed(gc);
  gc->add_option("--seeds", o.seeds, "repetition count")
      ->check(CLI::PositiveNumber);
  gc->add_option("--tolerance", o.tolerance, "max relative error");
  gc->callback([&] { rc = run_grad_check(o); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
