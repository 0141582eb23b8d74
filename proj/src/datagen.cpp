#include "lrfr/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <unordered_set>

#include "lrfr/common.hpp"
#include "lrfr/parallel.hpp"
#include "lrfr/png_io.hpp"
#include "lrfr/rng.hpp"

namespace lrfr {
namespace {

constexpr double kPi = std::numbers::pi;

// Stream namespaces under one dataset seed: even ids for identity
// patterns, odd for per-sample perturbations, high constants elsewhere.
uint64_t pattern_stream(int identity) { return uint64_t(identity) * 2; }
uint64_t sample_stream(const DatasetSpec& spec, int identity, int image) {
  return uint64_t(identity) * spec.images_per_identity * 2 +
         uint64_t(image) * 2 + 1;
}

struct Blob {
  double cx, cy, inv2s2;
  double amp[3];
};
struct Wave {
  double fx, fy, phase;
  double amp[3];
};

struct IdentityPattern {
  std::vector<Blob> blobs;
  std::vector<Wave> waves;

  void eval(double x, double y, double out[3]) const {
    out[0] = 0.0;
    out[1] = 0.0;
    out[2] = 0.0;
    for (const Blob& b : blobs) {
      const double dx = x - b.cx;
      const double dy = y - b.cy;
      const double g = std::exp(-(dx * dx + dy * dy) * b.inv2s2);
      out[0] += b.amp[0] * g;
      out[1] += b.amp[1] * g;
      out[2] += b.amp[2] * g;
    }
    for (const Wave& w : waves) {
      const double v = std::sin(w.fx * x + w.fy * y + w.phase);
      out[0] += w.amp[0] * v;
      out[1] += w.amp[1] * v;
      out[2] += w.amp[2] * v;
    }
  }
};

// The strong identity signal is a set of oriented fine gratings
// (wavelength a few px). Their orientation/frequency energy is easy for
// a pooled conv net to read at full resolution, and downsampling below
// the grating wavelength aliases them into phase-dependent moire that
// carries no identity. A weaker layer of coarse blobs and low-frequency
// waves survives degradation; it separates identities too, but only
// once the per-image low-frequency nuisance (see render_sample) has
// been averaged away.
IdentityPattern make_pattern(const DatasetSpec& spec, int identity) {
  RngStream rng(spec.seed, pattern_stream(identity));
  IdentityPattern p;
  const double s = spec.input_size;
  const int n_fine_blobs = 8;
  const int n_coarse_blobs = 5;
  p.blobs.resize(size_t(n_fine_blobs + n_coarse_blobs));
  for (int i = 0; i < n_fine_blobs + n_coarse_blobs; ++i) {
    Blob& b = p.blobs[size_t(i)];
    b.cx = rng.uniform(0.08, 0.92) * s;
    b.cy = rng.uniform(0.08, 0.92) * s;
    const bool fine = i < n_fine_blobs;
    const double sigma =
        fine ? rng.uniform(1.5, 2.5) : rng.uniform(7.0, 16.0);
    b.inv2s2 = 1.0 / (2.0 * sigma * sigma);
    const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
    for (double& a : b.amp)
      a = sign * (fine ? rng.uniform(0.15, 0.30) : rng.uniform(0.06, 0.13));
  }
  const int n_fine_waves = 4;
  const int n_coarse_waves = 3;
  p.waves.resize(size_t(n_fine_waves + n_coarse_waves));
  for (int i = 0; i < n_fine_waves; ++i) {
    Wave& w = p.waves[size_t(i)];
    const double angle = rng.uniform(0.0, kPi);
    const double cycles = rng.uniform(9.0, 16.0);
    w.fx = std::cos(angle) * 2.0 * kPi * cycles / s;
    w.fy = std::sin(angle) * 2.0 * kPi * cycles / s;
    w.phase = rng.uniform(0.0, 2.0 * kPi);
    const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
    for (double& a : w.amp) a = sign * rng.uniform(0.15, 0.26);
  }
  for (int i = n_fine_waves; i < n_fine_waves + n_coarse_waves; ++i) {
    Wave& w = p.waves[size_t(i)];
    w.fx = rng.uniform(-2.5, 2.5) * 2.0 * kPi / s;
    w.fy = rng.uniform(-2.5, 2.5) * 2.0 * kPi / s;
    w.phase = rng.uniform(0.0, 2.0 * kPi);
    const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
    for (double& a : w.amp) a = sign * rng.uniform(0.04, 0.08);
  }
  return p;
}

ImageBuffer render_sample(const IdentityPattern& p, const DatasetSpec& spec,
                          RngStream& rng) {
  const double theta =
      rng.uniform(-spec.rotation_deg, spec.rotation_deg) * kPi / 180.0;
  const double tx = rng.uniform(-spec.translation_px, spec.translation_px);
  const double ty = rng.uniform(-spec.translation_px, spec.translation_px);

  // Low-frequency nuisance, re-drawn per image in image coordinates:
  // brightness, a tilt plane and one broad blob. It corrupts exactly the
  // coarse band the identity's weak cues live in, so coarse features
  // only become reliable when training makes them so.
  const int n = spec.input_size;
  const double base =
      0.5 + rng.uniform(-spec.brightness_delta, spec.brightness_delta);
  const double gx = rng.uniform(-0.15, 0.15);
  const double gy = rng.uniform(-0.15, 0.15);
  const double ncx = rng.uniform(0.15, 0.85) * n;
  const double ncy = rng.uniform(0.15, 0.85) * n;
  const double nsigma = rng.uniform(9.0, 18.0);
  const double ninv2s2 = 1.0 / (2.0 * nsigma * nsigma);
  const double namp =
      (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.06, 0.14);

  ImageBuffer img(n, n);
  const double c = (n - 1) / 2.0;
  const double ct = std::cos(theta);
  const double st = std::sin(theta);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double dx = x - c;
      const double dy = y - c;
      const double sx = c + ct * dx + st * dy - tx;
      const double sy = c - st * dx + ct * dy - ty;
      double v[3];
      p.eval(sx, sy, v);
      const double ndx = x - ncx;
      const double ndy = y - ncy;
      const double floor = base + gx * (x / (n - 1.0) - 0.5) +
                           gy * (y / (n - 1.0) - 0.5) +
                           namp * std::exp(-(ndx * ndx + ndy * ndy) * ninv2s2);
      for (int ch = 0; ch < 3; ++ch)
        img.at(y, x, ch) = std::clamp(v[ch] + floor, 0.0, 1.0);
    }
  }
  return img;
}

int eval_count_for(int n_images) {
  if (n_images < 2) return 0;
  return std::clamp(n_images / 4, 1, n_images - 1);
}

void tag_eval_split(LabeledDataset& ds) {
  ds.is_eval.assign(ds.images.size(), 0);
  // Images of one identity are contiguous and ordered; tag the tail.
  size_t start = 0;
  while (start < ds.images.size()) {
    size_t end = start;
    while (end < ds.images.size() && ds.labels[end] == ds.labels[start]) ++end;
    const int n = int(end - start);
    for (int i = n - eval_count_for(n); i < n; ++i)
      ds.is_eval[start + size_t(i)] = 1;
    start = end;
  }
}

std::string identity_dir_name(int label) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "id%04d", label);
  return buf;
}

}  // namespace

void DatasetSpec::validate() const {
  check(n_identities >= 2, "dataset spec: need >= 2 identities, got ",
        n_identities);
  check(images_per_identity >= 2,
        "dataset spec: need >= 2 images per identity, got ",
        images_per_identity);
  check(input_size >= 8, "dataset spec: input size too small: ", input_size);
  check(translation_px >= 0 && rotation_deg >= 0 && brightness_delta >= 0,
        "dataset spec: perturbation magnitudes must be non-negative");
}

std::vector<int> LabeledDataset::train_indices() const {
  std::vector<int> out;
  for (size_t i = 0; i < images.size(); ++i)
    if (!is_eval[i]) out.push_back(int(i));
  return out;
}

std::vector<int> LabeledDataset::eval_indices() const {
  std::vector<int> out;
  for (size_t i = 0; i < images.size(); ++i)
    if (is_eval[i]) out.push_back(int(i));
  return out;
}

LabeledDataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  LabeledDataset ds;
  ds.input_size = spec.input_size;
  const int total = spec.n_identities * spec.images_per_identity;
  ds.images.resize(size_t(total));
  ds.labels.resize(size_t(total));
  ds.identity_names.resize(size_t(spec.n_identities));
  for (int id = 0; id < spec.n_identities; ++id)
    ds.identity_names[size_t(id)] = identity_dir_name(id);

  parallel_for(spec.n_identities, [&](int64_t id) {
    const IdentityPattern pattern = make_pattern(spec, int(id));
    for (int img = 0; img < spec.images_per_identity; ++img) {
      RngStream rng(spec.seed, sample_stream(spec, int(id), img));
      const size_t slot = size_t(id) * spec.images_per_identity + size_t(img);
      ds.images[slot] = render_sample(pattern, spec, rng);
      ds.labels[slot] = int(id);
    }
  });
  tag_eval_split(ds);
  return ds;
}

void save_dataset(const LabeledDataset& ds, const std::filesystem::path& dir) {
  check(!ds.images.empty(), "save_dataset: empty dataset");
  std::filesystem::create_directories(dir);
  std::string manifest;
  std::vector<int> seq(ds.identity_names.size(), 0);
  for (size_t i = 0; i < ds.images.size(); ++i) {
    const std::string& identity = ds.identity_names[size_t(ds.labels[i])];
    const std::filesystem::path sub = dir / identity;
    std::filesystem::create_directories(sub);
    char name[16];
    std::snprintf(name, sizeof(name), "img%04d.png",
                  seq[size_t(ds.labels[i])]++);
    write_png(sub / name, ds.images[i]);
    manifest += identity + "," + identity + "/" + name + "\n";
  }
  const std::filesystem::path tmp = dir / "manifest.txt.tmp";
  {
    FILE* f = std::fopen(tmp.string().c_str(), "w");
    check(f != nullptr, "save_dataset: cannot write ", tmp.string());
    const size_t n = std::fwrite(manifest.data(), 1, manifest.size(), f);
    std::fclose(f);
    check(n == manifest.size(), "save_dataset: short write to ", tmp.string());
  }
  std::filesystem::rename(tmp, dir / "manifest.txt");
}

LabeledDataset load_dataset(const std::filesystem::path& dir, int input_size) {
  check(std::filesystem::is_directory(dir), "load_dataset: not a directory: ",
        dir.string());
  check(input_size >= 8, "load_dataset: input size too small: ", input_size);

  std::vector<std::filesystem::path> subdirs;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_directory()) subdirs.push_back(entry.path());
  std::sort(subdirs.begin(), subdirs.end());
  check(!subdirs.empty(), "load_dataset: no identity directories in ",
        dir.string());

  LabeledDataset ds;
  ds.input_size = input_size;
  for (const auto& sub : subdirs) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(sub))
      if (entry.is_regular_file() && entry.path().extension() == ".png")
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) continue;
    if (files.size() < 2)
      std::fprintf(stderr,
                   "warning: identity %s has %zu image(s); it will be "
                   "excluded from verification pairs\n",
                   sub.filename().string().c_str(), files.size());
    const int label = int(ds.identity_names.size());
    ds.identity_names.push_back(sub.filename().string());
    const size_t first = ds.images.size();
    ds.images.resize(first + files.size());
    ds.labels.resize(first + files.size(), label);
    parallel_for(int64_t(files.size()), [&](int64_t i) {
      ImageBuffer img = read_png(files[size_t(i)]);
      if (img.width != input_size || img.height != input_size)
        img = resample_bicubic(img, input_size, input_size);
      ds.images[first + size_t(i)] = std::move(img);
    });
  }
  check(!ds.images.empty(), "load_dataset: no images under ", dir.string());
  tag_eval_split(ds);
  return ds;
}

VerificationPairs make_pairs(const LabeledDataset& ds, int n_pairs,
                             uint64_t seed) {
  check(n_pairs >= 2, "make_pairs: need >= 2 pairs, got ", n_pairs);
  check(ds.n_identities() >= 2, "make_pairs: need >= 2 identities");

  // Eval images only, and only from identities with >= 2 images total.
  std::vector<int> total_count(size_t(ds.n_identities()), 0);
  for (int label : ds.labels) ++total_count[size_t(label)];
  std::vector<std::vector<int>> by_id(size_t(ds.n_identities()));
  for (size_t i = 0; i < ds.images.size(); ++i)
    if (ds.is_eval[i] && total_count[size_t(ds.labels[i])] >= 2)
      by_id[size_t(ds.labels[i])].push_back(int(i));

  const int n_pos = n_pairs / 2;
  const int n_neg = n_pairs - n_pos;

  std::vector<VerificationPairs::Pair> positives;
  std::vector<int> pool;
  int64_t cross = 0;
  for (const auto& ids : by_id) {
    for (size_t i = 0; i < ids.size(); ++i)
      for (size_t j = i + 1; j < ids.size(); ++j)
        positives.push_back({ids[i], ids[j], true});
    cross += int64_t(pool.size()) * int64_t(ids.size());
    pool.insert(pool.end(), ids.begin(), ids.end());
  }
  check(int64_t(positives.size()) >= n_pos, "make_pairs: ", n_pos,
        " positive pairs requested but only ", positives.size(),
        " distinct eval pairs exist");
  check(cross >= n_neg, "make_pairs: ", n_neg,
        " negative pairs requested but only ", cross,
        " distinct eval pairs exist");

  RngStream rng(seed, /*stream_id=*/0x7061697273ULL);
  for (size_t i = positives.size(); i > 1; --i)
    std::swap(positives[i - 1], positives[rng.uniform_index(i)]);
  positives.resize(size_t(n_pos));

  std::unordered_set<int64_t> used;
  std::vector<VerificationPairs::Pair> negatives;
  int64_t attempts = 0;
  const int64_t max_attempts = 1000 + 200 * int64_t(n_neg);
  while (int64_t(negatives.size()) < n_neg) {
    check(attempts++ < max_attempts,
          "make_pairs: could not sample enough distinct negative pairs");
    const int a = pool[size_t(rng.uniform_index(pool.size()))];
    const int b = pool[size_t(rng.uniform_index(pool.size()))];
    if (ds.labels[size_t(a)] == ds.labels[size_t(b)]) continue;
    const int64_t key =
        int64_t(std::min(a, b)) * int64_t(ds.images.size()) + std::max(a, b);
    if (!used.insert(key).second) continue;
    negatives.push_back({a, b, false});
  }

  VerificationPairs out;
  out.pairs = std::move(positives);
  out.pairs.insert(out.pairs.end(), negatives.begin(), negatives.end());
  for (size_t i = out.pairs.size(); i > 1; --i)
    std::swap(out.pairs[i - 1], out.pairs[rng.uniform_index(i)]);
  return out;
}

}  // namespace lrfr
