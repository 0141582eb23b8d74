#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lrfr/image.hpp"

namespace lrfr {

struct DatasetSpec {
  int n_identities = 50;
  int images_per_identity = 40;
  int input_size = 112;
  double translation_px = 3.0;
  double rotation_deg = 4.0;
  double brightness_delta = 0.08;
  uint64_t seed = 0;

  void validate() const;
};

// Identity-labeled image set with a per-identity train/eval split: the
// last quarter of each identity's images (at least one, never all) is
// tagged eval. Verification pairs are drawn from eval images only.
struct LabeledDataset {
  std::vector<ImageBuffer> images;
  std::vector<int> labels;
  std::vector<uint8_t> is_eval;
  std::vector<std::string> identity_names;  // indexed by label
  int input_size = 112;

  int n_identities() const { return int(identity_names.size()); }
  std::vector<int> train_indices() const;
  std::vector<int> eval_indices() const;
};

struct VerificationPairs {
  struct Pair {
    int a = 0;  // indices into LabeledDataset::images
    int b = 0;
    bool same = false;
  };
  std::vector<Pair> pairs;
};

// Each identity is a deterministic mixture of oriented fine gratings,
// Gaussian blobs and low-frequency sinusoids. The gratings and fine
// blobs carry most of the identity signal; their wavelengths sit below
// the Nyquist limit of strong degradation, so downsampling aliases them
// into phase-random moire. A weaker coarse layer survives degradation.
// Each sample evaluates the pattern under a small random rotation and
// translation and adds per-image low-frequency nuisance (brightness,
// tilt, one broad blob), so the surviving coarse cues take effort to
// use. Evaluating the analytic pattern at transformed coordinates keeps
// samples exact (no resampling artifacts).
LabeledDataset generate_dataset(const DatasetSpec& spec);

// Layout: dir/<identity>/<image>.png plus dir/manifest.txt with one
// "identity,relative-path" row per image.
void save_dataset(const LabeledDataset& ds, const std::filesystem::path& dir);

// Loads the directory layout above (identities = subdirectory names,
// sorted). Images are bicubic-resized to input_size. Identities with
// fewer than two images load with a warning and are skipped by
// make_pairs.
LabeledDataset load_dataset(const std::filesystem::path& dir, int input_size);

// n_pairs/2 positives and the rest negatives over eval images, without
// repeats, order shuffled. Errors when the eval split cannot supply the
// requested count.
VerificationPairs make_pairs(const LabeledDataset& ds, int n_pairs,
                             uint64_t seed);

}  // namespace lrfr
