#pragma once

#include <vector>

#include "lrfr/common.hpp"
#include "lrfr/rng.hpp"

namespace lrfr {

// H x W x 3 RGB image, values in [0,1], row-major with interleaved
// channels: data[(y*width + x)*3 + c].
struct ImageBuffer {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  ImageBuffer() = default;
  ImageBuffer(int w, int h) : width(w), height(h) {
    check(w > 0 && h > 0, "image: non-positive size ", w, "x", h);
    data.assign(size_t(w) * h * 3, 0.0);
  }

  double& at(int y, int x, int c) {
    return data[(size_t(y) * width + x) * 3 + c];
  }
  double at(int y, int x, int c) const {
    return data[(size_t(y) * width + x) * 3 + c];
  }
};

// Separable bicubic interpolation with the Keys kernel (a = -0.5),
// clamp-to-edge sampling. Only the final output is clamped to [0,1]; the
// intermediate horizontal pass keeps overshoot so the two-pass result
// matches the tensor-product kernel sum.
ImageBuffer resample_bicubic(const ImageBuffer& img, int out_w, int out_h);

// Downsample a square image to r x r and back to its original size.
ImageBuffer degrade(const ImageBuffer& img, int r);

ImageBuffer hflip(const ImageBuffer& img);

struct AugmentationPlan {
  struct Entry {
    int resolution_px;
    double weight;
  };
  std::vector<Entry> entries;
  int input_size = 112;

  void validate() const;
};

// Draws a resolution with probability weight / sum(weights).
int sample_resolution(const AugmentationPlan& plan, RngStream& rng);

enum class DifficultyTier { extremely_hard, hard, semi_hard, not_augmented };

const char* tier_name(DifficultyTier t);

// r < 12: extremely hard; 12 <= r < 20: hard; 20 <= r <= 32: semi-hard;
// r > 32: not augmented.
DifficultyTier classify_difficulty(int r);

// Mean structural similarity on the luminance channel
// (0.299 R + 0.587 G + 0.114 B), 11x11 Gaussian window with sigma 1.5,
// C1 = 0.01^2 and C2 = 0.03^2 for unit dynamic range, valid windows only.
double ssim(const ImageBuffer& a, const ImageBuffer& b);

// Keys cubic kernel weight, a = -0.5.
double bicubic_weight(double t);

}  // namespace lrfr
