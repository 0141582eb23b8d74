#include "lrfr/image.hpp"

#include <algorithm>
#include <cmath>

namespace lrfr {

double bicubic_weight(double t) {
  constexpr double a = -0.5;
  const double x = std::fabs(t);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
  return 0.0;
}

namespace {

struct TapTable {
  // For each output coordinate: 4 clamped source indices and weights.
  std::vector<int> idx;      // 4 * out
  std::vector<double> wgt;   // 4 * out
};

TapTable make_taps(int in, int out) {
  TapTable t;
  t.idx.resize(size_t(out) * 4);
  t.wgt.resize(size_t(out) * 4);
  const double scale = double(in) / double(out);
  for (int o = 0; o < out; ++o) {
    const double src = (o + 0.5) * scale - 0.5;
    const double base = std::floor(src);
    const double frac = src - base;
    for (int k = 0; k < 4; ++k) {
      const int tap = int(base) - 1 + k;
      t.idx[size_t(o) * 4 + k] = std::clamp(tap, 0, in - 1);
      t.wgt[size_t(o) * 4 + k] = bicubic_weight(frac + 1.0 - k);
    }
  }
  return t;
}

}  // namespace

ImageBuffer resample_bicubic(const ImageBuffer& img, int out_w, int out_h) {
  check(img.width > 0 && img.height > 0, "resample: empty input image");
  check(out_w >= 1 && out_h >= 1, "resample: output size must be >= 1, got ",
        out_w, "x", out_h);

  const TapTable tx = make_taps(img.width, out_w);
  const TapTable ty = make_taps(img.height, out_h);

  // Horizontal pass, unclamped intermediate.
  std::vector<double> mid(size_t(out_w) * img.height * 3);
  for (int y = 0; y < img.height; ++y) {
    const double* row = img.data.data() + size_t(y) * img.width * 3;
    double* out_row = mid.data() + size_t(y) * out_w * 3;
    for (int x = 0; x < out_w; ++x) {
      const int* ix = tx.idx.data() + size_t(x) * 4;
      const double* wx = tx.wgt.data() + size_t(x) * 4;
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += wx[k] * row[ix[k] * 3 + c];
        out_row[x * 3 + c] = acc;
      }
    }
  }

  // Vertical pass, clamped output.
  ImageBuffer out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    const int* iy = ty.idx.data() + size_t(y) * 4;
    const double* wy = ty.wgt.data() + size_t(y) * 4;
    double* out_row = out.data.data() + size_t(y) * out_w * 3;
    for (int x = 0; x < out_w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k)
          acc += wy[k] * mid[(size_t(iy[k]) * out_w + x) * 3 + c];
        out_row[x * 3 + c] = std::clamp(acc, 0.0, 1.0);
      }
    }
  }
  return out;
}

ImageBuffer degrade(const ImageBuffer& img, int r) {
  check(img.width == img.height, "degrade: image must be square, got ",
        img.width, "x", img.height);
  check(r >= 1, "degrade: resolution must be >= 1, got ", r);
  check(r <= img.width, "degrade: resolution ", r, " exceeds input size ",
        img.width);
  const ImageBuffer low = resample_bicubic(img, r, r);
  return resample_bicubic(low, img.width, img.height);
}

ImageBuffer hflip(const ImageBuffer& img) {
  ImageBuffer out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
  return out;
}

void AugmentationPlan::validate() const {
  check(!entries.empty(), "augmentation plan: no entries");
  check(input_size >= 1, "augmentation plan: bad input size ", input_size);
  double wsum = 0.0;
  for (const Entry& e : entries) {
    check(e.resolution_px >= 1, "augmentation plan: bad resolution ",
          e.resolution_px);
    check(e.resolution_px <= input_size, "augmentation plan: resolution ",
          e.resolution_px, " exceeds input size ", input_size);
    check(e.weight > 0.0, "augmentation plan: non-positive weight for ",
          e.resolution_px, " px");
    wsum += e.weight;
  }
  check(wsum > 0.0, "augmentation plan: weights sum to zero");
}

int sample_resolution(const AugmentationPlan& plan, RngStream& rng) {
  plan.validate();
  double total = 0.0;
  for (const auto& e : plan.entries) total += e.weight;
  const double u = rng.uniform() * total;
  double acc = 0.0;
  for (const auto& e : plan.entries) {
    acc += e.weight;
    if (u < acc) return e.resolution_px;
  }
  return plan.entries.back().resolution_px;
}

const char* tier_name(DifficultyTier t) {
  switch (t) {
    case DifficultyTier::extremely_hard: return "extremely-hard";
    case DifficultyTier::hard: return "hard";
    case DifficultyTier::semi_hard: return "semi-hard";
    case DifficultyTier::not_augmented: return "not-augmented";
  }
  return "?";
}

DifficultyTier classify_difficulty(int r) {
  check(r >= 1, "classify_difficulty: resolution must be >= 1, got ", r);
  if (r < 12) return DifficultyTier::extremely_hard;
  if (r < 20) return DifficultyTier::hard;
  if (r <= 32) return DifficultyTier::semi_hard;
  return DifficultyTier::not_augmented;
}

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

std::vector<double> gauss_taps() {
  std::vector<double> w(kSsimWindow);
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - (kSsimWindow - 1) / 2.0;
    w[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Valid-mode separable Gaussian filter of a (h x w) field.
std::vector<double> gauss_valid(const std::vector<double>& f, int w, int h,
                                const std::vector<double>& taps) {
  const int ow = w - kSsimWindow + 1;
  const int oh = h - kSsimWindow + 1;
  std::vector<double> horiz(size_t(ow) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kSsimWindow; ++k)
        acc += taps[k] * f[size_t(y) * w + x + k];
      horiz[size_t(y) * ow + x] = acc;
    }
  std::vector<double> out(size_t(ow) * oh);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kSsimWindow; ++k)
        acc += taps[k] * horiz[size_t(y + k) * ow + x];
      out[size_t(y) * ow + x] = acc;
    }
  return out;
}

std::vector<double> luminance(const ImageBuffer& img) {
  std::vector<double> lum(size_t(img.width) * img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      lum[size_t(y) * img.width + x] = 0.299 * img.at(y, x, 0) +
                                       0.587 * img.at(y, x, 1) +
                                       0.114 * img.at(y, x, 2);
  return lum;
}

}  // namespace

double ssim(const ImageBuffer& a, const ImageBuffer& b) {
  check(a.width == b.width && a.height == b.height,
        "ssim: dimension mismatch ", a.width, "x", a.height, " vs ", b.width,
        "x", b.height);
  check(a.width >= kSsimWindow && a.height >= kSsimWindow,
        "ssim: image smaller than the ", kSsimWindow, "x", kSsimWindow,
        " window");

  const std::vector<double> taps = gauss_taps();
  const std::vector<double> x = luminance(a);
  const std::vector<double> y = luminance(b);
  const int w = a.width;
  const int h = a.height;

  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }

  const std::vector<double> mu_x = gauss_valid(x, w, h, taps);
  const std::vector<double> mu_y = gauss_valid(y, w, h, taps);
  const std::vector<double> e_xx = gauss_valid(xx, w, h, taps);
  const std::vector<double> e_yy = gauss_valid(yy, w, h, taps);
  const std::vector<double> e_xy = gauss_valid(xy, w, h, taps);

  double total = 0.0;
  for (size_t i = 0; i < mu_x.size(); ++i) {
    const double mx = mu_x[i];
    const double my = mu_y[i];
    const double var_x = e_xx[i] - mx * mx;
    const double var_y = e_yy[i] - my * my;
    const double cov = e_xy[i] - mx * my;
    total += ((2.0 * mx * my + kSsimC1) * (2.0 * cov + kSsimC2)) /
             ((mx * mx + my * my + kSsimC1) * (var_x + var_y + kSsimC2));
  }
  return total / double(mu_x.size());
}

}  // namespace lrfr
