#include "lrfr/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <vector>

namespace lrfr {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

ImageBuffer read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  check(fp != nullptr, "png: cannot open '", path, "'");

  png_byte header[8];
  check(std::fread(header, 1, 8, fp.get()) == 8 &&
            png_sig_cmp(header, 0, 8) == 0,
        "png: '", path, "' is not a PNG file");

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  check(png != nullptr, "png: reader allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail("png: info allocation failed");
  }
  std::vector<png_byte> pixels;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("png: failed to decode '", path, "'");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_set_expand(png);          // palette/gray/low-bit to 8-bit
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  if (w == 0 || h == 0 || png_get_channels(png, info) != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("png: unsupported layout in '", path, "'");
  }

  pixels.resize(size_t(w) * h * 3);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = pixels.data() + size_t(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  ImageBuffer img(static_cast<int>(w), static_cast<int>(h));
  for (size_t i = 0; i < pixels.size(); ++i)
    img.data[i] = double(pixels[i]) / 255.0;
  return img;
}

void write_png(const std::string& path, const ImageBuffer& img) {
  check(img.width > 0 && img.height > 0, "png: empty image for '", path, "'");
  const std::string tmp = path + ".tmp";
  {
    FilePtr fp(std::fopen(tmp.c_str(), "wb"));
    check(fp != nullptr, "png: cannot create '", tmp, "'");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                              nullptr, nullptr);
    check(png != nullptr, "png: writer allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
      png_destroy_write_struct(&png, nullptr);
      fail("png: info allocation failed");
    }
    std::vector<png_byte> pixels(size_t(img.width) * img.height * 3);
    std::vector<png_bytep> rows(size_t(img.height));
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      fail("png: failed to encode '", path, "'");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height),
                 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);

    for (size_t i = 0; i < pixels.size(); ++i) {
      const double q = std::floor(img.data[i] * 255.0 + 0.5);  // half up
      pixels[i] = png_byte(std::fmin(std::fmax(q, 0.0), 255.0));
    }
    for (int y = 0; y < img.height; ++y)
      rows[size_t(y)] = pixels.data() + size_t(y) * img.width * 3;

    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace lrfr
