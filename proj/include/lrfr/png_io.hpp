#pragma once

#include <string>

#include "lrfr/image.hpp"

namespace lrfr {

// 8-bit RGB PNG interchange. Write scales by 255 with round-half-up;
// read divides by 255. Gray, palette and alpha inputs are expanded to
// RGB on read. Writes go through a temp file and rename.
ImageBuffer read_png(const std::string& path);
void write_png(const std::string& path, const ImageBuffer& img);

}  // namespace lrfr
