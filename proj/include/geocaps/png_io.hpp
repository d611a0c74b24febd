#ifndef GEOCAPS_PNG_IO_HPP_
#define GEOCAPS_PNG_IO_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace geocaps {

// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;
};

// Reads a non-interlaced 8-bit PNG (grayscale, RGB or RGBA; alpha dropped).
ImageU8 read_png(const std::string& path);

// Writes an RGB PNG with filter 0 scanlines.
void write_png(const std::string& path, const ImageU8& image);

}  // namespace geocaps

#endif  // GEOCAPS_PNG_IO_HPP_
