#include "geocaps/png_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "geocaps/error.hpp"

namespace geocaps {

namespace {

constexpr std::uint8_t kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

std::uint32_t read_u32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::vector<std::uint8_t> zlib_inflate(const std::vector<std::uint8_t>& in,
                                       std::size_t expected) {
  std::vector<std::uint8_t> out(expected);
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw DataError("png: inflateInit failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || zs.avail_out != 0) {
    throw DataError("png: corrupt or truncated image data");
  }
  return out;
}

std::vector<std::uint8_t> zlib_deflate(const std::vector<std::uint8_t>& in) {
  uLongf bound = compressBound(static_cast<uLong>(in.size()));
  std::vector<std::uint8_t> out(bound);
  if (compress2(out.data(), &bound, in.data(), static_cast<uLong>(in.size()), 6) != Z_OK) {
    throw DataError("png: deflate failed");
  }
  out.resize(bound);
  return out;
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  return pb <= pc ? b : c;
}

}  // namespace

ImageU8 read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0) {
    throw DataError("not a png file: " + path);
  }

  int width = 0, height = 0, bit_depth = 0, color_type = 0;
  std::vector<std::uint8_t> idat;
  std::size_t pos = 8;
  bool saw_end = false;
  while (pos + 8 <= bytes.size() && !saw_end) {
    const std::uint32_t len = read_u32(&bytes[pos]);
    if (pos + 12 + len > bytes.size()) throw DataError("png: truncated chunk in " + path);
    const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
    const std::uint8_t* data = &bytes[pos + 8];
    if (std::memcmp(type, "IHDR", 4) == 0) {
      width = static_cast<int>(read_u32(data));
      height = static_cast<int>(read_u32(data + 4));
      bit_depth = data[8];
      color_type = data[9];
      if (data[12] != 0) throw DataError("png: interlaced images unsupported: " + path);
      if (bit_depth != 8 || (color_type != 0 && color_type != 2 && color_type != 6)) {
        throw DataError("png: only 8-bit gray/RGB/RGBA supported: " + path);
      }
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_end = true;
    }
    pos += 12 + len;
  }
  if (width <= 0 || height <= 0 || idat.empty()) {
    throw DataError("png: missing image data: " + path);
  }

  const int channels = color_type == 2 ? 3 : color_type == 6 ? 4 : 1;
  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  auto raw = zlib_inflate(idat, (stride + 1) * static_cast<std::size_t>(height));

  // undo per-scanline filters in place
  std::vector<std::uint8_t> pixels(stride * static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) {
    const std::uint8_t filter = raw[(stride + 1) * static_cast<std::size_t>(y)];
    const std::uint8_t* src = &raw[(stride + 1) * static_cast<std::size_t>(y) + 1];
    std::uint8_t* dst = &pixels[stride * static_cast<std::size_t>(y)];
    const std::uint8_t* up = y > 0 ? &pixels[stride * static_cast<std::size_t>(y - 1)] : nullptr;
    for (std::size_t x = 0; x < stride; ++x) {
      const int a = x >= static_cast<std::size_t>(channels) ? dst[x - channels] : 0;
      const int b = up ? up[x] : 0;
      const int c = (up && x >= static_cast<std::size_t>(channels)) ? up[x - channels] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw DataError("png: unknown filter type: " + path);
      }
      dst[x] = static_cast<std::uint8_t>(v & 0xff);
    }
  }

  ImageU8 img;
  img.width = width;
  img.height = height;
  img.rgb.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < static_cast<std::size_t>(width) * height; ++i) {
    if (channels == 1) {
      img.rgb[i * 3 + 0] = img.rgb[i * 3 + 1] = img.rgb[i * 3 + 2] = pixels[i];
    } else {
      img.rgb[i * 3 + 0] = pixels[i * channels + 0];
      img.rgb[i * 3 + 1] = pixels[i * channels + 1];
      img.rgb[i * 3 + 2] = pixels[i * channels + 2];
    }
  }
  return img;
}

void write_png(const std::string& path, const ImageU8& image) {
  const std::size_t stride = static_cast<std::size_t>(image.width) * 3;
  if (image.rgb.size() != stride * static_cast<std::size_t>(image.height)) {
    throw DataError("png: pixel buffer does not match dimensions");
  }
  std::vector<std::uint8_t> raw;
  raw.reserve((stride + 1) * static_cast<std::size_t>(image.height));
  for (int y = 0; y < image.height; ++y) {
    raw.push_back(0);  // filter type 0
    raw.insert(raw.end(), image.rgb.begin() + static_cast<std::ptrdiff_t>(stride * y),
               image.rgb.begin() + static_cast<std::ptrdiff_t>(stride * (y + 1)));
  }
  const auto compressed = zlib_deflate(raw);

  std::vector<std::uint8_t> out(kSignature, kSignature + 8);
  auto chunk = [&out](const char* type, const std::vector<std::uint8_t>& payload) {
    put_u32(out, static_cast<std::uint32_t>(payload.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const uLong crc = crc32(0, out.data() + start, static_cast<uInt>(out.size() - start));
    put_u32(out, static_cast<std::uint32_t>(crc));
  };

  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(image.width));
  put_u32(ihdr, static_cast<std::uint32_t>(image.height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // color type RGB
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // no interlace
  chunk("IHDR", ihdr);
  chunk("IDAT", compressed);
  chunk("IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("write failed: " + path);
}

}  // namespace geocaps
