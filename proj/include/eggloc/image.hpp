#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "eggloc/errors.hpp"

namespace eggloc {

// 8-bit raster, interleaved channels, row-major. channels is 1 (gray) or 3 (RGB).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  bool empty() const { return width <= 0 || height <= 0 || channels <= 0; }
  std::size_t size() const {
    return static_cast<std::size_t>(width) * height * channels;
  }
  std::uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool operator==(const Image&) const = default;
};

inline Image make_image(int width, int height, int channels, std::uint8_t fill = 0) {
  if (width <= 0 || height <= 0 || (channels != 1 && channels != 3)) {
    throw ValidationError("make_image: bad dimensions or channel count");
  }
  Image img;
  img.width = width;
  img.height = height;
  img.channels = channels;
  img.pixels.assign(img.size(), fill);
  return img;
}

namespace detail {

inline int next_pnm_int(std::istream& in, const std::string& path) {
  // Whitespace- and comment-tolerant header token reader.
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  if (c == EOF || !std::isdigit(c)) {
    throw IoError("corrupt image header in " + path);
  }
  int value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = in.get();
  }
  return value;
}

}  // namespace detail

// Reads a binary PGM (P5) or PPM (P6) file with 8-bit samples.
inline Image load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image file: " + path.string());
  char magic[2] = {0, 0};
  in.read(magic, 2);
  int channels = 0;
  if (magic[0] == 'P' && magic[1] == '5') channels = 1;
  else if (magic[0] == 'P' && magic[1] == '6') channels = 3;
  else throw IoError("unsupported image format (want P5/P6 PNM): " + path.string());

  const int width = detail::next_pnm_int(in, path.string());
  const int height = detail::next_pnm_int(in, path.string());
  const int maxval = detail::next_pnm_int(in, path.string());
  if (width <= 0 || height <= 0 || maxval != 255) {
    throw IoError("unsupported PNM geometry/maxval in " + path.string());
  }
  Image img = make_image(width, height, channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.size())) {
    throw IoError("truncated pixel data in " + path.string());
  }
  return img;
}

// Writes PGM for 1-channel images, PPM for 3-channel images.
inline void save_image(const std::filesystem::path& path, const Image& img) {
  if (img.empty() || img.pixels.size() != img.size()) {
    throw ValidationError("save_image: malformed image");
  }
  if (img.channels != 1 && img.channels != 3) {
    throw ValidationError("save_image: only 1- or 3-channel images supported");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << (img.channels == 1 ? "P5" : "P6") << "\n"
      << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.size()));
  if (!out) throw IoError("short write to " + path.string());
}

inline const char* image_extension(const Image& img) {
  return img.channels == 1 ? ".pgm" : ".ppm";
}

// Decoding seam: the pipeline never names a file format, it calls one of
// these. Swap in another decoder to support other raster formats.
using ImageDecoder = std::function<Image(const std::filesystem::path&)>;

inline ImageDecoder default_image_decoder() {
  return [](const std::filesystem::path& p) { return load_image(p); };
}

}  // namespace eggloc
