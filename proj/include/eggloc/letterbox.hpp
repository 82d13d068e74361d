#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "eggloc/errors.hpp"
#include "eggloc/geometry.hpp"
#include "eggloc/image.hpp"

namespace eggloc {

struct PreprocessConfig {
  int target_size = 768;
  std::uint8_t pad_value = 0;
  // Per-channel affine normalization, ImageNet-style defaults.
  std::vector<double> mean = {0.485, 0.456, 0.406};
  std::vector<double> std = {0.229, 0.224, 0.225};
  // When true, stretch to the square instead of letterboxing (ablation only;
  // box projection always assumes the letterbox path).
  bool stretch = false;

  void validate() const {
    if (target_size <= 0) throw ValidationError("target_size must be positive");
    if (mean.size() != std.size()) {
      throw ValidationError("mean/std arity mismatch");
    }
    for (double s : std) {
      if (s <= 0.0) throw ValidationError("std components must be positive");
    }
  }
};

// Scale + padding record mapping original image coordinates to the square
// model canvas and back. Pads are real-valued; the slack on the short axis is
// split evenly between both sides.
struct LetterboxTransform {
  double scale = 1.0;
  double pad_left = 0.0;
  double pad_top = 0.0;
  int original_width = 0;
  int original_height = 0;
  int target_size = 0;

  bool operator==(const LetterboxTransform&) const = default;
};

inline LetterboxTransform compute_letterbox(int width, int height, int target_size) {
  if (width <= 0 || height <= 0 || target_size <= 0) {
    throw ValidationError("compute_letterbox: dimensions must be positive");
  }
  LetterboxTransform t;
  t.original_width = width;
  t.original_height = height;
  t.target_size = target_size;
  t.scale = static_cast<double>(target_size) / std::max(width, height);
  t.pad_left = (target_size - t.scale * width) / 2.0;
  t.pad_top = (target_size - t.scale * height) / 2.0;
  return t;
}

// Original space -> model space: c' = c * scale + pad.
inline BoundingBox project_box(const BoundingBox& box, const LetterboxTransform& t) {
  validate_box(box);
  BoundingBox out;
  out.x_min = box.x_min * t.scale + t.pad_left;
  out.y_min = box.y_min * t.scale + t.pad_top;
  out.x_max = box.x_max * t.scale + t.pad_left;
  out.y_max = box.y_max * t.scale + t.pad_top;
  if (!out.valid()) {
    throw DegenerateBoxError("project_box produced a degenerate box");
  }
  return out;
}

// Model space -> original space, clamped to the original image bounds.
// Throws DegenerateBoxError when the box lies entirely in the padding.
inline BoundingBox unproject_box(const BoundingBox& box, const LetterboxTransform& t) {
  validate_box(box);
  BoundingBox out;
  out.x_min = (box.x_min - t.pad_left) / t.scale;
  out.y_min = (box.y_min - t.pad_top) / t.scale;
  out.x_max = (box.x_max - t.pad_left) / t.scale;
  out.y_max = (box.y_max - t.pad_top) / t.scale;
  return clamp_to_image(out, t.original_width, t.original_height);
}

// Renders the letterboxed canvas: bilinear resize of the source into the
// content rectangle, padding filled with pad_value. When the integer slack is
// odd the extra pixel goes to the bottom/right side.
inline Image letterbox_image(const Image& src, const PreprocessConfig& config) {
  config.validate();
  if (src.empty()) throw ValidationError("letterbox_image: empty image");
  const int target = config.target_size;
  const LetterboxTransform t = compute_letterbox(src.width, src.height, target);

  int content_w = target;
  int content_h = target;
  int off_x = 0;
  int off_y = 0;
  if (!config.stretch) {
    content_w = std::max(1, static_cast<int>(std::lround(src.width * t.scale)));
    content_h = std::max(1, static_cast<int>(std::lround(src.height * t.scale)));
    off_x = (target - content_w) / 2;
    off_y = (target - content_h) / 2;
  }

  Image out = make_image(target, target, src.channels, config.pad_value);
  for (int y = 0; y < content_h; ++y) {
    // Sample at pixel centers of the destination grid.
    const double sy = (y + 0.5) * src.height / content_h - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, src.height - 1);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double fy = std::clamp(sy - y0, 0.0, 1.0);
    for (int x = 0; x < content_w; ++x) {
      const double sx = (x + 0.5) * src.width / content_w - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, src.width - 1);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double fx = std::clamp(sx - x0, 0.0, 1.0);
      for (int c = 0; c < src.channels; ++c) {
        const double top = src.at(x0, y0, c) * (1.0 - fx) + src.at(x1, y0, c) * fx;
        const double bot = src.at(x0, y1, c) * (1.0 - fx) + src.at(x1, y1, c) * fx;
        const double v = top * (1.0 - fy) + bot * fy;
        out.at(off_x + x, off_y + y, c) =
            static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

// Per-channel (value/255 - mean) / std over the interleaved pixel buffer.
inline std::vector<float> normalize_pixels(const Image& image,
                                           const PreprocessConfig& config) {
  config.validate();
  if (image.empty()) throw ValidationError("normalize_pixels: empty image");
  if (static_cast<std::size_t>(image.channels) != config.mean.size()) {
    throw ValidationError("normalize_pixels: image has " +
                          std::to_string(image.channels) +
                          " channels but config carries " +
                          std::to_string(config.mean.size()) + " constants");
  }
  std::vector<float> out(image.size());
  const int c_count = image.channels;
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    const int c = static_cast<int>(i % c_count);
    out[i] = static_cast<float>(
        (image.pixels[i] / 255.0 - config.mean[c]) / config.std[c]);
  }
  return out;
}

}  // namespace eggloc
