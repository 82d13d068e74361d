#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "eggloc/errors.hpp"
#include "eggloc/geometry.hpp"

namespace eggloc {

// Coordinates are quantized to this many bins per axis and serialized as
// <loc_k> tokens, k in [0, bins-1]. 1000 matches the backend's convention.
inline constexpr int kDefaultLocBins = 1000;

struct LocToken {
  int bin = 0;

  bool operator==(const LocToken&) const = default;
};

inline std::string to_string(const LocToken& token) {
  return "<loc_" + std::to_string(token.bin) + ">";
}

// A category label paired with the model-space box it grounds.
struct GroundedPhrase {
  std::string label;
  BoundingBox box;

  bool operator==(const GroundedPhrase&) const = default;
};

struct DetectionPrompt {
  std::string task_text;

  bool operator==(const DetectionPrompt&) const = default;
};

struct PromptConfig {
  // Empty means "use the backend's standard detection task tag".
  std::optional<std::string> custom_text;
};

inline DetectionPrompt build_prompt(const PromptConfig& config = {}) {
  if (!config.custom_text) return DetectionPrompt{"<OD>"};
  if (config.custom_text->empty()) {
    throw ValidationError("build_prompt: custom prompt must be non-empty");
  }
  return DetectionPrompt{*config.custom_text};
}

// Quantizes one coordinate against its axis dimension.
inline LocToken quantize_coord(double value, double dim, int num_bins = kDefaultLocBins) {
  const int bin = static_cast<int>(std::floor(value / dim * num_bins));
  return LocToken{std::clamp(bin, 0, num_bins - 1)};
}

// Box -> (x_min, y_min, x_max, y_max) tokens. The box must lie within the
// image; coordinates exactly on the far edge land in the last bin.
inline std::array<LocToken, 4> encode_box(const BoundingBox& box, int width,
                                          int height, int num_bins = kDefaultLocBins) {
  validate_box(box);
  if (width <= 0 || height <= 0 || num_bins < 2) {
    throw ValidationError("encode_box: bad dimensions or bin count");
  }
  if (box.x_max > width || box.y_max > height) {
    throw ValidationError("encode_box: box exceeds image bounds");
  }
  return {quantize_coord(box.x_min, width, num_bins),
          quantize_coord(box.y_min, height, num_bins),
          quantize_coord(box.x_max, width, num_bins),
          quantize_coord(box.y_max, height, num_bins)};
}

// Dequantizes at bin centers: c = (bin + 0.5) / num_bins * dim. The result is
// returned as-is; a box narrower than one bin comes back degenerate (equal
// bins), which decode_output drops with a warning.
inline BoundingBox decode_box(const std::array<LocToken, 4>& tokens, int width,
                              int height, int num_bins = kDefaultLocBins) {
  if (width <= 0 || height <= 0 || num_bins < 2) {
    throw ValidationError("decode_box: bad dimensions or bin count");
  }
  const auto dequant = [num_bins](int bin, double dim) {
    return (bin + 0.5) / num_bins * dim;
  };
  return BoundingBox{dequant(tokens[0].bin, width), dequant(tokens[1].bin, height),
                     dequant(tokens[2].bin, width), dequant(tokens[3].bin, height)};
}

struct DecodeResult {
  std::vector<GroundedPhrase> phrases;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

// Parses "<loc_<digits>>" at position pos. Returns the bin (possibly out of
// range) and advances pos past the token, or nullopt leaving pos untouched.
inline std::optional<long long> parse_loc_token(std::string_view text,
                                                std::size_t& pos) {
  constexpr std::string_view kPrefix = "<loc_";
  if (text.substr(pos, kPrefix.size()) != kPrefix) return std::nullopt;
  std::size_t p = pos + kPrefix.size();
  std::size_t digits = 0;
  long long value = 0;
  while (p < text.size() && std::isdigit(static_cast<unsigned char>(text[p]))) {
    if (digits < 10) value = value * 10 + (text[p] - '0');
    ++digits;
    ++p;
  }
  if (digits == 0 || p >= text.size() || text[p] != '>') return std::nullopt;
  pos = p + 1;
  return value;
}

}  // namespace detail

// Lenient parser for the detection phrase grammar: label followed by four
// location tokens, repeated. Never throws on arbitrary input; malformed
// fragments are dropped and reported in the warnings list. Sequence markers
// (<s>, </s>, <pad>) are ignored. Text between the tokens of a group aborts
// that group and starts the next label.
inline DecodeResult decode_output(std::string_view text, int width, int height,
                                  int num_bins = kDefaultLocBins) {
  DecodeResult result;
  if (width <= 0 || height <= 0 || num_bins < 2) {
    result.warnings.push_back("decode_output called with bad dimensions; no parse");
    return result;
  }

  std::string label_buf;
  std::array<LocToken, 4> group{};
  std::size_t group_size = 0;

  const auto flush_group = [&]() {
    const std::string label = detail::trim(label_buf);
    const BoundingBox box = decode_box(group, width, height, num_bins);
    if (label.empty()) {
      result.warnings.push_back("dropped box without a label");
    } else if (!box.valid()) {
      result.warnings.push_back("dropped degenerate box for label \"" + label + "\"");
    } else {
      result.phrases.push_back(GroundedPhrase{label, box});
    }
    group_size = 0;
    label_buf.clear();
  };

  std::size_t pos = 0;
  while (pos < text.size()) {
    if (text[pos] == '<') {
      std::size_t token_pos = pos;
      if (auto bin = detail::parse_loc_token(text, token_pos)) {
        pos = token_pos;
        if (*bin >= num_bins) {
          result.warnings.push_back("skipped out-of-range token <loc_" +
                                    std::to_string(*bin) + ">");
          continue;
        }
        group[group_size++] = LocToken{static_cast<int>(*bin)};
        if (group_size == 4) flush_group();
        continue;
      }
      constexpr std::string_view kMarkers[] = {"<s>", "</s>", "<pad>"};
      bool skipped = false;
      for (std::string_view marker : kMarkers) {
        if (text.substr(pos, marker.size()) == marker) {
          pos += marker.size();
          skipped = true;
          break;
        }
      }
      if (skipped) continue;
    }

    const char ch = text[pos++];
    if (group_size > 0) {
      if (std::isspace(static_cast<unsigned char>(ch))) continue;
      result.warnings.push_back("dropped partial group of " +
                                std::to_string(group_size) + " location token(s)");
      group_size = 0;
      label_buf.clear();
    }
    label_buf.push_back(ch);
  }

  if (group_size > 0) {
    result.warnings.push_back("dropped trailing group of " +
                              std::to_string(group_size) + " location token(s)");
  }
  return result;
}

// Serializes phrases as fine-tuning targets: label + four tokens each, in
// input order, no separators. decode_output inverts this up to quantization.
inline std::string encode_training_target(const std::vector<GroundedPhrase>& phrases,
                                          int width, int height,
                                          int num_bins = kDefaultLocBins) {
  std::string out;
  for (const auto& phrase : phrases) {
    if (phrase.label.empty()) {
      throw ValidationError("encode_training_target: empty phrase label");
    }
    const auto tokens = encode_box(phrase.box, width, height, num_bins);
    out += phrase.label;
    for (const auto& token : tokens) out += to_string(token);
  }
  return out;
}

}  // namespace eggloc
