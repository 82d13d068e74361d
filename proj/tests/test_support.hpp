// Shared fixtures/helpers for the test suite.
#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#ifndef _WIN32
#include <sys/wait.h>
#endif

#include "json.hpp"

#include "eggloc/geometry.hpp"
#include "eggloc/image.hpp"

namespace testkit {

// Independent IoU oracle: count integer pixels whose centers fall inside each
// box. For integer-coordinate boxes the counts are exact areas, so
// intersection/union is the exact IoU with no shared code path with
// eggloc::iou.
inline double oracle_iou(const eggloc::BoundingBox& a, const eggloc::BoundingBox& b) {
  const int x_lo = static_cast<int>(std::floor(std::min(a.x_min, b.x_min)));
  const int x_hi = static_cast<int>(std::ceil(std::max(a.x_max, b.x_max)));
  const int y_lo = static_cast<int>(std::floor(std::min(a.y_min, b.y_min)));
  const int y_hi = static_cast<int>(std::ceil(std::max(a.y_max, b.y_max)));
  const auto inside = [](const eggloc::BoundingBox& box, double cx, double cy) {
    return cx > box.x_min && cx < box.x_max && cy > box.y_min && cy < box.y_max;
  };
  long long in_a = 0, in_b = 0, in_both = 0;
  for (int y = y_lo; y < y_hi; ++y) {
    for (int x = x_lo; x < x_hi; ++x) {
      const double cx = x + 0.5;
      const double cy = y + 0.5;
      const bool pa = inside(a, cx, cy);
      const bool pb = inside(b, cx, cy);
      in_a += pa;
      in_b += pb;
      in_both += pa && pb;
    }
  }
  const long long in_union = in_a + in_b - in_both;
  return in_union == 0 ? 0.0 : static_cast<double>(in_both) / in_union;
}

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    auto base = std::filesystem::temp_directory_path();
    std::mt19937_64 gen(std::random_device{}());
    path_ = base / (tag + "_" + std::to_string(gen()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// A minimal COCO-style annotation document. boxes are (image_index,
// category_file_id, x, y, w, h) tuples over the given (id, w, h) images.
struct CocoImage {
  std::string id;
  int width = 0;
  int height = 0;
};

struct CocoBox {
  std::string image_id;
  std::string category_id;
  double x = 0, y = 0, w = 0, h = 0;
};

inline std::string coco_document(
    const std::vector<CocoImage>& images, const std::vector<CocoBox>& boxes,
    const std::vector<std::pair<std::string, std::string>>& categories) {
  nlohmann::json doc;
  doc["images"] = nlohmann::json::array();
  for (const auto& img : images) {
    doc["images"].push_back({{"id", img.id},
                             {"file_name", img.id + ".ppm"},
                             {"width", img.width},
                             {"height", img.height}});
  }
  doc["annotations"] = nlohmann::json::array();
  int ann_id = 0;
  for (const auto& box : boxes) {
    doc["annotations"].push_back({{"id", std::to_string(ann_id++)},
                                  {"image_id", box.image_id},
                                  {"category_id", box.category_id},
                                  {"bbox", {box.x, box.y, box.w, box.h}}});
  }
  doc["categories"] = nlohmann::json::array();
  for (const auto& [id, name] : categories) {
    doc["categories"].push_back({{"id", id}, {"name", name}});
  }
  return doc.dump(2);
}

// Deterministic multi-tone test raster (values depend on position only).
inline eggloc::Image gradient_image(int width, int height, int channels = 3) {
  eggloc::Image img = eggloc::make_image(width, height, channels);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        img.at(x, y, c) = static_cast<std::uint8_t>((x * 7 + y * 13 + c * 101) % 256);
      }
    }
  }
  return img;
}

struct CommandResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

// Runs a shell command capturing stdout/stderr; used to exercise the CLI
// binary the way a user would.
inline CommandResult run_command(const std::string& command,
                                 const std::filesystem::path& scratch) {
  const auto out_path = scratch / "cmd_stdout.txt";
  const auto err_path = scratch / "cmd_stderr.txt";
  const std::string full =
      command + " >" + out_path.string() + " 2>" + err_path.string();
  const int status = std::system(full.c_str());
  CommandResult result;
  result.out = read_text(out_path);
  result.err = read_text(err_path);
#ifdef _WIN32
  result.exit_code = status;
#else
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
#endif
  return result;
}

inline std::string quoted(const std::filesystem::path& p) {
  return "'" + p.string() + "'";
}

}  // namespace testkit
