#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "eggloc/errors.hpp"
#include "eggloc/geometry.hpp"

namespace eggloc {

// One detected box in original-image pixels. This line format is the
// interchange contract between inference and evaluation; external detectors'
// outputs enter the system in the same shape.
struct PredictionRecord {
  std::string image_id;
  std::string label;
  BoundingBox box;
  std::string raw_text;

  bool operator==(const PredictionRecord&) const = default;
};

inline void write_predictions(const std::filesystem::path& path,
                              const std::vector<PredictionRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  for (const auto& rec : records) {
    nlohmann::json line = {{"image_id", rec.image_id}, {"label", rec.label},
                           {"x_min", rec.box.x_min},   {"y_min", rec.box.y_min},
                           {"x_max", rec.box.x_max},   {"y_max", rec.box.y_max},
                           {"raw_text", rec.raw_text}};
    out << line.dump() << "\n";
  }
}

inline std::vector<PredictionRecord> read_predictions(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open predictions file: " + path.string());
  std::vector<PredictionRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw SchemaError("predictions line " + std::to_string(line_no) +
                        " is not valid JSON: " + path.string());
    }
    PredictionRecord rec;
    try {
      if (j.at("image_id").is_string()) {
        rec.image_id = j["image_id"].get<std::string>();
      } else {
        rec.image_id = std::to_string(j["image_id"].get<long long>());
      }
      rec.label = j.at("label").get<std::string>();
      rec.box = BoundingBox{j.at("x_min").get<double>(), j.at("y_min").get<double>(),
                            j.at("x_max").get<double>(), j.at("y_max").get<double>()};
      rec.raw_text = j.value("raw_text", "");
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("predictions line " + std::to_string(line_no) +
                        " is missing required fields: " + e.what());
    }
    if (!rec.box.valid()) {
      throw ValidationError("predictions line " + std::to_string(line_no) +
                            " carries an invalid box");
    }
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace eggloc
