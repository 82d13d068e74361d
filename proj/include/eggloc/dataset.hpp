#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "eggloc/errors.hpp"
#include "eggloc/geometry.hpp"
#include "eggloc/rng.hpp"

namespace eggloc {

struct CategoryLabel {
  std::string name;
  int id = -1;

  bool operator==(const CategoryLabel&) const = default;
};

struct ImageRecord {
  std::string image_id;
  std::string file_path;
  int width = 0;
  int height = 0;

  bool operator==(const ImageRecord&) const = default;
};

struct GroundTruthAnnotation {
  std::string image_id;
  CategoryLabel category;
  BoundingBox box;

  bool operator==(const GroundTruthAnnotation&) const = default;
};

struct Dataset {
  std::vector<ImageRecord> images;
  std::vector<GroundTruthAnnotation> annotations;
  std::vector<CategoryLabel> categories;

  bool operator==(const Dataset&) const = default;
};

// The 11 egg categories, ids fixed 0..10.
inline const std::vector<CategoryLabel>& canonical_categories() {
  static const std::vector<CategoryLabel> kCategories = {
      {"A. lumbricoides", 0},
      {"Capillaria philippinensis", 1},
      {"Enterobius vermicularis", 2},
      {"Fasciolopsis buski", 3},
      {"Hookworm", 4},
      {"Hymenolepis diminuta", 5},
      {"H. nana", 6},
      {"Opisthorchis viverrini", 7},
      {"Paragonimus spp.", 8},
      {"Taenia spp.", 9},
      {"T. trichiura", 10},
  };
  return kCategories;
}

// Lowercase, trim, collapse internal whitespace runs to single spaces.
inline std::string normalize_category_name(const std::string& raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (char ch : raw) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  return out;
}

// Normalized name -> canonical id, covering the canonical spellings plus the
// genus-abbreviation pairs and the label variants the source dataset ships.
inline const std::unordered_map<std::string, int>& category_alias_table() {
  static const std::unordered_map<std::string, int> kAliases = [] {
    std::unordered_map<std::string, int> table;
    for (const auto& cat : canonical_categories()) {
      table[normalize_category_name(cat.name)] = cat.id;
    }
    const std::vector<std::pair<std::string, int>> extra = {
        {"ascaris lumbricoides", 0},
        {"c. philippinensis", 1},
        {"e. vermicularis", 2},
        {"f. buski", 3},
        {"hookworm egg", 4},
        {"h. diminuta", 5},
        {"hymenolepis nana", 6},
        {"o. viverrini", 7},
        {"opisthorchis viverrine", 7},
        {"paragonimus spp", 8},
        {"taenia spp", 9},
        {"taenia spp. egg", 9},
        {"trichuris trichiura", 10},
    };
    for (const auto& [name, id] : extra) table[name] = id;
    return table;
  }();
  return kAliases;
}

// Maps a free-text label onto one of the 11 categories, or nullopt.
inline std::optional<CategoryLabel> resolve_category(const std::string& raw) {
  const auto& table = category_alias_table();
  const auto it = table.find(normalize_category_name(raw));
  if (it == table.end()) return std::nullopt;
  return canonical_categories()[static_cast<std::size_t>(it->second)];
}

namespace detail {

inline std::string id_to_string(const nlohmann::json& value, const char* what) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_number_integer()) return std::to_string(value.get<std::int64_t>());
  throw SchemaError(std::string(what) + " must be a string or integer id");
}

}  // namespace detail

// Loads a COCO-style detection document: images[], annotations[] with
// bbox [x, y, w, h], categories[]. Boxes are converted to corner form and
// clamped to their image bounds. The returned category list is always the
// canonical 11 regardless of which subset the file mentions.
inline Dataset load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotation file: " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("not valid JSON: " + path.string() + " (" + e.what() + ")");
  }
  if (!doc.is_object() || !doc.contains("images") || !doc.contains("annotations") ||
      !doc.contains("categories")) {
    throw SchemaError("not a COCO-style document (need images/annotations/categories): " +
                      path.string());
  }

  Dataset ds;
  ds.categories = canonical_categories();

  std::unordered_map<std::string, std::size_t> by_id;
  for (const auto& j : doc["images"]) {
    ImageRecord rec;
    rec.image_id = detail::id_to_string(j.at("id"), "image id");
    rec.file_path = j.value("file_name", "");
    rec.width = j.at("width").get<int>();
    rec.height = j.at("height").get<int>();
    if (rec.width <= 0 || rec.height <= 0) {
      throw ValidationError("image " + rec.image_id + " has non-positive dimensions");
    }
    if (by_id.count(rec.image_id)) {
      throw ValidationError("duplicate image id: " + rec.image_id);
    }
    by_id[rec.image_id] = ds.images.size();
    ds.images.push_back(std::move(rec));
  }

  // File-local category id -> canonical category.
  std::unordered_map<std::string, CategoryLabel> file_categories;
  for (const auto& j : doc["categories"]) {
    const std::string file_id = detail::id_to_string(j.at("id"), "category id");
    const std::string name = j.at("name").get<std::string>();
    const auto resolved = resolve_category(name);
    if (!resolved) {
      throw SchemaError("unknown category name: \"" + name +
                        "\" is not one of the 11 canonical categories");
    }
    file_categories[file_id] = *resolved;
  }

  std::size_t index = 0;
  for (const auto& j : doc["annotations"]) {
    const std::string ann_id =
        j.contains("id") ? detail::id_to_string(j["id"], "annotation id")
                         : std::to_string(index);
    GroundTruthAnnotation ann;
    ann.image_id = detail::id_to_string(j.at("image_id"), "annotation image_id");
    const auto img_it = by_id.find(ann.image_id);
    if (img_it == by_id.end()) {
      throw SchemaError("annotation " + ann_id + " references unknown image_id " +
                        ann.image_id);
    }
    const std::string cat_id = detail::id_to_string(j.at("category_id"), "category_id");
    const auto cat_it = file_categories.find(cat_id);
    if (cat_it == file_categories.end()) {
      throw SchemaError("annotation " + ann_id + " references undeclared category_id " +
                        cat_id);
    }
    ann.category = cat_it->second;

    const auto& bbox = j.at("bbox");
    if (!bbox.is_array() || bbox.size() != 4) {
      throw SchemaError("annotation " + ann_id + " bbox must be [x, y, w, h]");
    }
    const double x = bbox[0].get<double>();
    const double y = bbox[1].get<double>();
    const double w = bbox[2].get<double>();
    const double h = bbox[3].get<double>();
    if (w <= 0.0 || h <= 0.0) {
      throw ValidationError("annotation " + ann_id + " has non-positive bbox size (w=" +
                            std::to_string(w) + ", h=" + std::to_string(h) + ")");
    }
    const ImageRecord& img = ds.images[img_it->second];
    try {
      ann.box = clamp_to_image({x, y, x + w, y + h}, img.width, img.height);
    } catch (const DegenerateBoxError&) {
      throw ValidationError("annotation " + ann_id + " lies entirely outside image " +
                            ann.image_id);
    }
    ds.annotations.push_back(std::move(ann));
    ++index;
  }
  return ds;
}

// Writes the dataset back out in the same COCO-style layout load_annotations
// reads, so load(save(ds)) == ds.
inline void save_annotations(const std::filesystem::path& path, const Dataset& ds) {
  nlohmann::json doc;
  doc["images"] = nlohmann::json::array();
  for (const auto& img : ds.images) {
    doc["images"].push_back({{"id", img.image_id},
                             {"file_name", img.file_path},
                             {"width", img.width},
                             {"height", img.height}});
  }
  doc["annotations"] = nlohmann::json::array();
  std::size_t ann_id = 0;
  for (const auto& ann : ds.annotations) {
    doc["annotations"].push_back(
        {{"id", std::to_string(ann_id++)},
         {"image_id", ann.image_id},
         {"category_id", std::to_string(ann.category.id)},
         {"bbox", {ann.box.x_min, ann.box.y_min, ann.box.width(), ann.box.height()}}});
  }
  doc["categories"] = nlohmann::json::array();
  for (const auto& cat : ds.categories) {
    doc["categories"].push_back({{"id", std::to_string(cat.id)}, {"name", cat.name}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << doc.dump(2) << "\n";
}

enum class SplitPart { train, validation, test };

inline const char* to_string(SplitPart part) {
  switch (part) {
    case SplitPart::train: return "train";
    case SplitPart::validation: return "validation";
    case SplitPart::test: return "test";
  }
  return "unknown";
}

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
  std::array<double, 3> ratios = {0.6, 0.2, 0.2};

  const std::vector<std::string>& part(SplitPart p) const {
    switch (p) {
      case SplitPart::train: return train;
      case SplitPart::validation: return validation;
      case SplitPart::test: return test;
    }
    return test;
  }
};

// Seeded shuffle, then floor(n*r) for train and validation; test takes the
// remainder so the three parts always cover the input. The epsilon guards
// against 0.6*11000 landing at 6599.999... in binary.
inline DatasetSplit split_dataset(const std::vector<std::string>& image_ids,
                                  std::uint64_t seed,
                                  std::array<double, 3> ratios = {0.6, 0.2, 0.2}) {
  if (image_ids.empty()) throw ValidationError("split_dataset: empty image id list");
  {
    std::unordered_set<std::string> seen;
    for (const auto& id : image_ids) {
      if (!seen.insert(id).second) {
        throw ValidationError("split_dataset: duplicate image id: " + id);
      }
    }
  }
  for (double r : ratios) {
    if (r <= 0.0) throw ValidationError("split_dataset: ratios must be positive");
  }
  const double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ValidationError("split_dataset: ratios must sum to 1");
  }

  std::vector<std::string> shuffled = image_ids;
  deterministic_shuffle(shuffled, seed);

  const auto n = shuffled.size();
  const auto n_train = static_cast<std::size_t>(
      std::floor(static_cast<double>(n) * ratios[0] + 1e-9));
  const auto n_val = static_cast<std::size_t>(
      std::floor(static_cast<double>(n) * ratios[1] + 1e-9));

  DatasetSplit split;
  split.seed = seed;
  split.ratios = ratios;
  split.train.assign(shuffled.begin(), shuffled.begin() + n_train);
  split.validation.assign(shuffled.begin() + n_train, shuffled.begin() + n_train + n_val);
  split.test.assign(shuffled.begin() + n_train + n_val, shuffled.end());
  return split;
}

inline std::vector<GroundTruthAnnotation> filter_by_split(
    const std::vector<GroundTruthAnnotation>& annotations, const DatasetSplit& split,
    SplitPart part) {
  const auto& ids = split.part(part);
  const std::unordered_set<std::string> members(ids.begin(), ids.end());
  std::vector<GroundTruthAnnotation> out;
  for (const auto& ann : annotations) {
    if (members.count(ann.image_id)) out.push_back(ann);
  }
  return out;
}

// Split manifest: one JSON object per line, {"image_id": ..., "part": ...},
// in train/validation/test order. Byte-stable for a given seed.
inline void write_split_manifest(const std::filesystem::path& path,
                                 const DatasetSplit& split) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  for (SplitPart part : {SplitPart::train, SplitPart::validation, SplitPart::test}) {
    for (const auto& id : split.part(part)) {
      nlohmann::json line = {{"image_id", id}, {"part", to_string(part)}};
      out << line.dump() << "\n";
    }
  }
}

inline DatasetSplit read_split_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open split manifest: " + path.string());
  DatasetSplit split;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw SchemaError("split manifest line " + std::to_string(line_no) +
                        " is not valid JSON: " + path.string());
    }
    const std::string id = detail::id_to_string(j.at("image_id"), "image_id");
    const std::string part = j.at("part").get<std::string>();
    if (part == "train") split.train.push_back(id);
    else if (part == "validation") split.validation.push_back(id);
    else if (part == "test") split.test.push_back(id);
    else throw SchemaError("split manifest line " + std::to_string(line_no) +
                           " has unknown part \"" + part + "\"");
  }
  const double n = static_cast<double>(split.train.size() + split.validation.size() +
                                       split.test.size());
  if (n == 0) throw SchemaError("split manifest is empty: " + path.string());
  split.ratios = {split.train.size() / n, split.validation.size() / n,
                  split.test.size() / n};
  return split;
}

}  // namespace eggloc
