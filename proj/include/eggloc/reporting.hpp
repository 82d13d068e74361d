#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "eggloc/errors.hpp"
#include "eggloc/evaluation.hpp"

namespace eggloc {

inline void to_json(nlohmann::json& j, const EvalRecord& rec) {
  j = {{"image_id", rec.image_id},
       {"category", rec.category.name},
       {"category_id", rec.category.id},
       {"iou", rec.iou},
       {"status", to_string(rec.status)}};
}

inline void from_json(const nlohmann::json& j, EvalRecord& rec) {
  rec.image_id = j.at("image_id").get<std::string>();
  rec.category = CategoryLabel{j.at("category").get<std::string>(),
                               j.at("category_id").get<int>()};
  rec.iou = j.at("iou").get<double>();
  const std::string status = j.at("status").get<std::string>();
  if (status == "matched") rec.status = MatchStatus::matched;
  else if (status == "missed_gt") rec.status = MatchStatus::missed_gt;
  else throw SchemaError("bad record status \"" + status + "\"");
}

inline void to_json(nlohmann::json& j, const IoUDistribution& dist) {
  j = {{"bin_edges", dist.bin_edges}, {"counts", dist.counts}};
}

inline void from_json(const nlohmann::json& j, IoUDistribution& dist) {
  dist.bin_edges = j.at("bin_edges").get<std::vector<double>>();
  dist.counts = j.at("counts").get<std::vector<long long>>();
}

inline void to_json(nlohmann::json& j, const EvalReport& report) {
  j = {{"detector_name", report.detector_name},
       {"mean_iou", report.mean_iou},
       {"n_ground_truth", report.n_ground_truth},
       {"n_missed", report.n_missed},
       {"n_false_positive", report.n_false_positive},
       {"distribution", report.distribution},
       {"records", report.records}};
}

inline void from_json(const nlohmann::json& j, EvalReport& report) {
  report.detector_name = j.at("detector_name").get<std::string>();
  report.mean_iou = j.at("mean_iou").get<double>();
  report.n_ground_truth = j.at("n_ground_truth").get<long long>();
  report.n_missed = j.at("n_missed").get<long long>();
  report.n_false_positive = j.at("n_false_positive").get<long long>();
  report.distribution = j.at("distribution").get<IoUDistribution>();
  report.records = j.at("records").get<std::vector<EvalRecord>>();
}

inline void to_json(nlohmann::json& j, const SpreadStats& s) {
  j = {{"std_dev", s.std_dev},
       {"fraction_080_095", s.fraction_080_095},
       {"fraction_zero_bin", s.fraction_zero_bin}};
}

inline void from_json(const nlohmann::json& j, SpreadStats& s) {
  s.std_dev = j.at("std_dev").get<double>();
  s.fraction_080_095 = j.at("fraction_080_095").get<double>();
  s.fraction_zero_bin = j.at("fraction_zero_bin").get<double>();
}

inline void to_json(nlohmann::json& j, const ComparisonReport& cmp) {
  j = {{"report_a", cmp.report_a},
       {"report_b", cmp.report_b},
       {"delta_mean", cmp.delta_mean},
       {"spread_a", cmp.spread_a},
       {"spread_b", cmp.spread_b},
       {"better_localized", cmp.better_localized}};
}

inline void from_json(const nlohmann::json& j, ComparisonReport& cmp) {
  cmp.report_a = j.at("report_a").get<EvalReport>();
  cmp.report_b = j.at("report_b").get<EvalReport>();
  cmp.delta_mean = j.at("delta_mean").get<double>();
  cmp.spread_a = j.at("spread_a").get<SpreadStats>();
  cmp.spread_b = j.at("spread_b").get<SpreadStats>();
  cmp.better_localized = j.at("better_localized").get<std::string>();
}

namespace detail {

inline std::string fmt(const char* spec, double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, value);
  return buf;
}

struct SvgCanvas {
  static constexpr int kWidth = 640;
  static constexpr int kHeight = 400;
  static constexpr int kLeft = 60;
  static constexpr int kRight = 20;
  static constexpr int kTop = 40;
  static constexpr int kBottom = 50;

  std::string body;

  void rect(double x, double y, double w, double h, const char* fill,
            double opacity = 1.0) {
    body += "<rect x=\"" + fmt("%.2f", x) + "\" y=\"" + fmt("%.2f", y) +
            "\" width=\"" + fmt("%.2f", w) + "\" height=\"" + fmt("%.2f", h) +
            "\" fill=\"" + fill + "\" fill-opacity=\"" + fmt("%.2f", opacity) +
            "\"/>\n";
  }
  void line(double x1, double y1, double x2, double y2) {
    body += "<line x1=\"" + fmt("%.2f", x1) + "\" y1=\"" + fmt("%.2f", y1) +
            "\" x2=\"" + fmt("%.2f", x2) + "\" y2=\"" + fmt("%.2f", y2) +
            "\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
  }
  void text(double x, double y, const std::string& s, const char* anchor = "middle",
            int size = 12) {
    body += "<text x=\"" + fmt("%.2f", x) + "\" y=\"" + fmt("%.2f", y) +
            "\" text-anchor=\"" + anchor + "\" font-family=\"sans-serif\" font-size=\"" +
            std::to_string(size) + "\" fill=\"#333333\">" + s + "</text>\n";
  }

  std::string finish() const {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
           std::to_string(kWidth) + "\" height=\"" + std::to_string(kHeight) +
           "\" viewBox=\"0 0 " + std::to_string(kWidth) + " " +
           std::to_string(kHeight) + "\">\n<rect width=\"100%\" height=\"100%\" " +
           "fill=\"#ffffff\"/>\n" + body + "</svg>\n";
  }
};

inline void draw_axes(SvgCanvas& svg, long long max_count,
                      const std::vector<double>& edges) {
  const double x0 = SvgCanvas::kLeft;
  const double x1 = SvgCanvas::kWidth - SvgCanvas::kRight;
  const double y0 = SvgCanvas::kHeight - SvgCanvas::kBottom;
  const double y1 = SvgCanvas::kTop;
  svg.line(x0, y0, x1, y0);
  svg.line(x0, y0, x0, y1);
  // x ticks at every other edge to stay readable at 20 bins.
  const std::size_t step = edges.size() > 11 ? 2 : 1;
  for (std::size_t i = 0; i < edges.size(); i += step) {
    const double x = x0 + edges[i] * (x1 - x0);
    svg.line(x, y0, x, y0 + 4);
    svg.text(x, y0 + 18, fmt("%.2f", edges[i]));
  }
  svg.text((x0 + x1) / 2, SvgCanvas::kHeight - 10, "IoU");
  for (int i = 0; i <= 4; ++i) {
    const long long v = max_count * i / 4;
    const double y = y0 - (max_count > 0 ? static_cast<double>(v) / max_count : 0.0) *
                              (y0 - y1);
    svg.line(x0 - 4, y, x0, y);
    svg.text(x0 - 8, y + 4, std::to_string(v), "end");
  }
  svg.text(14, (y0 + y1) / 2, "frequency", "middle", 12);
}

}  // namespace detail

// Renders one IoU histogram as a self-contained SVG.
inline std::string render_histogram_svg(const EvalReport& report) {
  const auto& dist = report.distribution;
  detail::SvgCanvas svg;
  long long max_count = 1;
  for (long long c : dist.counts) max_count = std::max(max_count, c);
  const double x0 = detail::SvgCanvas::kLeft;
  const double x1 = detail::SvgCanvas::kWidth - detail::SvgCanvas::kRight;
  const double y0 = detail::SvgCanvas::kHeight - detail::SvgCanvas::kBottom;
  const double y1 = detail::SvgCanvas::kTop;
  svg.text((x0 + x1) / 2, 24, "IoU distribution: " + report.detector_name, "middle", 14);
  for (std::size_t i = 0; i < dist.counts.size(); ++i) {
    const double bx0 = x0 + dist.bin_edges[i] * (x1 - x0);
    const double bx1 = x0 + dist.bin_edges[i + 1] * (x1 - x0);
    const double h = static_cast<double>(dist.counts[i]) / max_count * (y0 - y1);
    if (dist.counts[i] > 0) svg.rect(bx0 + 1, y0 - h, bx1 - bx0 - 2, h, "#4878cf");
  }
  detail::draw_axes(svg, max_count, dist.bin_edges);
  return svg.finish();
}

// Side-by-side bars per bin for a two-detector comparison.
inline std::string render_comparison_svg(const ComparisonReport& cmp) {
  const auto& a = cmp.report_a.distribution;
  const auto& b = cmp.report_b.distribution;
  detail::SvgCanvas svg;
  long long max_count = 1;
  for (long long c : a.counts) max_count = std::max(max_count, c);
  for (long long c : b.counts) max_count = std::max(max_count, c);
  const double x0 = detail::SvgCanvas::kLeft;
  const double x1 = detail::SvgCanvas::kWidth - detail::SvgCanvas::kRight;
  const double y0 = detail::SvgCanvas::kHeight - detail::SvgCanvas::kBottom;
  const double y1 = detail::SvgCanvas::kTop;
  svg.text((x0 + x1) / 2, 24,
           "IoU distribution: " + cmp.report_a.detector_name + " vs " +
               cmp.report_b.detector_name,
           "middle", 14);
  for (std::size_t i = 0; i < a.counts.size(); ++i) {
    const double bx0 = x0 + a.bin_edges[i] * (x1 - x0);
    const double bx1 = x0 + a.bin_edges[i + 1] * (x1 - x0);
    const double half = (bx1 - bx0 - 2) / 2;
    const double ha = static_cast<double>(a.counts[i]) / max_count * (y0 - y1);
    if (a.counts[i] > 0) svg.rect(bx0 + 1, y0 - ha, half, ha, "#4878cf");
    if (i < b.counts.size()) {
      const double hb = static_cast<double>(b.counts[i]) / max_count * (y0 - y1);
      if (b.counts[i] > 0) svg.rect(bx0 + 1 + half, y0 - hb, half, hb, "#d65f5f");
    }
  }
  // Legend.
  svg.rect(x0 + 10, y1 + 4, 12, 12, "#4878cf");
  svg.text(x0 + 28, y1 + 14, cmp.report_a.detector_name, "start");
  svg.rect(x0 + 10, y1 + 24, 12, 12, "#d65f5f");
  svg.text(x0 + 28, y1 + 34, cmp.report_b.detector_name, "start");
  detail::draw_axes(svg, max_count, a.bin_edges);
  return svg.finish();
}

namespace detail {

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace detail

// Writes report.json + histogram.svg into out_dir.
inline void render_report(const EvalReport& report,
                          const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  detail::write_text_file(out_dir / "report.json",
                          nlohmann::json(report).dump(2) + "\n");
  detail::write_text_file(out_dir / "histogram.svg", render_histogram_svg(report));
}

// Writes comparison.json + comparison_histogram.svg into out_dir.
inline void render_report(const ComparisonReport& cmp,
                          const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  detail::write_text_file(out_dir / "comparison.json",
                          nlohmann::json(cmp).dump(2) + "\n");
  detail::write_text_file(out_dir / "comparison_histogram.svg",
                          render_comparison_svg(cmp));
}

inline EvalReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    return j.get<EvalReport>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("malformed report " + path.string() + ": " + e.what());
  }
}

inline ComparisonReport read_comparison(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open comparison: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    return j.get<ComparisonReport>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("malformed comparison " + path.string() + ": " + e.what());
  }
}

}  // namespace eggloc
