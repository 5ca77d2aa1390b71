#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsp/geometry.hpp"
#include "lsp/roi.hpp"
#include "lsp/tensor.hpp"

namespace lsp {

/// Translation errors in meters, rotation errors in degrees. Dispersions are
/// population standard deviations.
struct MetricsReport {
  double E_x = 0, E_y = 0, E_z = 0;
  double E_t_mean = 0, E_t_std = 0;
  double E_q_mean = 0, E_q_std = 0;  // degrees
  std::size_t n = 0;
};

MetricsReport compute_metrics(std::span<const Posed> preds, std::span<const Posed> truths);

/// Translation-only variant (E_q fields left at zero).
MetricsReport compute_translation_metrics(std::span<const Vec3d> preds, std::span<const Vec3d> truths);

nlohmann::json to_json(const MetricsReport& r);
MetricsReport report_from_json(const nlohmann::json& j);

enum class ReportStyle { table2, table4, table5 };

ReportStyle parse_report_style(const std::string& s);

/// One row of an ablation table.
struct AblationRow {
  std::string init;  // "Random" or "ImageNet"
  bool hc = false;
  bool cda = false;
  MetricsReport metrics;
};

/// Column names of each style, in order.
std::vector<std::string> report_columns(ReportStyle style);

/// Fixed-width text table. table2 and table5 print one row per report;
/// table4 needs ablation rows.
std::string format_report(const MetricsReport& r, ReportStyle style, const std::string& label = "");
std::string format_table(std::span<const AblationRow> rows);

/// Machine-readable mirrors of the text tables.
nlohmann::json report_json(const MetricsReport& r, ReportStyle style, const std::string& label = "");
nlohmann::json table_json(std::span<const AblationRow> rows);

/// "mean ± std" with fixed decimals.
std::string plus_minus(double mean, double std, int decimals);

/// Copies `image` (1 or 3 channels) to RGB with the box outline (clipped at
/// the borders) and a filled dot at `center` drawn in red.
Tensor<float> draw_overlay(const Tensor<float>& image, const BoundingBox& box, const PixelCoord& center);

void render_overlay(const Tensor<float>& image, const BoundingBox& box, const PixelCoord& center,
                    const std::filesystem::path& out_path);

}  // namespace lsp
