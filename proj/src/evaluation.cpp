#include "lsp/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "lsp/image_io.hpp"

namespace lsp {

namespace {

struct MeanStd {
  double mean = 0;
  double std = 0;
};

MeanStd population(const std::vector<double>& v) {
  MeanStd r;
  for (double x : v) r.mean += x;
  r.mean /= double(v.size());
  double ss = 0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / double(v.size()));
  return r;
}

void require_lengths(std::size_t a, std::size_t b) {
  if (a != b) {
    throw ContractError("compute_metrics: " + std::to_string(a) + " predictions for " +
                        std::to_string(b) + " ground-truth poses");
  }
  if (a == 0) throw ContractError("compute_metrics: empty batch");
}

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  // Width counts code points so "±" occupies one column.
  std::size_t len = 0;
  for (unsigned char c : s) len += (c & 0xC0) != 0x80;
  return len >= width ? s : s + std::string(width - len, ' ');
}

std::string render_rows(const std::vector<std::string>& header,
                        const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> w(header.size());
  auto cols = [](const std::string& s) {
    std::size_t n = 0;
    for (unsigned char c : s) n += (c & 0xC0) != 0x80;
    return n;
  };
  for (std::size_t k = 0; k < header.size(); ++k) {
    w[k] = cols(header[k]);
    for (const auto& r : rows) w[k] = std::max(w[k], cols(r[k]));
  }
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t k = 0; k < cells.size(); ++k) {
      os << (k ? " | " : "") << (k + 1 < cells.size() ? pad(cells[k], w[k]) : cells[k]);
    }
    os << '\n';
  };
  line(header);
  std::vector<std::string> rule;
  for (std::size_t k = 0; k < header.size(); ++k) rule.push_back(std::string(w[k], '-'));
  line(rule);
  for (const auto& r : rows) line(r);
  return os.str();
}

}  // namespace

MetricsReport compute_metrics(std::span<const Posed> preds, std::span<const Posed> truths) {
  require_lengths(preds.size(), truths.size());
  const std::size_t n = preds.size();
  MetricsReport r;
  r.n = n;
  std::vector<double> et(n), eq(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3d d = (truths[i].t - preds[i].t).cwiseAbs();
    r.E_x += d.x() / double(n);
    r.E_y += d.y() / double(n);
    r.E_z += d.z() / double(n);
    et[i] = (truths[i].t - preds[i].t).norm();
    eq[i] = geodesic_angle(truths[i].q, preds[i].q) * 180.0 / std::numbers::pi;
  }
  const MeanStd t = population(et), q = population(eq);
  r.E_t_mean = t.mean;
  r.E_t_std = t.std;
  r.E_q_mean = q.mean;
  r.E_q_std = q.std;
  return r;
}

MetricsReport compute_translation_metrics(std::span<const Vec3d> preds, std::span<const Vec3d> truths) {
  require_lengths(preds.size(), truths.size());
  std::vector<Posed> p(preds.size()), g(truths.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    p[i].t = preds[i];
    g[i].t = truths[i];
  }
  return compute_metrics(p, g);
}

nlohmann::json to_json(const MetricsReport& r) {
  return {{"n", r.n},
          {"E_x", r.E_x},
          {"E_y", r.E_y},
          {"E_z", r.E_z},
          {"E_t", {{"mean", r.E_t_mean}, {"std", r.E_t_std}}},
          {"E_q_deg", {{"mean", r.E_q_mean}, {"std", r.E_q_std}}},
          {"std_kind", "population"}};
}

MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.n = j.at("n").get<std::size_t>();
  r.E_x = j.at("E_x").get<double>();
  r.E_y = j.at("E_y").get<double>();
  r.E_z = j.at("E_z").get<double>();
  r.E_t_mean = j.at("E_t").at("mean").get<double>();
  r.E_t_std = j.at("E_t").at("std").get<double>();
  r.E_q_mean = j.at("E_q_deg").at("mean").get<double>();
  r.E_q_std = j.at("E_q_deg").at("std").get<double>();
  return r;
}

ReportStyle parse_report_style(const std::string& s) {
  if (s == "table2") return ReportStyle::table2;
  if (s == "table4") return ReportStyle::table4;
  if (s == "table5") return ReportStyle::table5;
  throw ConfigError("unknown report style '" + s + "' (expected table2|table4|table5)");
}

std::vector<std::string> report_columns(ReportStyle style) {
  switch (style) {
    case ReportStyle::table2:
      return {"E_x", "E_y", "E_z", "E_t"};
    case ReportStyle::table4:
      return {"init", "HC", "CDA", "E_t", "E_q (deg)"};
    case ReportStyle::table5:
      return {"Model", "E_t", "E_q (deg)", "PnP"};
  }
  return {};
}

std::string plus_minus(double mean, double std, int decimals) {
  return fixed(mean, decimals) + " ± " + fixed(std, decimals);
}

std::string format_report(const MetricsReport& r, ReportStyle style, const std::string& label) {
  switch (style) {
    case ReportStyle::table2:
      return render_rows(report_columns(style),
                         {{fixed(r.E_x, 4), fixed(r.E_y, 4), fixed(r.E_z, 4), fixed(r.E_t_mean, 4)}});
    case ReportStyle::table5:
      return render_rows(report_columns(style),
                         {{label.empty() ? "LSPnet" : label, plus_minus(r.E_t_mean, r.E_t_std, 3),
                           plus_minus(r.E_q_mean, r.E_q_std, 2), "No"}});
    case ReportStyle::table4: {
      const AblationRow row{label.empty() ? "-" : label, false, false, r};
      return format_table(std::span<const AblationRow>(&row, 1));
    }
  }
  return {};
}

std::string format_table(std::span<const AblationRow> rows) {
  std::vector<std::vector<std::string>> cells;
  for (const AblationRow& r : rows) {
    cells.push_back({r.init, r.hc ? "yes" : "no", r.cda ? "yes" : "no",
                     plus_minus(r.metrics.E_t_mean, r.metrics.E_t_std, 3),
                     plus_minus(r.metrics.E_q_mean, r.metrics.E_q_std, 2)});
  }
  return render_rows(report_columns(ReportStyle::table4), cells);
}

nlohmann::json report_json(const MetricsReport& r, ReportStyle style, const std::string& label) {
  nlohmann::json row;
  switch (style) {
    case ReportStyle::table2:
      row = {{"E_x", r.E_x}, {"E_y", r.E_y}, {"E_z", r.E_z}, {"E_t", r.E_t_mean}};
      break;
    case ReportStyle::table5:
      row = {{"Model", label.empty() ? "LSPnet" : label},
             {"E_t_mean", r.E_t_mean},
             {"E_t_std", r.E_t_std},
             {"E_q_mean_deg", r.E_q_mean},
             {"E_q_std_deg", r.E_q_std},
             {"PnP", false}};
      break;
    case ReportStyle::table4: {
      const AblationRow a{label.empty() ? "-" : label, false, false, r};
      return table_json(std::span<const AblationRow>(&a, 1));
    }
  }
  return {{"style", style == ReportStyle::table2 ? "table2" : "table5"},
          {"columns", report_columns(style)},
          {"rows", nlohmann::json::array({row})},
          {"report", to_json(r)}};
}

nlohmann::json table_json(std::span<const AblationRow> rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const AblationRow& r : rows) {
    out.push_back({{"init", r.init},
                   {"HC", r.hc},
                   {"CDA", r.cda},
                   {"E_t_mean", r.metrics.E_t_mean},
                   {"E_t_std", r.metrics.E_t_std},
                   {"E_q_mean_deg", r.metrics.E_q_mean},
                   {"E_q_std_deg", r.metrics.E_q_std}});
  }
  return {{"style", "table4"},
          {"columns", report_columns(ReportStyle::table4)},
          {"std_kind", "population"},
          {"rows", out}};
}

Tensor<float> draw_overlay(const Tensor<float>& image, const BoundingBox& box, const PixelCoord& center) {
  if (image.n() != 1 || (image.c() != 1 && image.c() != 3)) {
    throw ContractError("draw_overlay: expected a 1 x {1,3} x H x W image, got " + image.shape_string());
  }
  const int h = image.h(), w = image.w();
  Tensor<float> out(1, 3, h, w);
  for (int c = 0; c < 3; ++c) out.plane(0, c) = image.plane(0, image.c() == 3 ? c : 0);
  auto paint = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    out(0, 0, y, x) = 1.0f;
    out(0, 1, y, x) = 0.0f;
    out(0, 2, y, x) = 0.0f;
  };
  const int x0 = int(std::lround(box.center.u - box.side / 2));
  const int x1 = int(std::lround(box.center.u + box.side / 2));
  const int y0 = int(std::lround(box.center.v - box.side / 2));
  const int y1 = int(std::lround(box.center.v + box.side / 2));
  for (int x = std::max(x0, 0); x <= std::min(x1, w - 1); ++x) {
    paint(x, y0);
    paint(x, y1);
  }
  for (int y = std::max(y0, 0); y <= std::min(y1, h - 1); ++y) {
    paint(x0, y);
    paint(x1, y);
  }
  const double radius = std::max(1.5, std::min(h, w) / 100.0);
  const int r = int(std::ceil(radius));
  const int cu = int(std::lround(center.u)), cv = int(std::lround(center.v));
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (dx * dx + dy * dy <= radius * radius) paint(cu + dx, cv + dy);
    }
  }
  return out;
}

void render_overlay(const Tensor<float>& image, const BoundingBox& box, const PixelCoord& center,
                    const std::filesystem::path& out_path) {
  write_png(out_path, draw_overlay(image, box, center));
}

}  // namespace lsp
