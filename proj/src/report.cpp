#include "selfcolor/report.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace selfcolor {

static std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

static std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  check(static_cast<bool>(f), "cannot write " + path);
  return f;
}

void write_correlation_csv(const CorrelationReport& report, const std::string& path) {
  auto f = open_out(path);
  f << "layer,feature,corr\n";
  for (const auto& layer : report.layers)
    for (size_t c = 0; c < layer.corr.size(); ++c)
      f << layer.layer << "," << c << "," << fmt(layer.corr[c]) << "\n";
}

void write_top_activations_csv(const TopActivationSet& set, const std::string& path) {
  auto f = open_out(path);
  f << "layer,feature,rank,image,y,x,activation,box_y0,box_x0,box_y1,box_x1\n";
  for (size_t c = 0; c < set.per_feature.size(); ++c)
    for (size_t r = 0; r < set.per_feature[c].size(); ++r) {
      const auto& a = set.per_feature[c][r];
      f << set.layer << "," << c << "," << r << "," << a.image_index << "," << a.y << ","
        << a.x << "," << fmt(a.activation) << "," << a.box_y0 << "," << a.box_x0 << ","
        << a.box_y1 << "," << a.box_x1 << "\n";
    }
}

// --- SVG helpers -------------------------------------------------------------

namespace {

constexpr int kW = 640, kH = 360;
constexpr int kMargin = 48;

std::string svg_open() {
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" "
                "viewBox=\"0 0 %d %d\">\n",
                kW, kH, kW, kH);
  return std::string(buf) +
         "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

void svg_text(std::string& out, double x, double y, const std::string& s, int size = 11,
              const char* anchor = "middle") {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%s\" y=\"%s\" font-size=\"%d\" font-family=\"sans-serif\" "
                "text-anchor=\"%s\">%s</text>\n",
                fmt(x).c_str(), fmt(y).c_str(), size, anchor, s.c_str());
  out += buf;
}

void svg_line(std::string& out, double x1, double y1, double x2, double y2,
              const char* stroke = "black", const char* dash = nullptr) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%s\" y1=\"%s\" x2=\"%s\" y2=\"%s\" stroke=\"%s\"%s%s%s/>\n",
                fmt(x1).c_str(), fmt(y1).c_str(), fmt(x2).c_str(), fmt(y2).c_str(), stroke,
                dash ? " stroke-dasharray=\"" : "", dash ? dash : "", dash ? "\"" : "");
  out += buf;
}

}  // namespace

void write_correlation_svg(const CorrelationReport& report, const std::string& path) {
  check(!report.layers.empty(), "write_correlation_svg: empty report");
  std::string out = svg_open();
  const int n = static_cast<int>(report.layers.size());
  const double plot_w = kW - 2.0 * kMargin, plot_h = kH - 2.0 * kMargin;
  const double bar_w = plot_w / n * 0.6;
  // y maps correlation [-1, 1].
  auto ymap = [&](double v) { return kMargin + (1.0 - v) * 0.5 * plot_h; };
  svg_line(out, kMargin, ymap(0), kW - kMargin, ymap(0), "#888");
  svg_line(out, kMargin, ymap(1), kMargin, ymap(-1));
  svg_text(out, kMargin - 8, ymap(1) + 4, "1", 10, "end");
  svg_text(out, kMargin - 8, ymap(0) + 4, "0", 10, "end");
  svg_text(out, kMargin - 8, ymap(-1) + 4, "-1", 10, "end");
  for (int i = 0; i < n; ++i) {
    const auto& layer = report.layers[i];
    const double cx = kMargin + plot_w * (i + 0.5) / n;
    if (layer.defined > 0) {
      const double y0 = ymap(std::max(0.0, layer.median));
      const double h = std::abs(ymap(0) - ymap(layer.median));
      char buf[256];
      std::snprintf(buf, sizeof(buf),
                    "<rect x=\"%s\" y=\"%s\" width=\"%s\" height=\"%s\" fill=\"#4477aa\"/>\n",
                    fmt(cx - bar_w / 2).c_str(), fmt(y0).c_str(), fmt(bar_w).c_str(),
                    fmt(h).c_str());
      out += buf;
      svg_line(out, cx, ymap(layer.iqr_lo), cx, ymap(layer.iqr_hi), "#222");
      svg_line(out, cx - 4, ymap(layer.iqr_lo), cx + 4, ymap(layer.iqr_lo), "#222");
      svg_line(out, cx - 4, ymap(layer.iqr_hi), cx + 4, ymap(layer.iqr_hi), "#222");
    }
    svg_text(out, cx, kH - kMargin + 16, layer.layer, 9);
  }
  svg_text(out, kW / 2.0, 20, "median feature correlation (bars) with interquartile range");
  out += "</svg>\n";
  open_out(path) << out;
}

void write_loss_curve_svg(const std::vector<std::array<double, 2>>& points,
                          const std::vector<double>& drop_epochs,
                          const std::string& path) {
  check(!points.empty(), "write_loss_curve_svg: no points");
  double xmin = points.front()[0], xmax = points.back()[0];
  double ymin = points[0][1], ymax = points[0][1];
  for (const auto& p : points) {
    ymin = std::min(ymin, p[1]);
    ymax = std::max(ymax, p[1]);
  }
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;
  const double plot_w = kW - 2.0 * kMargin, plot_h = kH - 2.0 * kMargin;
  auto xmap = [&](double v) { return kMargin + (v - xmin) / (xmax - xmin) * plot_w; };
  auto ymap = [&](double v) { return kH - kMargin - (v - ymin) / (ymax - ymin) * plot_h; };

  std::string out = svg_open();
  svg_line(out, kMargin, kH - kMargin, kW - kMargin, kH - kMargin);
  svg_line(out, kMargin, kMargin, kMargin, kH - kMargin);
  for (double d : drop_epochs)
    svg_line(out, xmap(d), kMargin, xmap(d), kH - kMargin, "#cc3333", "4,3");
  std::string poly = "<polyline fill=\"none\" stroke=\"#2255cc\" points=\"";
  for (const auto& p : points) poly += fmt(xmap(p[0])) + "," + fmt(ymap(p[1])) + " ";
  poly += "\"/>\n";
  out += poly;
  svg_text(out, kMargin, kH - kMargin + 16, fmt(xmin), 10, "start");
  svg_text(out, kW - kMargin, kH - kMargin + 16, fmt(xmax), 10, "end");
  svg_text(out, kMargin - 8, kH - kMargin + 4, fmt(ymin), 10, "end");
  svg_text(out, kMargin - 8, kMargin + 4, fmt(ymax), 10, "end");
  svg_text(out, kW / 2.0, 20, "scaled training loss by epoch (dashed: scheduled drops)");
  out += "</svg>\n";
  open_out(path) << out;
}

void emit_report(const CorrelationReport& report, const std::string& out_dir) {
  check(!report.layers.empty(), "emit_report: empty layer list");
  std::filesystem::create_directories(out_dir);
  nlohmann::json header;
  header["pixel_stride"] = report.pixel_stride;
  header["probe_images"] = report.probe_images;
  header["crop"] = report.crop;
  header["activations"] = "post-relu";
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : report.layers)
    layers.push_back({{"layer", l.layer},
                      {"features", l.corr.size()},
                      {"defined", l.defined},
                      {"median", l.defined ? l.median : 0.0}});
  header["layers"] = layers;
  open_out((std::filesystem::path(out_dir) / "correlation_report.json").string())
      << header.dump(2) << "\n";
  write_correlation_csv(report,
                        (std::filesystem::path(out_dir) / "correlation.csv").string());
  write_correlation_svg(report,
                        (std::filesystem::path(out_dir) / "correlation.svg").string());
}

}  // namespace selfcolor
