/*
 * Copyright 2026 The BevGraph Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "bevgraph/report.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "bevgraph/errors.h"

namespace bevgraph {

namespace {

using nlohmann::json;

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 20, kTop = 40, kBottom = 60;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

// Round-number tick step covering `span` with about five ticks.
double nice_step(double span) {
  if (!(span > 0.0)) return 1.0;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
    if (raw <= m * mag) return m * mag;
  return 10.0 * mag;
}

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

void header(std::ostringstream& os, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title)
     << "</text>\n";
}

void y_axis(std::ostringstream& os, const Frame& f, const std::string& label) {
  const double step = nice_step(f.y1 - f.y0);
  for (double y = std::ceil(f.y0 / step) * step; y <= f.y1 + 1e-12; y += step) {
    os << "<line x1=\"" << kLeft << "\" x2=\"" << kWidth - kRight << "\" y1=\"" << num(f.py(y)) << "\" y2=\""
       << num(f.py(y)) << "\" stroke=\"#ddd\"/>\n"
       << "<text x=\"" << kLeft - 6 << "\" y=\"" << num(f.py(y) + 4) << "\" text-anchor=\"end\">" << num(y)
       << "</text>\n";
  }
  os << "<text transform=\"translate(16," << (kTop + kHeight - kBottom) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << xml_escape(label) << "</text>\n";
}

void write_text(const std::filesystem::path& path, const std::string& text, ReportFiles& files) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
  files.written.push_back(path);
}

json read_json(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open " + p.string());
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw IoError(p.string() + " is not valid JSON: " + e.what());
  }
}

std::optional<double> opt(const json& v) {
  return v.is_number() ? std::optional<double>(v.get<double>()) : std::nullopt;
}

std::string csv_field(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string stem_of(const std::filesystem::path& dir) {
  std::string s = dir.filename().string();
  if (s.empty() || s == ".") s = std::filesystem::absolute(dir).parent_path().filename().string();
  return s.empty() ? "input" : s;
}

// Distance-binned metrics of one evaluation.
void report_metrics(const json& m, const std::string& name, const std::filesystem::path& out, ReportFiles& files,
                    std::vector<Series>& iou_curves) {
  const auto edges = m.at("distance_edges").get<std::vector<double>>();
  const json& iou = m.at("iou_by_distance");
  const json& err = m.at("loc_error_by_distance");
  std::ostringstream csv;
  csv << "bin_lo,bin_hi,iou,loc_error\n";
  Series s;
  s.name = name;
  for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
    const auto v = opt(iou.at(b));
    const auto e = opt(err.at(b));
    csv << num(edges[b]) << ',' << num(edges[b + 1]) << ',' << (v ? num(*v) : "") << ',' << (e ? num(*e) : "") << '\n';
    s.x.push_back(0.5 * (edges[b] + edges[b + 1]));
    s.y.push_back(v ? std::optional<double>(100.0 * *v) : std::nullopt);
  }
  write_text(out / (name + "_by_distance.csv"), csv.str(), files);
  iou_curves.push_back(std::move(s));
}

void report_ablation(const json& summary, const std::string& name, const std::filesystem::path& out,
                     ReportFiles& files) {
  std::ostringstream csv;
  csv << "level,supervision,runs,diverged,loc_error_mean,loc_error_std,loc_error_median,iou_mean,iou_std,iou_median\n";
  std::vector<Bar> bars;
  std::vector<Series> distance;
  for (const json& l : summary.at("levels")) {
    const json& le = l.at("loc_error");
    const json& io = l.at("iou");
    csv << csv_field(l.at("level").get<std::string>()) << ',' << csv_field(l.at("supervision").get<std::string>())
        << ',' << le.at("n").get<int>() << ',' << l.at("diverged").get<int>() << ',' << num(le.at("mean").get<double>())
        << ',' << num(le.at("std").get<double>()) << ',' << num(le.at("median").get<double>()) << ','
        << num(io.at("mean").get<double>()) << ',' << num(io.at("std").get<double>()) << ','
        << num(io.at("median").get<double>()) << '\n';
    bars.push_back({l.at("level").get<std::string>(), le.at("median").get<double>(), le.at("std").get<double>()});
    Series s;
    s.name = l.at("level").get<std::string>();
    const json& bins = l.at("loc_error_by_coarse_distance_median");
    for (std::size_t b = 0; b < bins.size(); ++b) {
      s.x.push_back(10.0 * b + 5.0);
      s.y.push_back(opt(bins.at(b)));
    }
    distance.push_back(std::move(s));
  }
  const std::string axis = summary.at("spec").at("axis").get<std::string>();
  write_text(out / (name + "_table.csv"), csv.str(), files);
  write_text(out / (name + "_loc_error.svg"),
             svg_bar_chart(bars, "Localization error by " + axis + " (median, +-std)", "error (m)"), files);
  write_text(out / (name + "_loc_error_by_distance.svg"),
             svg_line_plot(distance, "Localization error over distance (" + axis + ")", "distance from camera (m)",
                           "error (m)"),
             files);
}

}  // namespace

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string svg_line_plot(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                          const std::string& y_label) {
  Frame f{0, 1, 0, 1};
  bool any = false;
  for (const Series& s : series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!s.y[i]) continue;
      if (!any) f = {s.x[i], s.x[i], 0.0, *s.y[i]};
      f.x0 = std::min(f.x0, s.x[i]);
      f.x1 = std::max(f.x1, s.x[i]);
      f.y1 = std::max(f.y1, *s.y[i]);
      f.y0 = std::min(f.y0, *s.y[i]);
      any = true;
    }
  }
  if (f.x1 <= f.x0) f.x1 = f.x0 + 1.0;
  if (f.y1 <= f.y0) f.y1 = f.y0 + 1.0;
  f.y1 += 0.05 * (f.y1 - f.y0);
  std::ostringstream os;
  header(os, title);
  y_axis(os, f, y_label);
  const double xs = nice_step(f.x1 - f.x0);
  for (double x = std::ceil(f.x0 / xs) * xs; x <= f.x1 + 1e-12; x += xs) {
    os << "<text x=\"" << num(f.px(x)) << "\" y=\"" << kHeight - kBottom + 16 << "\" text-anchor=\"middle\">"
       << num(x) << "</text>\n";
  }
  os << "<text x=\"" << (kLeft + kWidth - kRight) / 2 << "\" y=\"" << kHeight - 22 << "\" text-anchor=\"middle\">"
     << xml_escape(x_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const Series& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    std::string d;
    bool pen = false;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!s.y[i]) {
        pen = false;
        continue;
      }
      d += (pen ? " L" : " M") + num(f.px(s.x[i])) + " " + num(f.py(*s.y[i]));
      pen = true;
      os << "<circle cx=\"" << num(f.px(s.x[i])) << "\" cy=\"" << num(f.py(*s.y[i])) << "\" r=\"3\" fill=\"" << color
         << "\"/>\n";
    }
    if (!d.empty()) os << "<path d=\"" << d.substr(1) << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << kLeft + 10 << "\" y=\"" << kTop + 14 + 15 * k << "\" fill=\"" << color << "\">"
       << xml_escape(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string svg_bar_chart(const std::vector<Bar>& bars, const std::string& title, const std::string& y_label) {
  Frame f{0, static_cast<double>(std::max<std::size_t>(1, bars.size())), 0, 1};
  for (const Bar& b : bars) f.y1 = std::max(f.y1, b.value + b.error);
  f.y1 *= 1.1;
  std::ostringstream os;
  header(os, title);
  y_axis(os, f, y_label);
  for (std::size_t k = 0; k < bars.size(); ++k) {
    const Bar& b = bars[k];
    const double xl = f.px(k + 0.15), xr = f.px(k + 0.85);
    os << "<rect x=\"" << num(xl) << "\" y=\"" << num(f.py(b.value)) << "\" width=\"" << num(xr - xl)
       << "\" height=\"" << num(f.py(0) - f.py(b.value)) << "\" fill=\"" << kPalette[k % std::size(kPalette)]
       << "\"/>\n";
    if (b.error > 0.0) {
      const double xm = 0.5 * (xl + xr);
      os << "<line x1=\"" << num(xm) << "\" x2=\"" << num(xm) << "\" y1=\"" << num(f.py(b.value - b.error))
         << "\" y2=\"" << num(f.py(b.value + b.error)) << "\" stroke=\"black\"/>\n";
    }
    os << "<text x=\"" << num(0.5 * (xl + xr)) << "\" y=\"" << kHeight - kBottom + 16
       << "\" text-anchor=\"middle\" font-size=\"10\">" << xml_escape(b.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

ReportFiles write_report(const std::vector<std::filesystem::path>& inputs, const std::filesystem::path& out) {
  std::filesystem::create_directories(out);
  ReportFiles files;
  std::vector<Series> iou_curves;
  int recognized = 0;
  for (const auto& in : inputs) {
    const std::string name = stem_of(in);
    bool hit = false;
    if (std::filesystem::exists(in / "summary.json")) {
      report_ablation(read_json(in / "summary.json"), name, out, files);
      hit = true;
    }
    if (std::filesystem::exists(in / "metrics.json")) {
      report_metrics(read_json(in / "metrics.json"), name, out, files, iou_curves);
      hit = true;
    } else if (std::filesystem::exists(in / "run_record.json")) {
      const json rec = read_json(in / "run_record.json");
      report_metrics(rec.at("final_val"), name, out, files, iou_curves);
      std::ostringstream csv;
      csv << "epoch,learning_rate,train_total,val_loc_error,val_iou\n";
      for (const json& e : rec.at("epochs")) {
        const json& tl = e.at("train_loss");
        csv << e.at("epoch").get<int>() << ',' << num(e.at("learning_rate").get<double>()) << ','
            << (tl.is_object() ? num(tl.at("total").get<double>()) : "") << ','
            << (opt(e.at("val_loc_error")) ? num(*opt(e.at("val_loc_error"))) : "") << ','
            << (opt(e.at("val_iou")) ? num(*opt(e.at("val_iou"))) : "") << '\n';
      }
      write_text(out / (name + "_epochs.csv"), csv.str(), files);
      hit = true;
    }
    if (!hit) throw IoError("report: no summary.json, metrics.json or run_record.json under " + in.string());
    ++recognized;
  }
  if (recognized == 0) throw IoError("report: no inputs given");
  if (!iou_curves.empty()) {
    write_text(out / "iou_by_distance.svg",
               svg_line_plot(iou_curves, "IoU over distance from camera", "distance (m)", "IoU (%)"), files);
  }
  return files;
}

}  // namespace bevgraph
