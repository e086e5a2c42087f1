// SPDX-License-Identifier: Apache-2.0
#include "ssrt/report.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ssrt/io_format.hpp"
#include "ssrt/tensor.hpp"

namespace ssrt {

namespace {

constexpr const char* kHeader = "iter,loss_ce,loss_d,loss_sr,r,diversity,acc_src,acc_tgt,event";

void check(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_field_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size())
    throw CorruptFileError("corrupt-file: bad numeric field '" + s + "'");
  return v;
}

std::size_t parse_field_size(const std::string& s) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size())
    throw CorruptFileError("corrupt-file: bad integer field '" + s + "'");
  return std::size_t(v);
}

// Simple line chart scaffolding. Points are (iter, value); x spans the iter
// range, y spans [0, y_max].
struct Series {
  std::string label;
  std::string color;
  std::vector<std::pair<double, double>> points;
};

std::string svg_chart(const std::string& title, const std::vector<Series>& series,
                      const std::vector<double>& marker_iters, double x_min, double x_max,
                      double y_max, const std::string& y_label) {
  const double width = 860, height = 320;
  const double ml = 56, mr = 16, mt = 32, mb = 36;  // margins
  const double pw = width - ml - mr, ph = height - mt - mb;
  if (x_max <= x_min) x_max = x_min + 1.0;
  if (y_max <= 0.0) y_max = 1.0;
  auto px = [&](double x) { return ml + (x - x_min) / (x_max - x_min) * pw; };
  auto py = [&](double y) { return mt + ph - std::clamp(y / y_max, 0.0, 1.0) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << width << " " << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << ml << "\" y=\"20\" font-size=\"14\">" << title << "</text>\n";
  // Axes and horizontal gridlines with labels.
  for (int g = 0; g <= 4; ++g) {
    const double y = y_max * g / 4.0;
    svg << "<line x1=\"" << ml << "\" y1=\"" << py(y) << "\" x2=\"" << ml + pw << "\" y2=\""
        << py(y) << "\" stroke=\"#ddd\"/>\n";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", y);
    svg << "<text x=\"" << ml - 6 << "\" y=\"" << py(y) + 4
        << "\" text-anchor=\"end\" fill=\"#555\">" << buf << "</text>\n";
  }
  for (int g = 0; g <= 4; ++g) {
    const double x = x_min + (x_max - x_min) * g / 4.0;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", x);
    svg << "<text x=\"" << px(x) << "\" y=\"" << mt + ph + 16
        << "\" text-anchor=\"middle\" fill=\"#555\">" << buf << "</text>\n";
  }
  svg << "<text x=\"14\" y=\"" << mt + ph / 2
      << "\" transform=\"rotate(-90 14 " << mt + ph / 2 << ")\" text-anchor=\"middle\" "
      << "fill=\"#555\">" << y_label << "</text>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
      << "\" stroke=\"#333\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
      << mt + ph << "\" stroke=\"#333\"/>\n";
  // Restore markers behind the data.
  for (double m : marker_iters)
    svg << "<line x1=\"" << px(m) << "\" y1=\"" << mt << "\" x2=\"" << px(m) << "\" y2=\""
        << mt + ph << "\" stroke=\"#d33\" stroke-dasharray=\"4 3\" class=\"restore-marker\"/>\n";
  // Data polylines and legend.
  double legend_x = ml + 8;
  for (const Series& s : series) {
    svg << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : s.points) svg << px(x) << "," << py(y) << " ";
    svg << "\"/>\n";
    svg << "<rect x=\"" << legend_x << "\" y=\"" << mt + 4 << "\" width=\"10\" height=\"10\" fill=\""
        << s.color << "\"/>\n";
    svg << "<text x=\"" << legend_x + 14 << "\" y=\"" << mt + 13 << "\">" << s.label
        << "</text>\n";
    legend_x += 14.0 * double(s.label.size()) * 0.62 + 40;
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("io-error: cannot open '" + path + "' for writing");
  out << content;
  out.flush();
  if (!out) throw IoError("io-error: write failed for '" + path + "'");
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_train_log_csv(const TrainLog& log, const std::string& path) {
  std::ostringstream out;
  out << kHeader << "\n";
  for (const LogRow& row : log.rows) {
    check(row.event.find(',') == std::string::npos && row.event.find('\n') == std::string::npos,
          "log event must not contain separators");
    out << row.iter << ',' << format_double(row.loss_ce) << ',' << format_double(row.loss_d)
        << ',' << format_double(row.loss_sr) << ',' << format_double(row.r) << ','
        << row.diversity << ',' << format_double(row.acc_src) << ','
        << format_double(row.acc_tgt) << ',' << row.event << "\n";
  }
  write_text_file(path, out.str());
}

TrainLog read_train_log_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("io-error: cannot open '" + path + "' for reading");
  std::string line;
  if (!std::getline(in, line)) throw CorruptFileError("corrupt-file: empty log");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHeader) throw FormatError("format-error: unexpected log header '" + line + "'");
  TrainLog log;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != 9)
      throw CorruptFileError("corrupt-file: expected 9 fields, got " +
                             std::to_string(fields.size()));
    LogRow row;
    row.iter = parse_field_size(fields[0]);
    row.loss_ce = parse_field_double(fields[1]);
    row.loss_d = parse_field_double(fields[2]);
    row.loss_sr = parse_field_double(fields[3]);
    row.r = parse_field_double(fields[4]);
    row.diversity = parse_field_size(fields[5]);
    row.acc_src = parse_field_double(fields[6]);
    row.acc_tgt = parse_field_double(fields[7]);
    row.event = fields[8];
    log.rows.push_back(std::move(row));
  }
  return log;
}

void emit_report(const TrainLog& log, const std::string& outdir) {
  check(!log.rows.empty(), "cannot report an empty log");
  std::error_code ec;
  std::filesystem::create_directories(outdir, ec);
  if (ec) throw IoError("io-error: cannot create directory '" + outdir + "'");

  write_train_log_csv(log, outdir + "/train_log.csv");

  const double x_min = double(log.rows.front().iter);
  const double x_max = double(log.rows.back().iter);
  std::vector<double> markers;
  Series div{"diversity", "#1f77b4", {}};
  Series ramp{"r (ramp)", "#ff7f0e", {}};
  Series acc_s{"acc_src", "#2ca02c", {}};
  Series acc_t{"acc_tgt", "#9467bd", {}};
  double max_div = 1.0;
  for (const LogRow& row : log.rows) {
    const double it = double(row.iter);
    div.points.emplace_back(it, double(row.diversity));
    max_div = std::max(max_div, double(row.diversity));
    acc_s.points.emplace_back(it, row.acc_src);
    acc_t.points.emplace_back(it, row.acc_tgt);
    if (row.event.rfind("restore", 0) == 0) markers.push_back(it);
  }
  // The ramp lives in [0,1]; scale it to the diversity axis so both series
  // share one chart.
  for (const LogRow& row : log.rows)
    ramp.points.emplace_back(double(row.iter), row.r * max_div);
  char scale[48];
  std::snprintf(scale, sizeof(scale), "r (ramp, x%g)", max_div);
  ramp.label = scale;

  write_text_file(outdir + "/diversity.svg",
                  svg_chart("Target prediction diversity and safe-training ramp",
                            {div, ramp}, markers, x_min, x_max, max_div, "diversity"));
  write_text_file(outdir + "/accuracy.svg",
                  svg_chart("Held-out accuracy", {acc_s, acc_t}, markers, x_min, x_max, 1.0,
                            "accuracy"));
}

}  // namespace ssrt
