#include "nash/report.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace nash::io {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

MetricsCsv::MetricsCsv(const fs::path& path) {
  fs::create_directories(path.parent_path());
  out_.open(path);
  if (!out_) throw std::runtime_error("cannot write " + path.string());
  out_ << kHeader << "\n";
}

void MetricsCsv::row(int64_t step, const std::string& stage, double loss_total,
                     double loss_pred, double loss_henc, double loss_hdec, double reg,
                     double s_hat, double t_current, std::optional<double> eval_metric) {
  out_ << step << ',' << stage << ',' << format_double(loss_total) << ','
       << format_double(loss_pred) << ',' << format_double(loss_henc) << ','
       << format_double(loss_hdec) << ',' << format_double(reg) << ','
       << format_double(s_hat) << ',' << format_double(t_current) << ','
       << (eval_metric ? format_double(*eval_metric) : "") << "\n";
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << j.dump(2) << "\n";
}

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  json j;
  f >> j;
  return j;
}

std::vector<std::map<std::string, std::string>> read_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(f, line)) return {};
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
      if (c == ',') {
        out.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    out.push_back(cur);
    return out;
  };
  const auto header = split(line);
  std::vector<std::map<std::string, std::string>> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    std::map<std::string, std::string> row;
    for (size_t i = 0; i < header.size() && i < cells.size(); ++i) row[header[i]] = cells[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string render_svg_scatter(const std::vector<ScatterPoint>& points,
                               const std::string& x_label, const std::string& y_label,
                               const std::string& title) {
  constexpr double W = 640, H = 480, ML = 70, MR = 20, MT = 40, MB = 50;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (!points.empty()) {
    xmin = xmax = points[0].x;
    ymin = ymax = points[0].y;
    for (const auto& p : points) {
      xmin = std::min(xmin, p.x);
      xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y);
      ymax = std::max(ymax, p.y);
    }
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double px = (W - ML - MR) / (xmax - xmin);
  const double py = (H - MT - MB) / (ymax - ymin);

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  s << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
    << title << "</text>\n";
  s << "<line x1=\"" << ML << "\" y1=\"" << H - MB << "\" x2=\"" << W - MR << "\" y2=\""
    << H - MB << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << ML << "\" y1=\"" << MT << "\" x2=\"" << ML << "\" y2=\"" << H - MB
    << "\" stroke=\"black\"/>\n";
  s << "<text x=\"" << (ML + W - MR) / 2 << "\" y=\"" << H - 12
    << "\" text-anchor=\"middle\" font-size=\"13\">" << x_label << "</text>\n";
  s << "<text x=\"18\" y=\"" << (MT + H - MB) / 2
    << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 "
    << (MT + H - MB) / 2 << ")\">" << y_label << "</text>\n";
  s << "<text x=\"" << ML << "\" y=\"" << H - MB + 16
    << "\" text-anchor=\"middle\" font-size=\"11\">" << format_double(xmin) << "</text>\n";
  s << "<text x=\"" << W - MR << "\" y=\"" << H - MB + 16
    << "\" text-anchor=\"middle\" font-size=\"11\">" << format_double(xmax) << "</text>\n";
  s << "<text x=\"" << ML - 6 << "\" y=\"" << H - MB
    << "\" text-anchor=\"end\" font-size=\"11\">" << format_double(ymin) << "</text>\n";
  s << "<text x=\"" << ML - 6 << "\" y=\"" << MT + 4
    << "\" text-anchor=\"end\" font-size=\"11\">" << format_double(ymax) << "</text>\n";
  for (const auto& p : points) {
    const double cx = ML + (p.x - xmin) * px;
    const double cy = H - MB - (p.y - ymin) * py;
    s << "<circle cx=\"" << format_double(cx) << "\" cy=\"" << format_double(cy)
      << "\" r=\"4\" fill=\"steelblue\"/>\n";
    s << "<text x=\"" << format_double(cx + 6) << "\" y=\"" << format_double(cy - 6)
      << "\" font-size=\"10\">" << p.label << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::vector<std::map<std::string, std::string>> merge_runs(
    const std::vector<fs::path>& run_dirs, const fs::path& out_csv) {
  std::vector<std::map<std::string, std::string>> rows;
  std::vector<std::string> columns;
  int schema = -1;
  for (const auto& dir : run_dirs) {
    json j = read_json(dir / "run.json");
    int sv = j.value("schema_version", -1);
    if (schema == -1) schema = sv;
    if (sv != schema)
      throw std::runtime_error("mixed run.json schema versions under " + dir.string());
    std::map<std::string, std::string> row;
    row["run_dir"] = dir.string();
    for (auto& [k, v] : j.items()) {
      if (v.is_object() || v.is_array()) continue;
      row[k] = v.is_string() ? v.get<std::string>()
                             : (v.is_number() ? format_double(v.get<double>()) : v.dump());
    }
    for (auto& [k, v] : row)
      if (std::find(columns.begin(), columns.end(), k) == columns.end()) columns.push_back(k);
    rows.push_back(std::move(row));
  }
  std::sort(columns.begin(), columns.end());
  if (!out_csv.empty()) {
    if (out_csv.has_parent_path()) fs::create_directories(out_csv.parent_path());
    std::ofstream f(out_csv);
    for (size_t i = 0; i < columns.size(); ++i) f << (i ? "," : "") << columns[i];
    f << "\n";
    for (const auto& row : rows) {
      for (size_t i = 0; i < columns.size(); ++i) {
        auto it = row.find(columns[i]);
        f << (i ? "," : "") << (it == row.end() ? "" : it->second);
      }
      f << "\n";
    }
  }
  return rows;
}

}  // namespace nash::io
