#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace nash::io {

// Fixed-column run metrics. Floats are printed with "%.12g" so reruns with
// identical config+seed reproduce the file byte for byte.
class MetricsCsv {
 public:
  explicit MetricsCsv(const std::filesystem::path& path);

  void row(int64_t step, const std::string& stage, double loss_total, double loss_pred,
           double loss_henc, double loss_hdec, double reg, double s_hat, double t_current,
           std::optional<double> eval_metric);
  void flush() { out_.flush(); }

  static constexpr const char* kHeader =
      "step,stage,loss_total,loss_pred,loss_henc,loss_hdec,R,s_hat,t_current,eval_metric";

 private:
  std::ofstream out_;
};

std::string format_double(double v);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

// Simple CSV reader: header row -> column names.
std::vector<std::map<std::string, std::string>> read_csv(const std::filesystem::path& path);

struct ScatterPoint {
  double x = 0.0;
  double y = 0.0;
  std::string label;
};

// Deterministic SVG scatter (byte-identical for identical inputs).
std::string render_svg_scatter(const std::vector<ScatterPoint>& points,
                               const std::string& x_label, const std::string& y_label,
                               const std::string& title);

// Merges run.json files from run directories into one CSV; throws on mixed
// schema versions. Returns the merged rows.
std::vector<std::map<std::string, std::string>> merge_runs(
    const std::vector<std::filesystem::path>& run_dirs,
    const std::filesystem::path& out_csv);

}  // namespace nash::io
