#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "declab/errors.hpp"
#include "declab/experiment.hpp"
#include "declab/svg.hpp"

namespace fs = std::filesystem;

namespace declab {

void write_metrics_jsonl(const std::string& path, const std::vector<MetricRecord>& records) {
  std::ofstream out(path);
  if (!out) throw FormatError(path + ": cannot open for writing");
  for (const MetricRecord& r : records) {
    nlohmann::json j;
    j["step"] = r.step;
    j["task"] = r.task;
    j["metric"] = r.metric;
    j["value"] = r.value;
    out << j.dump() << "\n";
  }
}

std::vector<MetricRecord> read_metrics_jsonl(const std::string& path, int* warnings) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open");
  std::vector<MetricRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("step") || !j.contains("task") || !j.contains("metric") ||
        !j.contains("value")) {
      if (warnings) (*warnings)++;
      continue;
    }
    MetricRecord r;
    r.step = j["step"].get<std::int64_t>();
    r.task = j["task"].get<std::string>();
    r.metric = j["metric"].get<std::string>();
    r.value = j["value"].get<double>();
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

struct Stats {
  double mean = 0.0, stddev = 0.0;
  int n = 0;
};

Stats mean_std(const std::vector<double>& values) {
  Stats s;
  s.n = static_cast<int>(values.size());
  if (s.n == 0) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / s.n;
  if (s.n > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(sq / (s.n - 1));  // sample stddev
  }
  return s;
}

}  // namespace

std::vector<SummaryRow> summarize(
    const std::map<std::string, std::vector<std::vector<MetricRecord>>>& per_cell_seed_records) {
  std::vector<SummaryRow> rows;
  for (const auto& [cell, seed_records] : per_cell_seed_records) {
    // Final value per (task, metric) per seed.
    std::map<std::pair<std::string, std::string>, std::vector<double>> finals;
    for (const auto& records : seed_records) {
      std::map<std::pair<std::string, std::string>, std::pair<std::int64_t, double>> last;
      for (const MetricRecord& r : records) {
        auto key = std::make_pair(r.task, r.metric);
        auto it = last.find(key);
        if (it == last.end() || r.step >= it->second.first) last[key] = {r.step, r.value};
      }
      for (const auto& [key, sv] : last) finals[key].push_back(sv.second);
    }
    for (const auto& [key, values] : finals) {
      Stats s = mean_std(values);
      rows.push_back({cell, key.first, key.second, s.mean, s.stddev, s.n});
    }
  }
  return rows;
}

void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows) {
  std::ofstream out(path);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << "cell,task,metric,mean,stddev,n\n";
  for (const SummaryRow& r : rows)
    out << r.cell << "," << r.task << "," << r.metric << "," << format_double(r.mean) << ","
        << format_double(r.stddev) << "," << r.n << "\n";
}

std::vector<SummaryRow> read_summary_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open");
  std::vector<SummaryRow> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::istringstream ls(line);
    SummaryRow r;
    std::string field;
    std::getline(ls, r.cell, ',');
    std::getline(ls, r.task, ',');
    std::getline(ls, r.metric, ',');
    std::getline(ls, field, ',');
    r.mean = std::stod(field);
    std::getline(ls, field, ',');
    r.stddev = std::stod(field);
    std::getline(ls, field, ',');
    r.n = std::stoi(field);
    rows.push_back(std::move(r));
  }
  return rows;
}

int report_metrics(const std::vector<std::string>& metric_files, const std::string& output_dir,
                   std::ostream* log) {
  fs::create_directories(output_dir);
  int warnings = 0;
  std::map<std::string, std::vector<std::vector<MetricRecord>>> per_cell;
  for (const std::string& path : metric_files) {
    std::vector<MetricRecord> records = read_metrics_jsonl(path, &warnings);
    per_cell[fs::path(path).stem().string()].push_back(std::move(records));
  }
  std::vector<SummaryRow> rows = summarize(per_cell);
  write_summary_csv(output_dir + "/summary.csv", rows);

  // Metric history line plot per metric name (step on x).
  std::map<std::string, SvgPlot> plots;
  std::map<std::string, std::map<std::string, std::vector<std::pair<double, double>>>> curves;
  for (const auto& [cell, seed_records] : per_cell) {
    for (const auto& records : seed_records) {
      for (const MetricRecord& r : records)
        curves[r.metric][cell + "/" + r.task].push_back(
            {static_cast<double>(r.step), r.value});
    }
  }
  for (auto& [metric, by_series] : curves) {
    SvgPlot plot(900, 420, "history: " + metric);
    plot.set_axis_labels("step", metric);
    for (auto& [name, pts] : by_series) {
      std::sort(pts.begin(), pts.end());
      plot.add_line(name, pts);
    }
    plot.save(output_dir + "/history_" + metric + ".svg");
  }
  if (log && warnings) *log << "[report] skipped " << warnings << " malformed metric lines\n";
  return warnings;
}

}  // namespace declab
