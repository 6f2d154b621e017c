#pragma once

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sstbench/common.hpp"
#include "sstbench/oracle.hpp"

namespace sstbench {

// One attacked sample. Everything here is deterministic given the
// experiment seed, so rows can be compared byte-for-byte across reruns.
struct SampleRow {
  int sample_index = -1;
  int true_label = -1;
  int target_label = -1;
  bool success = false;
  double l2 = 0.0;
  double linf = 0.0;
  int iterations = 0;
  uint64_t queries = 0;
  bool detector_evaded = false;
};

constexpr const char* kReportCsvHeader =
    "sample_index,true_label,target_label,success,l2,linf,iterations,queries,detector_evaded";
constexpr int kReportCsvVersion = 1;

inline std::string row_to_csv(const SampleRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%d,%d,%d,%.6f,%.6f,%d,%" PRIu64 ",%d", r.sample_index,
                r.true_label, r.target_label, r.success ? 1 : 0, r.l2, r.linf, r.iterations,
                r.queries, r.detector_evaded ? 1 : 0);
  return buf;
}

inline SampleRow row_from_csv(const std::string& line) {
  SampleRow r;
  int success = 0, evaded = 0;
  unsigned long long queries = 0;
  int got = std::sscanf(line.c_str(), "%d,%d,%d,%d,%lf,%lf,%d,%llu,%d", &r.sample_index,
                        &r.true_label, &r.target_label, &success, &r.l2, &r.linf, &r.iterations,
                        &queries, &evaded);
  if (got != 9) throw FormatError("bad report row: " + line);
  r.success = success != 0;
  r.queries = queries;
  r.detector_evaded = evaded != 0;
  return r;
}

// ---- aggregates (mean norms are over successes only) ----

inline double success_rate(const std::vector<SampleRow>& rows) {
  if (rows.empty()) throw ValidationError("success_rate over empty rows");
  int64_t s = 0;
  for (const auto& r : rows) s += r.success ? 1 : 0;
  return static_cast<double>(s) / static_cast<double>(rows.size());
}

inline std::optional<double> mean_l2(const std::vector<SampleRow>& rows) {
  if (rows.empty()) throw ValidationError("mean_l2 over empty rows");
  double sum = 0.0;
  int64_t n = 0;
  for (const auto& r : rows)
    if (r.success) {
      sum += r.l2;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

inline std::optional<double> mean_linf(const std::vector<SampleRow>& rows) {
  if (rows.empty()) throw ValidationError("mean_linf over empty rows");
  double sum = 0.0;
  int64_t n = 0;
  for (const auto& r : rows)
    if (r.success) {
      sum += r.linf;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

struct ExperimentReport {
  std::string name;
  uint64_t seed = 0;
  std::string config_hash;
  std::vector<SampleRow> rows;
  QueryLogSnapshot queries;
  double wall_seconds = 0.0;  // informational only, never part of the rows

  double rate() const { return success_rate(rows); }

  std::string rows_csv() const {
    std::ostringstream os;
    os << "# sstbench-report v" << kReportCsvVersion << " name=" << name << " seed=" << seed
       << " config=" << config_hash << "\n";
    os << kReportCsvHeader << "\n";
    for (const auto& r : rows) os << row_to_csv(r) << "\n";
    return os.str();
  }

  std::string summary() const {
    std::ostringstream os;
    os << "experiment: " << name << "\n";
    os << "seed: " << seed << "  config: " << config_hash << "\n";
    os << "samples: " << rows.size() << "\n";
    char buf[160];
    std::snprintf(buf, sizeof(buf), "success rate: %.2f%%", 100.0 * rate());
    os << buf << "\n";
    auto l2 = mean_l2(rows);
    auto li = mean_linf(rows);
    if (l2.has_value()) {
      std::snprintf(buf, sizeof(buf), "mean L2 (successes): %.4f", *l2);
      os << buf << "\n";
    } else {
      os << "mean L2 (successes): n/a\n";
    }
    if (li.has_value()) {
      std::snprintf(buf, sizeof(buf), "mean Linf (successes): %.4f", *li);
      os << buf << "\n";
    } else {
      os << "mean Linf (successes): n/a\n";
    }
    os << "oracle images: " << queries.images << " (substitute-training "
       << queries.images_substitute << ", crafting " << queries.images_crafting << ")\n";
    std::snprintf(buf, sizeof(buf), "wall clock: %.1fs", wall_seconds);
    os << buf << "\n";
    return os.str();
  }

  void save_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write report " + path);
    out << rows_csv();
    if (!out) throw IoError("short write to " + path);
  }

  static ExperimentReport load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report " + path);
    ExperimentReport rep;
    std::string line;
    bool seen_header = false;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (line[0] == '#') {
        if (line.find("sstbench-report") == std::string::npos)
          throw FormatError("not a report file: " + path);
        auto pos = line.find("name=");
        if (pos != std::string::npos)
          rep.name = line.substr(pos + 5, line.find(' ', pos + 5) - pos - 5);
        pos = line.find("seed=");
        if (pos != std::string::npos) rep.seed = std::stoull(line.substr(pos + 5));
        pos = line.find("config=");
        if (pos != std::string::npos) rep.config_hash = line.substr(pos + 7);
        continue;
      }
      if (!seen_header) {
        if (line != kReportCsvHeader) throw FormatError("unexpected report schema in " + path);
        seen_header = true;
        continue;
      }
      rep.rows.push_back(row_from_csv(line));
    }
    if (!seen_header) throw FormatError("report has no header: " + path);
    return rep;
  }
};

struct Comparison {
  double rate_a = 0.0, rate_b = 0.0;
  std::optional<double> l2_a, l2_b;
  double rate_ratio = 0.0;  // a / b, 0 when b has no successes

  std::string table(const std::string& name_a, const std::string& name_b) const {
    std::ostringstream os;
    char buf[200];
    std::snprintf(buf, sizeof(buf), "%-24s %12s %12s\n", "", name_a.c_str(), name_b.c_str());
    os << buf;
    std::snprintf(buf, sizeof(buf), "%-24s %11.2f%% %11.2f%%\n", "success rate", 100 * rate_a,
                  100 * rate_b);
    os << buf;
    auto fmt = [](const std::optional<double>& v) {
      char b[32];
      if (v.has_value())
        std::snprintf(b, sizeof(b), "%12.4f", *v);
      else
        std::snprintf(b, sizeof(b), "%12s", "n/a");
      return std::string(b);
    };
    os << "mean L2 (successes)      " << fmt(l2_a) << " " << fmt(l2_b) << "\n";
    if (rate_b > 0) {
      std::snprintf(buf, sizeof(buf), "%-24s %12.2f\n", "success ratio a/b", rate_ratio);
      os << buf;
    }
    if (l2_a.has_value() && l2_b.has_value() && *l2_b > 0) {
      std::snprintf(buf, sizeof(buf), "%-24s %12.2f\n", "mean-L2 ratio a/b", *l2_a / *l2_b);
      os << buf;
    }
    return os.str();
  }
};

// Side-by-side aggregates over the same sample selection; mismatched sample
// sets are an error.
inline Comparison compare_report(const ExperimentReport& a, const ExperimentReport& b) {
  if (a.rows.size() != b.rows.size())
    throw ValidationError("compare_report: sample counts differ");
  for (size_t i = 0; i < a.rows.size(); ++i)
    if (a.rows[i].sample_index != b.rows[i].sample_index)
      throw ValidationError("compare_report: sample selections differ at row " +
                            std::to_string(i));
  Comparison c;
  c.rate_a = success_rate(a.rows);
  c.rate_b = success_rate(b.rows);
  c.l2_a = mean_l2(a.rows);
  c.l2_b = mean_l2(b.rows);
  c.rate_ratio = c.rate_b > 0 ? c.rate_a / c.rate_b : 0.0;
  return c;
}

}  // namespace sstbench
