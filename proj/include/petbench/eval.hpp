#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace petbench {

inline constexpr int kClasses = 10;

/// counts[true][predicted].
struct ConfusionMatrix {
  std::array<std::array<std::int64_t, kClasses>, kClasses> counts{};

  std::int64_t total() const;
  std::int64_t trace() const;
  std::int64_t row_sum(int t) const;
  std::int64_t col_sum(int p) const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;
};

/// Adds one count per (true, predicted) pair. Throws std::invalid_argument
/// for unequal lengths and std::out_of_range for a label outside [0,10),
/// leaving `cm` untouched in both cases.
void accumulate_confusion(ConfusionMatrix& cm, std::span<const int> truth, std::span<const int> predicted);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;  // true instances
  bool flagged = false;      // an empty denominator forced a 0
  bool operator==(const ClassMetrics&) const = default;
};

struct ConfusionPair {
  int truth = 0;
  int predicted = 0;
  std::int64_t count = 0;
  bool operator==(const ConfusionPair&) const = default;
};

struct RunMetadata {
  std::uint64_t seed = 42;
  int epochs = 0;      // requested
  int epochs_run = 0;  // after early stopping
  std::int64_t train_size = 0;
  std::int64_t val_size = 0;
  std::int64_t test_size = 0;
  std::int64_t parameters = 0;
  bool operator==(const RunMetadata&) const = default;
};

struct MetricsReport {
  std::string model;
  double precision = 0.0;  // macro
  double recall = 0.0;     // macro
  double f1 = 0.0;         // macro
  double accuracy = 0.0;
  std::array<ClassMetrics, kClasses> per_class{};
  std::vector<int> flagged_classes;
  ConfusionMatrix confusion;
  std::vector<ConfusionPair> top_confusions;
  RunMetadata meta;
  std::string error;  // set when the run failed; metrics are then meaningless

  bool operator==(const MetricsReport&) const = default;
};

/// Per-class precision = diag / column sum, recall = diag / row sum, F1 their
/// harmonic mean; macro values are plain means over all ten classes, with
/// empty-denominator classes contributing 0 and listed in flagged_classes.
/// Throws std::invalid_argument on an empty matrix.
MetricsReport compute_metrics(const ConfusionMatrix& cm, std::string model = {}, RunMetadata meta = {});

/// Largest off-diagonal cells, count descending then (true, predicted)
/// ascending; zero cells are never listed.
std::vector<ConfusionPair> top_confusions(const ConfusionMatrix& cm, int k = 3);

/// Value rounded half away from zero to 4 decimals, e.g. "0.9959".
std::string format4(double value);

enum class ReportFormat { json, csv };

nlohmann::ordered_json report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);
std::string serialize_report(const MetricsReport& report, ReportFormat format);

inline constexpr const char* kCsvHeader = "model,precision,recall,f1,accuracy";
/// Header plus one row per report, in the given order.
std::string reports_csv(std::span<const MetricsReport> reports);
/// {"models": [...]} with each report as in report_to_json.
std::string reports_json(std::span<const MetricsReport> reports);

/// Fixed-width table with true classes down the side and predictions across.
std::string render_confusion(const ConfusionMatrix& cm);

}  // namespace petbench
