#include "petbench/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace petbench {

std::int64_t ConfusionMatrix::total() const {
  std::int64_t n = 0;
  for (const auto& row : counts) {
    for (auto c : row) n += c;
  }
  return n;
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t n = 0;
  for (int i = 0; i < kClasses; ++i) n += counts[i][i];
  return n;
}

std::int64_t ConfusionMatrix::row_sum(int t) const {
  std::int64_t n = 0;
  for (auto c : counts[t]) n += c;
  return n;
}

std::int64_t ConfusionMatrix::col_sum(int p) const {
  std::int64_t n = 0;
  for (const auto& row : counts) n += row[p];
  return n;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  for (int i = 0; i < kClasses; ++i) {
    for (int j = 0; j < kClasses; ++j) counts[i][j] += other.counts[i][j];
  }
  return *this;
}

void accumulate_confusion(ConfusionMatrix& cm, std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) {
    throw std::invalid_argument("confusion: " + std::to_string(truth.size()) + " true labels vs " +
                                std::to_string(predicted.size()) + " predictions");
  }
  auto check = [](int v, const char* what) {
    if (v < 0 || v >= kClasses) throw std::out_of_range(std::string(what) + " label " + std::to_string(v));
  };
  for (std::size_t i = 0; i < truth.size(); ++i) {
    check(truth[i], "true");
    check(predicted[i], "predicted");
  }
  for (std::size_t i = 0; i < truth.size(); ++i) ++cm.counts[truth[i]][predicted[i]];
}

MetricsReport compute_metrics(const ConfusionMatrix& cm, std::string model, RunMetadata meta) {
  const std::int64_t total = cm.total();
  if (total <= 0) throw std::invalid_argument("metrics of an empty confusion matrix");
  MetricsReport r;
  r.model = std::move(model);
  r.meta = meta;
  r.confusion = cm;
  double sp = 0.0, sr = 0.0, sf = 0.0;
  for (int c = 0; c < kClasses; ++c) {
    ClassMetrics& m = r.per_class[c];
    const auto tp = static_cast<double>(cm.counts[c][c]);
    const std::int64_t predicted = cm.col_sum(c);
    const std::int64_t actual = cm.row_sum(c);
    m.support = actual;
    m.precision = predicted > 0 ? tp / static_cast<double>(predicted) : 0.0;
    m.recall = actual > 0 ? tp / static_cast<double>(actual) : 0.0;
    const double denom = m.precision + m.recall;
    m.f1 = denom > 0 ? 2.0 * m.precision * m.recall / denom : 0.0;
    m.flagged = predicted == 0 || actual == 0;
    if (m.flagged) r.flagged_classes.push_back(c);
    sp += m.precision;
    sr += m.recall;
    sf += m.f1;
  }
  r.precision = sp / kClasses;
  r.recall = sr / kClasses;
  r.f1 = sf / kClasses;
  r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  r.top_confusions = top_confusions(cm, 3);
  return r;
}

std::vector<ConfusionPair> top_confusions(const ConfusionMatrix& cm, int k) {
  if (k < 1) throw std::invalid_argument("top_confusions needs k >= 1");
  std::vector<ConfusionPair> cells;
  for (int t = 0; t < kClasses; ++t) {
    for (int p = 0; p < kClasses; ++p) {
      if (t != p && cm.counts[t][p] > 0) cells.push_back({t, p, cm.counts[t][p]});
    }
  }
  std::stable_sort(cells.begin(), cells.end(),
                   [](const ConfusionPair& a, const ConfusionPair& b) { return a.count > b.count; });
  if (static_cast<int>(cells.size()) > k) cells.resize(static_cast<std::size_t>(k));
  return cells;
}

std::string format4(double value) {
  // Rounding on the decimal string of the exact binary value would turn
  // 0.99595 into 0.9959; go through an integer count of 1e-4 instead.
  const double scaled = std::round(value * 1e4);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", scaled / 1e4);
  return buf;
}

namespace {

double rounded4(double v) { return std::stod(format4(v)); }

nlohmann::ordered_json matrix_json(const ConfusionMatrix& cm) {
  auto rows = nlohmann::ordered_json::array();
  for (const auto& row : cm.counts) rows.push_back(row);
  return rows;
}

}  // namespace

nlohmann::ordered_json report_to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["model"] = r.model;
  if (!r.error.empty()) j["error"] = r.error;
  j["precision"] = rounded4(r.precision);
  j["recall"] = rounded4(r.recall);
  j["f1"] = rounded4(r.f1);
  j["accuracy"] = rounded4(r.accuracy);
  j["raw"] = {{"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1}, {"accuracy", r.accuracy}};
  auto per_class = nlohmann::ordered_json::array();
  for (int c = 0; c < kClasses; ++c) {
    const auto& m = r.per_class[c];
    per_class.push_back({{"class", c},
                         {"precision", m.precision},
                         {"recall", m.recall},
                         {"f1", m.f1},
                         {"support", m.support},
                         {"flagged", m.flagged}});
  }
  j["per_class"] = per_class;
  j["flagged_classes"] = r.flagged_classes;
  auto top = nlohmann::ordered_json::array();
  for (const auto& p : r.top_confusions) top.push_back({{"true", p.truth}, {"predicted", p.predicted}, {"count", p.count}});
  j["top_confusions"] = top;
  j["confusion_matrix"] = matrix_json(r.confusion);
  j["meta"] = {{"seed", r.meta.seed},
               {"epochs", r.meta.epochs},
               {"epochs_run", r.meta.epochs_run},
               {"train_size", r.meta.train_size},
               {"val_size", r.meta.val_size},
               {"test_size", r.meta.test_size},
               {"parameters", r.meta.parameters}};
  return j;
}

MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.model = j.at("model").get<std::string>();
  r.error = j.value("error", std::string());
  const auto& raw = j.at("raw");
  r.precision = raw.at("precision").get<double>();
  r.recall = raw.at("recall").get<double>();
  r.f1 = raw.at("f1").get<double>();
  r.accuracy = raw.at("accuracy").get<double>();
  const auto& pc = j.at("per_class");
  if (pc.size() != kClasses) throw std::invalid_argument("report needs 10 per_class entries");
  for (int c = 0; c < kClasses; ++c) {
    const auto& e = pc.at(c);
    r.per_class[c] = {e.at("precision").get<double>(), e.at("recall").get<double>(), e.at("f1").get<double>(),
                      e.at("support").get<std::int64_t>(), e.at("flagged").get<bool>()};
  }
  r.flagged_classes = j.at("flagged_classes").get<std::vector<int>>();
  for (const auto& p : j.at("top_confusions")) {
    r.top_confusions.push_back(
        {p.at("true").get<int>(), p.at("predicted").get<int>(), p.at("count").get<std::int64_t>()});
  }
  const auto& cm = j.at("confusion_matrix");
  if (cm.size() != kClasses) throw std::invalid_argument("confusion_matrix needs 10 rows");
  for (int t = 0; t < kClasses; ++t) {
    if (cm.at(t).size() != kClasses) throw std::invalid_argument("confusion_matrix rows need 10 entries");
    for (int p = 0; p < kClasses; ++p) r.confusion.counts[t][p] = cm.at(t).at(p).get<std::int64_t>();
  }
  const auto& m = j.at("meta");
  r.meta.seed = m.at("seed").get<std::uint64_t>();
  r.meta.epochs = m.at("epochs").get<int>();
  r.meta.epochs_run = m.at("epochs_run").get<int>();
  r.meta.train_size = m.at("train_size").get<std::int64_t>();
  r.meta.val_size = m.at("val_size").get<std::int64_t>();
  r.meta.test_size = m.at("test_size").get<std::int64_t>();
  r.meta.parameters = m.at("parameters").get<std::int64_t>();
  return r;
}

std::string reports_csv(std::span<const MetricsReport> reports) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : reports) {
    if (!r.error.empty()) {
      out += r.model + ",,,,\n";
      continue;
    }
    out += r.model + "," + format4(r.precision) + "," + format4(r.recall) + "," + format4(r.f1) + "," +
           format4(r.accuracy) + "\n";
  }
  return out;
}

std::string reports_json(std::span<const MetricsReport> reports) {
  nlohmann::ordered_json j;
  j["models"] = nlohmann::ordered_json::array();
  for (const auto& r : reports) j["models"].push_back(report_to_json(r));
  return j.dump(2) + "\n";
}

std::string serialize_report(const MetricsReport& report, ReportFormat format) {
  if (format == ReportFormat::csv) return reports_csv(std::span<const MetricsReport>(&report, 1));
  return report_to_json(report).dump(2) + "\n";
}

std::string render_confusion(const ConfusionMatrix& cm) {
  std::int64_t widest = 1;
  for (const auto& row : cm.counts) {
    for (auto c : row) widest = std::max(widest, c);
  }
  const int w = std::max<int>(static_cast<int>(std::to_string(widest).size()), 1) + 1;
  std::ostringstream os;
  os << "true\\pred";
  for (int p = 0; p < kClasses; ++p) os << std::string(static_cast<std::size_t>(w - 1), ' ') << p;
  os << '\n';
  for (int t = 0; t < kClasses; ++t) {
    os << std::string(8, ' ') << t;
    for (int p = 0; p < kClasses; ++p) {
      const std::string v = std::to_string(cm.counts[t][p]);
      os << std::string(static_cast<std::size_t>(w) - v.size(), ' ') << v;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace petbench
