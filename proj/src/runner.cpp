#include "petbench/runner.hpp"

#include "petbench/checkpoint.hpp"

#include <chrono>
#include <fstream>
#include <ostream>

namespace petbench {

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

Dataset load_split(const RunConfig& config, Split split) {
  const IdxPaths paths = locate_idx(config.data_dir, split);
  return load_idx(paths.images, paths.labels, split);
}

RunMetadata metadata(const RunConfig& config, ModelKind kind, const RunData& data) {
  RunMetadata m;
  m.seed = config.train.seed;
  m.epochs = train_config(config, kind).epochs;
  m.train_size = data.train.size();
  m.val_size = data.val.size();
  m.test_size = data.test.size();
  return m;
}

}  // namespace

Index validation_size(const RunConfig& config, Index n) { return config.val_size > 0 ? config.val_size : n / 12; }

RunData prepare_data(const RunConfig& config) {
  Dataset train_all = load_split(config, Split::train);
  Dataset test_all = load_split(config, Split::test);
  const std::uint64_t seed = config.train.seed;
  if (config.train_subset > train_all.size()) {
    throw std::invalid_argument("train_subset " + std::to_string(config.train_subset) + " exceeds the " +
                                std::to_string(train_all.size()) + " training images");
  }
  if (config.test_subset > test_all.size()) {
    throw std::invalid_argument("test_subset " + std::to_string(config.test_subset) + " exceeds the " +
                                std::to_string(test_all.size()) + " test images");
  }
  Dataset train = config.train_subset > 0 ? subset(train_all, config.train_subset, seed) : std::move(train_all);
  RunData out;
  out.test = config.test_subset > 0 ? subset(test_all, config.test_subset, seed) : std::move(test_all);
  out.test.split = Split::test;
  const Index n_val = validation_size(config, train.size());
  if (n_val < 1 || n_val >= train.size()) {
    throw std::invalid_argument("validation size " + std::to_string(n_val) + " leaves no training images");
  }
  TrainValSplit parts = split_validation(train, n_val, seed);
  out.train = std::move(parts.train);
  out.val = std::move(parts.val);
  return out;
}

MetricsReport run_train(const RunConfig& config, ModelKind kind, const RunData& data, const RunOptions& options) {
  const ModelSpec spec = model_spec(config, kind);
  const TrainConfig tc = train_config(config, kind);
  const std::string model_name(name(kind));
  auto model = build_model<float>(spec, tc.seed);

  const std::filesystem::path dir = config.output_dir / model_name;
  std::ofstream log_file;
  if (options.write_artifacts) {
    std::filesystem::create_directories(dir);
    log_file.open(dir / "train_log.csv", std::ios::binary | std::ios::trunc);
    if (!log_file) throw std::runtime_error("cannot write " + (dir / "train_log.csv").string());
    log_file << kEpochLogHeader << '\n';
  }
  if (options.log) *options.log << model_name << ": " << model->parameter_count() << " parameters\n";

  // Restoring is done here so the last-epoch weights can be saved first.
  TrainConfig run_tc = tc;
  run_tc.restore_best = false;
  const auto start = std::chrono::steady_clock::now();
  TrainResult<float> result = train(*model, data.train, data.val, run_tc, [&](const EpochLog& e) {
    const std::string line = format_epoch_log(e);
    if (log_file.is_open()) log_file << line << '\n' << std::flush;
    if (options.log) *options.log << model_name << " " << line << '\n' << std::flush;
  });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const bool use_best = tc.early_stopping && tc.restore_best && !result.best_values.empty();
  if (options.write_artifacts) save_checkpoint(*model, dir / "final.ckpt");
  if (use_best) {
    restore(model->parameters(), result.best_values);
    if (options.write_artifacts) save_checkpoint(*model, dir / "best.ckpt");
  } else if (options.write_artifacts) {
    if (result.best_values.empty()) {
      save_checkpoint(*model, dir / "best.ckpt");
    } else {
      auto current = snapshot(model->parameters());
      restore(model->parameters(), result.best_values);
      save_checkpoint(*model, dir / "best.ckpt");
      restore(model->parameters(), current);
    }
  }

  EvalResult test = evaluate(*model, data.test, tc.eval_batch_size);
  RunMetadata meta = metadata(config, kind, data);
  meta.epochs_run = result.epochs_run;
  meta.parameters = model->parameter_count();
  MetricsReport report = compute_metrics(test.confusion, model_name, meta);

  if (options.write_artifacts) {
    write_text(dir / "report.json", serialize_report(report, ReportFormat::json));
    write_text(dir / "report.csv", serialize_report(report, ReportFormat::csv));
    write_text(dir / "confusion.txt", render_confusion(report.confusion));
  }
  if (options.log) {
    *options.log << model_name << " test accuracy " << format4(report.accuracy) << " macro F1 " << format4(report.f1)
                 << " (" << static_cast<long long>(seconds) << " s)\n";
  }
  return report;
}

MetricsReport run_eval(const RunConfig& config, ModelKind kind, const std::filesystem::path& checkpoint,
                       const Dataset& test) {
  const TrainConfig tc = train_config(config, kind);
  auto model = build_model<float>(model_spec(config, kind), tc.seed);
  load_checkpoint(*model, checkpoint);
  EvalResult r = evaluate(*model, test, tc.eval_batch_size);
  RunMetadata meta;
  meta.seed = tc.seed;
  meta.epochs = tc.epochs;
  meta.test_size = test.size();
  meta.parameters = model->parameter_count();
  return compute_metrics(r.confusion, std::string(name(kind)), meta);
}

std::vector<MetricsReport> run_benchmark(const RunConfig& config, const RunData& data, const RunOptions& options) {
  std::vector<MetricsReport> reports;
  for (ModelKind kind : selected_models(config)) {
    try {
      reports.push_back(run_train(config, kind, data, options));
    } catch (const std::exception& e) {
      MetricsReport failed;
      failed.model = std::string(name(kind));
      failed.error = e.what();
      failed.meta = metadata(config, kind, data);
      if (options.log) *options.log << failed.model << " FAILED: " << e.what() << '\n';
      reports.push_back(std::move(failed));
    }
  }
  if (options.write_artifacts) {
    std::filesystem::create_directories(config.output_dir);
    write_text(config.output_dir / "benchmark.csv", reports_csv(reports));
    write_text(config.output_dir / "benchmark.json", reports_json(reports));
    write_text(config.output_dir / "confusions.txt", render_confusions(reports));
  }
  return reports;
}

std::string render_confusions(std::span<const MetricsReport> reports) {
  std::string out;
  for (const auto& r : reports) {
    out += "== " + r.model + " ==\n";
    if (!r.error.empty()) {
      out += "failed: " + r.error + "\n\n";
      continue;
    }
    out += render_confusion(r.confusion);
    out += "top confusions (true -> predicted: count):";
    if (r.top_confusions.empty()) out += " none";
    out += "\n";
    for (const auto& p : r.top_confusions) {
      out += "  " + std::to_string(p.truth) + " -> " + std::to_string(p.predicted) + ": " + std::to_string(p.count) +
             "\n";
    }
    out += "\n";
  }
  return out;
}

}  // namespace petbench
