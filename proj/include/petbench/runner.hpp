#pragma once

#include "petbench/config.hpp"
#include "petbench/data.hpp"
#include "petbench/eval.hpp"

#include <filesystem>
#include <iosfwd>
#include <vector>

namespace petbench {

struct RunData {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Loads both splits from config.data_dir, draws the stratified subsets and
/// holds out the validation images from the training subset.
RunData prepare_data(const RunConfig& config);
/// Held-out validation count for a training subset of n images.
Index validation_size(const RunConfig& config, Index n);

struct RunOptions {
  bool write_artifacts = true;  // per-model directory under output_dir
  std::ostream* log = nullptr;  // progress lines, prefixed with the model name
};

/// Trains one model (float) under the shared protocol and reports on the
/// test split. Artifacts in output_dir/<Model>/: train_log.csv, report.json,
/// report.csv, confusion.txt, final.ckpt, best.ckpt. The report covers the
/// weights in final.ckpt, or best.ckpt when early stopping restored them.
MetricsReport run_train(const RunConfig& config, ModelKind kind, const RunData& data, const RunOptions& options = {});

/// Test-split report for weights loaded from `checkpoint` into a model built
/// from the config's spec for `kind`.
MetricsReport run_eval(const RunConfig& config, ModelKind kind, const std::filesystem::path& checkpoint,
                       const Dataset& test);

/// run_train for every selected model in order. A model that throws gets a
/// report with `error` set and the rest still run. Writes benchmark.csv,
/// benchmark.json and confusions.txt to output_dir when artifacts are on.
std::vector<MetricsReport> run_benchmark(const RunConfig& config, const RunData& data,
                                         const RunOptions& options = {});

/// Per-model confusion matrices and top-3 confusion pairs as plain text.
std::string render_confusions(std::span<const MetricsReport> reports);

}  // namespace petbench
