// petbench: train, evaluate and compare the digit classifiers.
#include "petbench/config.hpp"
#include "petbench/gradsuite.hpp"
#include "petbench/runner.hpp"

#include <CLI11.hpp>

#include <functional>
#include <iostream>
#include <memory>

using namespace petbench;
using nlohmann::json;

namespace {

using Applier = std::function<void(json&)>;

struct Common {
  std::string config_file;
  bool full = false;
  std::vector<std::string> models;
  std::vector<std::string> sets;
  std::vector<Applier> appliers;
  CLI::Option* models_opt = nullptr;
};

template <typename T>
void bind(CLI::App* app, Common& c, const std::string& flag, const std::string& key, const std::string& help) {
  auto value = std::make_shared<T>();
  CLI::Option* opt = app->add_option(flag, *value, help);
  c.appliers.push_back([opt, value, key](json& j) {
    if (opt->count() > 0) j[key] = *value;
  });
}

void add_common(CLI::App* app, Common& c, bool many_models) {
  app->add_option("-c,--config", c.config_file, "JSON config file")->check(CLI::ExistingFile);
  app->add_flag("--full", c.full, "full-scale profile: whole splits, 50 epochs, early stopping");
  c.models_opt = app->add_option("-m,--model", c.models,
                                 many_models ? "model(s) to run, default all" : "model to run");
  bind<int>(app, c, "--epochs", "epochs", "training epochs (0 = evaluate the initialized model)");
  bind<Index>(app, c, "--batch-size", "batch_size", "training batch size");
  bind<Index>(app, c, "--eval-batch-size", "eval_batch_size", "validation/test batch size");
  bind<std::uint64_t>(app, c, "--seed", "seed", "seed for init, subsets, shuffling and dropout");
  bind<double>(app, c, "--lr", "lr", "AdamW base learning rate (replaced by the schedule each step)");
  bind<double>(app, c, "--weight-decay", "weight_decay", "AdamW decoupled weight decay");
  bind<double>(app, c, "--beta1", "beta1", "AdamW beta1");
  bind<double>(app, c, "--beta2", "beta2", "AdamW beta2");
  bind<double>(app, c, "--eps", "eps", "AdamW epsilon");
  bind<std::string>(app, c, "--schedule", "schedule", "one_cycle | exponential | constant");
  bind<double>(app, c, "--max-lr", "max_lr", "peak learning rate");
  bind<double>(app, c, "--pct-start", "pct_start", "one-cycle warm-up fraction");
  bind<double>(app, c, "--div-factor", "div_factor", "one-cycle initial lr divisor");
  bind<double>(app, c, "--final-div-factor", "final_div_factor", "one-cycle final lr divisor");
  bind<double>(app, c, "--gamma", "gamma", "exponential schedule decay per epoch");
  bind<double>(app, c, "--clip-norm", "clip_norm", "global gradient norm limit (<= 0 disables)");
  bind<bool>(app, c, "--early-stopping", "early_stopping", "stop on a validation-loss plateau (true/false)");
  bind<int>(app, c, "--patience", "patience", "early-stopping patience in epochs");
  bind<double>(app, c, "--min-delta", "min_delta", "smallest validation-loss drop that counts");
  bind<std::string>(app, c, "--data", "data_dir", "dataset root (default $PETBENCH_DATA or data/desk)");
  bind<Index>(app, c, "--train-subset", "train_subset", "stratified training subset size (0 = all)");
  bind<Index>(app, c, "--test-subset", "test_subset", "stratified test subset size (0 = all)");
  bind<Index>(app, c, "--val-size", "val_size", "validation images held out of training (0 = n/12)");
  bind<std::string>(app, c, "-o,--out", "output_dir", "output directory");
  app->add_option("--set", c.sets, "per-model override MODEL.key[.sub]=value, e.g. JEM.jem.langevin_steps=3");
}

json parse_set(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("--set expects MODEL.key=value, got '" + text + "'");
  std::vector<std::string> path;
  std::string lhs = text.substr(0, eq);
  for (std::size_t start = 0;;) {
    const auto dot = lhs.find('.', start);
    path.push_back(lhs.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (path.size() < 2) throw ConfigError("--set expects MODEL.key=value, got '" + text + "'");
  const std::string rhs = text.substr(eq + 1);
  json value = json::parse(rhs, nullptr, false);
  if (value.is_discarded()) value = rhs;  // bare words are strings
  json leaf = value;
  for (std::size_t i = path.size(); i-- > 1;) leaf = json{{path[i], leaf}};
  return json{{"overrides", {{path[0], leaf}}}};
}

RunConfig resolve(const Common& c) {
  json defaults = default_config_json(c.full ? Profile::full : Profile::desk);
  defaults["data_dir"] = data_root_from_env(defaults["data_dir"].get<std::string>()).string();
  json file = c.config_file.empty() ? json::object() : read_config_file(c.config_file);
  json cli = json::object();
  for (const auto& apply : c.appliers) apply(cli);
  if (c.models_opt->count() > 0) cli["models"] = c.models;
  std::vector<json> layers{defaults, file, cli};
  for (const auto& s : c.sets) layers.push_back(parse_set(s));
  return resolve_config(layers);
}

ModelKind single_model(const RunConfig& config, const char* command) {
  if (config.models.size() != 1) {
    throw ConfigError(std::string(command) + " needs exactly one model (--model NAME)");
  }
  return config.models.front();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"petbench: digit classifier benchmark"};
  app.require_subcommand(1);

  Common train_opts, eval_opts, bench_opts, show_opts;
  CLI::App* train_cmd = app.add_subcommand("train", "train one model and report on the test split");
  add_common(train_cmd, train_opts, false);

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval_cmd, eval_opts, false);
  std::string checkpoint;
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

  CLI::App* bench_cmd = app.add_subcommand("benchmark", "train and evaluate every model in turn");
  add_common(bench_cmd, bench_opts, true);

  CLI::App* show_cmd = app.add_subcommand("config", "print the resolved configuration");
  add_common(show_cmd, show_opts, true);

  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "finite-difference checks of every layer and model");
  std::uint64_t grad_seed = 42;
  double tolerance = kGradcheckTolerance;
  grad_cmd->add_option("--seed", grad_seed, "seed for the tiny models and inputs");
  grad_cmd->add_option("--tolerance", tolerance, "largest accepted relative discrepancy");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*grad_cmd) {
      auto cases = gradcheck_all(grad_seed);
      std::cout << format_gradcheck_table(cases, tolerance);
      const bool ok = all_pass(cases, tolerance);
      std::cout << (ok ? "all checks passed" : "gradient check FAILED") << " (tolerance " << tolerance << ")\n";
      return ok ? 0 : 1;
    }
    if (*show_cmd) {
      std::cout << config_to_json(resolve(show_opts)).dump(2) << '\n';
      return 0;
    }
    if (*train_cmd) {
      RunConfig config = resolve(train_opts);
      ModelKind kind = single_model(config, "train");
      RunData data = prepare_data(config);
      RunOptions options;
      options.log = &std::cerr;
      MetricsReport report = run_train(config, kind, data, options);
      std::cout << serialize_report(report, ReportFormat::csv) << render_confusions(std::span(&report, 1));
      return 0;
    }
    if (*eval_cmd) {
      RunConfig config = resolve(eval_opts);
      ModelKind kind = single_model(config, "eval");
      RunData data = prepare_data(config);
      MetricsReport report = run_eval(config, kind, checkpoint, data.test);
      std::cout << serialize_report(report, ReportFormat::json);
      return 0;
    }
    if (*bench_cmd) {
      RunConfig config = resolve(bench_opts);
      RunData data = prepare_data(config);
      RunOptions options;
      options.log = &std::cerr;
      auto reports = run_benchmark(config, data, options);
      std::cout << reports_csv(reports) << '\n' << render_confusions(reports);
      bool any_failed = false;
      for (const auto& r : reports) any_failed = any_failed || !r.error.empty();
      return any_failed ? 3 : 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
