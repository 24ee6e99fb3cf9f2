#include "petbench/checkpoint.hpp"
#include "petbench/config.hpp"
#include "petbench/runner.hpp"
#include "petbench/train.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

namespace petbench {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("petbench_run_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Ten easy classes: a bright horizontal bar whose row encodes the label,
// plus pixel noise.
Dataset bars(Index n, std::uint64_t seed, Split split) {
  Dataset d;
  d.split = split;
  std::mt19937_64 rng(seed);
  for (Index i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 10);
    d.labels.push_back(static_cast<std::uint8_t>(label));
    for (Index r = 0; r < 28; ++r) {
      for (Index c = 0; c < 28; ++c) {
        int v = static_cast<int>(rng() % 40);
        if (r == 3 + 2 * label && c > 4 && c < 24) v = 255;
        d.images.push_back(static_cast<std::uint8_t>(v));
      }
    }
  }
  return d;
}

fs::path write_bars(const std::string& name, Index n_train = 300, Index n_test = 100) {
  fs::path dir = scratch(name);
  save_idx(bars(n_train, 1, Split::train), dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
  save_idx(bars(n_test, 2, Split::test), dir / "t10k-images-idx3-ubyte.gz", dir / "t10k-labels-idx1-ubyte.gz");
  return dir;
}

json small_overrides() {
  return json::parse(R"({
    "MLP": {"hidden_dims": [16, 8]},
    "CNN": {"hidden_dims": [2, 3], "dense_dim": 8},
    "LSTM": {"hidden_dims": [6], "layers": 1},
    "GRU": {"hidden_dims": [6], "layers": 1},
    "Transformer": {"hidden_dims": [8], "heads": 2, "ffn_dim": 8, "layers": 1},
    "JEM": {"hidden_dims": [2, 2, 2], "dense_dim": 8, "jem": {"langevin_steps": 2}},
    "FastKAN": {"hidden_dims": [6]},
    "EfficientKAN": {"hidden_dims": [6]},
    "PETNN_Sigmoid": {"hidden_dims": [6], "cell_dim": 3, "layers": 1},
    "PETNN_GELU": {"hidden_dims": [6], "cell_dim": 3, "layers": 1},
    "PETNN_SiLU": {"hidden_dims": [6], "cell_dim": 3, "layers": 1}
  })");
}

RunConfig small_config(const fs::path& data, const fs::path& out, int epochs = 2) {
  json j = default_config_json();
  j["data_dir"] = data.string();
  j["output_dir"] = out.string();
  j["train_subset"] = 0;
  j["test_subset"] = 0;
  j["epochs"] = epochs;
  j["batch_size"] = 32;
  j["max_lr"] = 5e-3;
  j["overrides"] = small_overrides();
  return parse_config(j);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------- config

TEST(Config, DefaultsFollowTrainingProtocol) {
  RunConfig c = parse_config(default_config_json());
  EXPECT_EQ(c.train.seed, 42u);
  EXPECT_EQ(c.train.epochs, 5);
  EXPECT_EQ(c.train.batch_size, 128);
  EXPECT_EQ(c.train.eval_batch_size, 1000);
  EXPECT_EQ(c.train.adamw.lr, 3e-4);
  EXPECT_EQ(c.train.adamw.weight_decay, 1e-4);
  EXPECT_EQ(c.train.schedule.max_lr, 5e-4);
  EXPECT_EQ(c.train.clip_norm, 1.0);
  EXPECT_EQ(c.train_subset, 6000);
  EXPECT_EQ(c.test_subset, 1000);
  EXPECT_FALSE(c.train.early_stopping);
  EXPECT_EQ(selected_models(c).size(), 11u);
}

TEST(Config, FullProfile) {
  RunConfig c = parse_config(default_config_json(Profile::full));
  EXPECT_EQ(c.train.epochs, 50);
  EXPECT_TRUE(c.train.early_stopping);
  EXPECT_EQ(c.train_subset, 0);
  EXPECT_EQ(c.test_subset, 0);
}

TEST(Config, UnknownKeysRejected) {
  EXPECT_THROW(parse_config(json{{"epoch", 3}}), ConfigError);
  EXPECT_THROW(parse_config(json{{"overrides", {{"MLP", {{"width", 3}}}}}}), ConfigError);
  EXPECT_THROW(parse_config(json{{"overrides", {{"JEM", {{"jem", {{"steps", 3}}}}}}}}), ConfigError);
  EXPECT_THROW(parse_config(json{{"overrides", {{"ResNet", json::object()}}}}), ConfigError);
  EXPECT_THROW(parse_config(json{{"models", {"MLP", "VGG"}}}), ConfigError);
  try {
    parse_config(json{{"learning_rate", 1e-3}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
  }
}

TEST(Config, BadValuesRejected) {
  EXPECT_THROW(parse_config(json{{"epochs", -1}}), ConfigError);
  EXPECT_THROW(parse_config(json{{"epochs", "five"}}), ConfigError);
  EXPECT_THROW(parse_config(json{{"pct_start", 1.5}}), ConfigError);
  EXPECT_THROW(parse_config(json{{"schedule", "cosine"}}), ConfigError);
  EXPECT_THROW(parse_config(json{{"overrides", {{"Transformer", {{"heads", 3}}}}}}), ConfigError);
  EXPECT_THROW(parse_config(json{{"overrides", {{"MLP", {{"dropout", 1.0}}}}}}), ConfigError);
  EXPECT_THROW(parse_config(json{{"overrides", {{"PETNN_GELU", {{"activation", "swish"}}}}}}), ConfigError);
}

TEST(Config, PrecedenceCliOverFileOverDefaults) {
  json defaults = default_config_json();
  json file = {{"epochs", 7}, {"seed", 5}, {"overrides", {{"JEM", {{"jem", {{"langevin_steps", 3}}}}}}}};
  json cli = {{"epochs", 9}, {"overrides", {{"JEM", {{"jem", {{"noise_scale", 0.01}}}}}}}};
  RunConfig c = resolve_config({defaults, file, cli});
  EXPECT_EQ(c.train.epochs, 9);
  EXPECT_EQ(c.train.seed, 5u);
  EXPECT_EQ(c.train.batch_size, 128);
  ModelSpec jem = model_spec(c, ModelKind::jem);
  EXPECT_EQ(jem.jem.langevin_steps, 3);  // nested objects merge
  EXPECT_EQ(jem.jem.noise_scale, 0.01);
}

TEST(Config, JsonRoundTrip) {
  json j = default_config_json();
  j["models"] = {"cnn", "petnn-gelu"};
  j["overrides"] = small_overrides();
  RunConfig c = parse_config(j);
  RunConfig back = parse_config(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  EXPECT_EQ(back.models, (std::vector<ModelKind>{ModelKind::cnn, ModelKind::petnn_gelu}));
}

TEST(Config, OverridesShapeSpecAndSchedule) {
  json j = default_config_json();
  j["overrides"] = {{"FastKAN", {{"schedule", "exponential"}, {"gamma", 0.9}, {"kan", {{"rbf_points", 6}}}}},
                    {"PETNN_Sigmoid", {{"activation", "tanh"}}}};
  RunConfig c = parse_config(j);
  EXPECT_EQ(train_config(c, ModelKind::fast_kan).schedule.kind, ScheduleKind::exponential);
  EXPECT_EQ(train_config(c, ModelKind::fast_kan).schedule.gamma, 0.9);
  EXPECT_EQ(train_config(c, ModelKind::efficient_kan).schedule.kind, ScheduleKind::one_cycle);
  EXPECT_EQ(model_spec(c, ModelKind::fast_kan).kan.rbf_points, 6);
  EXPECT_EQ(petnn_activation(model_spec(c, ModelKind::petnn_sigmoid)), Activation::tanh);
  EXPECT_EQ(model_spec(c, ModelKind::cnn).hidden_dims, (std::vector<Index>{32, 64}));
}

TEST(Config, TransformerWarmupCapped) {
  RunConfig c = parse_config(default_config_json());
  EXPECT_EQ(train_config(c, ModelKind::transformer).schedule.pct_start, 0.3);
  c = parse_config(default_config_json(Profile::full));
  EXPECT_DOUBLE_EQ(train_config(c, ModelKind::transformer).schedule.pct_start, 0.1);
  EXPECT_EQ(train_config(c, ModelKind::cnn).schedule.pct_start, 0.3);
}

TEST(Config, DataRootFromEnvironment) {
  ::unsetenv("PETBENCH_DATA");
  EXPECT_EQ(data_root_from_env("data/desk"), fs::path("data/desk"));
  ::setenv("PETBENCH_DATA", "/srv/bhdd", 1);
  EXPECT_EQ(data_root_from_env("data/desk"), fs::path("/srv/bhdd"));
  ::unsetenv("PETBENCH_DATA");
}

TEST(Config, MissingFileNamesPath) {
  try {
    read_config_file("/nonexistent/run.json");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/run.json"), std::string::npos);
  }
}

// ------------------------------------------------------------ checkpoint

TEST(Checkpoint, RoundTripReproducesLogits) {
  fs::path dir = scratch("ckpt");
  auto a = build_model<float>(default_spec(ModelKind::petnn_gelu), 1);
  auto b = build_model<float>(default_spec(ModelKind::petnn_gelu), 2);
  save_checkpoint(*a, dir / "m.ckpt");
  load_checkpoint(*b, dir / "m.ckpt");
  for (std::size_t i = 0; i < a->parameters().size(); ++i) {
    EXPECT_TRUE((a->parameters()[i].tensor.value() == b->parameters()[i].tensor.value()).all());
  }
  EXPECT_EQ(shape_fingerprint(a->parameters()), shape_fingerprint(b->parameters()));
}

TEST(Checkpoint, RefusesShapeMismatch) {
  fs::path dir = scratch("ckpt_mismatch");
  auto a = build_model<float>(default_spec(ModelKind::mlp), 1);
  save_checkpoint(*a, dir / "m.ckpt");
  ModelSpec wider = default_spec(ModelKind::mlp);
  wider.hidden_dims = {300, 128};
  auto b = build_model<float>(wider, 1);
  const auto before = b->parameters()[0].tensor.value();
  EXPECT_THROW(load_checkpoint(*b, dir / "m.ckpt"), CheckpointError);
  EXPECT_TRUE((b->parameters()[0].tensor.value() == before).all());
  auto cnn = build_model<float>(default_spec(ModelKind::cnn), 1);
  EXPECT_THROW(load_checkpoint(*cnn, dir / "m.ckpt"), CheckpointError);
  auto dbl = build_model<double>(default_spec(ModelKind::mlp), 1);
  EXPECT_THROW(load_checkpoint(*dbl, dir / "m.ckpt"), CheckpointError);
}

TEST(Checkpoint, MissingAndCorruptFiles) {
  fs::path dir = scratch("ckpt_bad");
  auto m = build_model<float>(default_spec(ModelKind::mlp), 1);
  try {
    load_checkpoint(*m, dir / "absent.ckpt");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("absent.ckpt"), std::string::npos);
  }
  save_checkpoint(*m, dir / "m.ckpt");
  std::string bytes = slurp(dir / "m.ckpt");
  std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 10);
  EXPECT_THROW(load_checkpoint(*m, dir / "short.ckpt"), CheckpointError);
  std::ofstream(dir / "long.ckpt", std::ios::binary) << bytes << "xx";
  EXPECT_THROW(load_checkpoint(*m, dir / "long.ckpt"), CheckpointError);
  bytes[0] = 'X';
  std::ofstream(dir / "magic.ckpt", std::ios::binary) << bytes;
  EXPECT_THROW(load_checkpoint(*m, dir / "magic.ckpt"), CheckpointError);
}

// ---------------------------------------------------------------- train

TEST(Train, IdenticalSeedsGiveIdenticalLogs) {
  Dataset tr = bars(200, 1, Split::train);
  Dataset va = bars(50, 3, Split::val);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 32;
  ModelSpec spec = default_spec(ModelKind::mlp);
  spec.hidden_dims = {16, 8};
  std::vector<std::string> logs[2];
  for (auto& log : logs) {
    auto m = build_model<float>(spec, tc.seed);
    train(*m, tr, va, tc, [&](const EpochLog& e) { log.push_back(format_epoch_log(e)); });
  }
  EXPECT_EQ(logs[0], logs[1]);
  ASSERT_EQ(logs[0].size(), 2u);
  EXPECT_EQ(logs[0][0].substr(0, 4), "1,7,");  // epoch 1 ends at step ceil(200/32)
}

TEST(Train, LearnsEasyClasses) {
  Dataset tr = bars(300, 1, Split::train);
  Dataset va = bars(100, 3, Split::val);
  TrainConfig tc;
  tc.epochs = 8;
  tc.batch_size = 32;
  tc.schedule.max_lr = 5e-3;
  ModelSpec spec = default_spec(ModelKind::mlp);
  spec.hidden_dims = {32, 16};
  auto m = build_model<float>(spec, 42);
  auto r = train(*m, tr, va, tc);
  EXPECT_GT(r.history.back().val_acc, 0.9);
  EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
}

TEST(Train, NonFiniteLossAbortsWithContext) {
  Dataset tr = bars(64, 1, Split::train);
  Dataset va = bars(20, 3, Split::val);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 16;
  tc.clip_norm = 0;
  tc.schedule.kind = ScheduleKind::constant;
  tc.schedule.max_lr = 1e30;
  tc.adamw.weight_decay = 0;
  auto m = build_model<float>(default_spec(ModelKind::mlp), 42);
  try {
    train(*m, tr, va, tc);
    FAIL() << "expected a TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_GE(e.epoch(), 1);
    EXPECT_GE(e.step(), 1);
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(Train, EarlyStoppingStopsAndRestoresBest) {
  Dataset tr = bars(100, 1, Split::train);
  Dataset va = bars(40, 3, Split::val);
  TrainConfig tc;
  tc.epochs = 30;
  tc.batch_size = 50;
  tc.early_stopping = true;
  tc.patience = 2;
  tc.min_delta = 10.0;  // nothing after the first epoch counts as progress
  ModelSpec spec = default_spec(ModelKind::mlp);
  spec.hidden_dims = {8, 8};
  auto m = build_model<float>(spec, 42);
  auto r = train(*m, tr, va, tc);
  EXPECT_EQ(r.epochs_run, 3);
  EXPECT_EQ(r.best_epoch, 1);
  const auto now = snapshot(m->parameters());
  for (std::size_t i = 0; i < now.size(); ++i) EXPECT_TRUE((now[i] == r.best_values[i]).all());
}

TEST(Train, ZeroEpochsTrainsNothing) {
  auto m = build_model<float>(default_spec(ModelKind::mlp), 42);
  const auto before = snapshot(m->parameters());
  TrainConfig tc;
  tc.epochs = 0;
  auto r = train(*m, Dataset{}, Dataset{}, tc);
  EXPECT_TRUE(r.history.empty());
  const auto after = snapshot(m->parameters());
  for (std::size_t i = 0; i < after.size(); ++i) EXPECT_TRUE((after[i] == before[i]).all());
}

TEST(Train, EvaluateMatchesBatchSizeIndependence) {
  Dataset d = bars(130, 5, Split::test);
  auto m = build_model<float>(default_spec(ModelKind::cnn), 42);
  EvalResult a = evaluate(*m, d, 1000);
  EvalResult b = evaluate(*m, d, 7);
  EXPECT_EQ(a.confusion, b.confusion);
  EXPECT_NEAR(a.loss, b.loss, 1e-5);
  EXPECT_EQ(a.confusion.total(), 130);
}

// --------------------------------------------------------------- runner

TEST(Runner, TrainWritesArtifactsAndEvalReproducesReport) {
  fs::path data = write_bars("runner_data");
  fs::path out = scratch("runner_out");
  RunConfig c = small_config(data, out);
  RunData d = prepare_data(c);
  EXPECT_EQ(d.val.size(), 25);  // 300 / 12
  EXPECT_EQ(d.train.size(), 275);
  EXPECT_EQ(d.test.size(), 100);
  MetricsReport r = run_train(c, ModelKind::cnn, d);
  const fs::path dir = out / "CNN";
  for (const char* f : {"train_log.csv", "report.json", "report.csv", "confusion.txt", "final.ckpt", "best.ckpt"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  std::string log = slurp(dir / "train_log.csv");
  EXPECT_EQ(log.substr(0, log.find('\n')), kEpochLogHeader);
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);

  MetricsReport e1 = run_eval(c, ModelKind::cnn, dir / "final.ckpt", d.test);
  MetricsReport e2 = run_eval(c, ModelKind::cnn, dir / "final.ckpt", d.test);
  EXPECT_EQ(e1, e2);
  EXPECT_EQ(e1.confusion, r.confusion);
  EXPECT_EQ(e1.f1, r.f1);
  EXPECT_EQ(report_from_json(json::parse(slurp(dir / "report.json"))), r);
  EXPECT_THROW(run_eval(c, ModelKind::cnn, dir / "nope.ckpt", d.test), CheckpointError);
  EXPECT_THROW(run_eval(c, ModelKind::mlp, dir / "final.ckpt", d.test), CheckpointError);
}

TEST(Runner, ZeroEpochsIsChanceLevelOnDeskData) {
  fs::path desk = fs::path(PETBENCH_SOURCE_DIR) / "data" / "desk";
  if (!fs::exists(desk)) GTEST_SKIP() << "desk data not present";
  json j = default_config_json();
  j["data_dir"] = desk.string();
  j["epochs"] = 0;
  RunConfig c = parse_config(j);
  RunData d = prepare_data(c);
  RunOptions quiet;
  quiet.write_artifacts = false;
  MetricsReport r = run_train(c, ModelKind::mlp, d, quiet);
  EXPECT_NEAR(r.accuracy, 0.1, 0.05);
  EXPECT_EQ(r.meta.epochs_run, 0);
}

TEST(Runner, DeskMlpSmokeRun) {
  fs::path desk = fs::path(PETBENCH_SOURCE_DIR) / "data" / "desk";
  if (!fs::exists(desk)) GTEST_SKIP() << "desk data not present";
  json j = default_config_json();
  j["data_dir"] = desk.string();
  j["output_dir"] = scratch("desk_mlp").string();
  RunConfig c = parse_config(j);
  RunData d = prepare_data(c);
  EXPECT_EQ(d.train.size() + d.val.size(), 6000);
  EXPECT_EQ(d.test.size(), 1000);
  for (Index n : d.test.class_counts()) EXPECT_EQ(n, 100);
  MetricsReport r = run_train(c, ModelKind::mlp, d);
  EXPECT_EQ(r.meta.epochs_run, 5);
  EXPECT_EQ(r.confusion.total(), 1000);
  EXPECT_GT(r.accuracy, 0.5);
  EXPECT_NO_THROW(report_from_json(json::parse(slurp(c.output_dir / "MLP" / "report.json"))));
}

TEST(Runner, BenchmarkCoversElevenModelsAndRecordsFailures) {
  fs::path data = write_bars("bench_data", 120, 40);
  fs::path out = scratch("bench_out");
  RunConfig c = small_config(data, out, 1);
  // One model is pushed off a numerical cliff; the rest must still run.
  c.overrides[ModelKind::gru]["max_lr"] = 1e30;
  c.overrides[ModelKind::gru]["schedule"] = "constant";
  c.train.clip_norm = 0;
  RunData d = prepare_data(c);
  auto reports = run_benchmark(c, d);
  ASSERT_EQ(reports.size(), 11u);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    EXPECT_EQ(reports[i].model, name(kAllModelKinds[i]));
    if (kAllModelKinds[i] == ModelKind::gru) {
      EXPECT_FALSE(reports[i].error.empty());
      continue;
    }
    EXPECT_TRUE(reports[i].error.empty()) << reports[i].model << ": " << reports[i].error;
    const auto& cm = reports[i].confusion;
    EXPECT_EQ(reports[i].accuracy, static_cast<double>(cm.trace()) / static_cast<double>(cm.total()));
    EXPECT_GE(reports[i].accuracy, 0.0);
    EXPECT_LE(reports[i].accuracy, 1.0);
  }
  std::string csv = slurp(out / "benchmark.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 12);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kCsvHeader);
  EXPECT_TRUE(fs::exists(out / "benchmark.json"));
  EXPECT_NE(slurp(out / "confusions.txt").find("top confusions"), std::string::npos);
}

TEST(Runner, BenchmarkRowEqualsStandaloneTrain) {
  fs::path data = write_bars("uniform_data", 120, 40);
  RunConfig c = small_config(data, scratch("uniform_out"), 1);
  c.models = {ModelKind::mlp, ModelKind::fast_kan};
  RunData d = prepare_data(c);
  RunOptions quiet;
  quiet.write_artifacts = false;
  auto reports = run_benchmark(c, d, quiet);
  EXPECT_EQ(reports[1], run_train(c, ModelKind::fast_kan, d, quiet));
}

}  // namespace
}  // namespace petbench
