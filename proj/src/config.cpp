#include "petbench/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

namespace petbench {

using nlohmann::json;

namespace {

std::string schedule_name(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::one_cycle: return "one_cycle";
    case ScheduleKind::exponential: return "exponential";
    case ScheduleKind::constant: return "constant";
  }
  return "?";
}

ScheduleKind parse_schedule(const std::string& s) {
  if (s == "one_cycle" || s == "onecycle") return ScheduleKind::one_cycle;
  if (s == "exponential") return ScheduleKind::exponential;
  if (s == "constant") return ScheduleKind::constant;
  throw ConfigError("schedule must be one_cycle, exponential or constant, got '" + s + "'");
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw ConfigError("unknown key '" + where + it.key() + "'");
  }
}

template <typename T>
T get(const json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for '" + where + key + "': " + e.what());
  }
}

template <typename T>
void maybe(const json& j, const std::string& key, const std::string& where, T& out) {
  if (j.contains(key)) out = get<T>(j, key, where);
}

void merge_into(json& base, const json& patch) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (it->is_object() && base.contains(it.key()) && base[it.key()].is_object()) {
      merge_into(base[it.key()], *it);
    } else {
      base[it.key()] = *it;
    }
  }
}

const std::set<std::string> kTopKeys = {
    "models",        "epochs",    "batch_size",       "eval_batch_size", "seed",       "lr",
    "weight_decay",  "beta1",     "beta2",            "eps",             "schedule",   "max_lr",
    "pct_start",     "div_factor", "final_div_factor", "gamma",          "clip_norm",  "early_stopping",
    "patience",      "min_delta", "data_dir",         "train_subset",    "test_subset", "val_size",
    "output_dir",    "overrides",
};

const std::set<std::string> kOverrideKeys = {
    "layers", "hidden_dims", "dropout", "activation", "dense_dim", "heads", "ffn_dim", "positional",
    "cell_dim", "reexcite", "kan", "jem", "schedule", "max_lr", "gamma", "pct_start", "epochs",
};
const std::set<std::string> kKanKeys = {"rbf_points", "grid_size", "spline_order", "lo", "hi"};
const std::set<std::string> kJemKeys = {"langevin_steps", "step_size",      "noise_scale",   "energy_weight",
                                        "replay_buffer",  "replay_capacity", "replay_reinit"};

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

void check_override_keys(ModelKind kind, const json& o) {
  const std::string where = "overrides." + std::string(name(kind)) + ".";
  reject_unknown(o, kOverrideKeys, where);
  if (o.contains("kan")) reject_unknown(o["kan"], kKanKeys, where + "kan.");
  if (o.contains("jem")) reject_unknown(o["jem"], kJemKeys, where + "jem.");
}

}  // namespace

json default_config_json(Profile profile) {
  RunConfig c;
  if (profile == Profile::full) {
    c.train.epochs = 50;
    c.train.early_stopping = true;
    c.train_subset = 0;
    c.test_subset = 0;
  }
  return config_to_json(c);
}

json config_to_json(const RunConfig& c) {
  json j;
  j["models"] = json::array();
  for (ModelKind k : c.models) j["models"].push_back(std::string(name(k)));
  j["epochs"] = c.train.epochs;
  j["batch_size"] = c.train.batch_size;
  j["eval_batch_size"] = c.train.eval_batch_size;
  j["seed"] = c.train.seed;
  j["lr"] = c.train.adamw.lr;
  j["weight_decay"] = c.train.adamw.weight_decay;
  j["beta1"] = c.train.adamw.beta1;
  j["beta2"] = c.train.adamw.beta2;
  j["eps"] = c.train.adamw.eps;
  j["schedule"] = schedule_name(c.train.schedule.kind);
  j["max_lr"] = c.train.schedule.max_lr;
  j["pct_start"] = c.train.schedule.pct_start;
  j["div_factor"] = c.train.schedule.div_factor;
  j["final_div_factor"] = c.train.schedule.final_div_factor;
  j["gamma"] = c.train.schedule.gamma;
  j["clip_norm"] = c.train.clip_norm;
  j["early_stopping"] = c.train.early_stopping;
  j["patience"] = c.train.patience;
  j["min_delta"] = c.train.min_delta;
  j["data_dir"] = c.data_dir.string();
  j["train_subset"] = c.train_subset;
  j["test_subset"] = c.test_subset;
  j["val_size"] = c.val_size;
  j["output_dir"] = c.output_dir.string();
  j["overrides"] = json::object();
  for (const auto& [k, o] : c.overrides) j["overrides"][std::string(name(k))] = o;
  return j;
}

RunConfig parse_config(const json& j) {
  reject_unknown(j, kTopKeys, "");
  RunConfig c;
  if (j.contains("models")) {
    const json& m = j["models"];
    if (m.is_string()) {
      if (m.get<std::string>() != "all") c.models.push_back(parse_model_kind(m.get<std::string>()));
    } else {
      for (const auto& name : get<std::vector<std::string>>(j, "models", "")) {
        try {
          c.models.push_back(parse_model_kind(name));
        } catch (const std::invalid_argument& e) {
          throw ConfigError(std::string("models: ") + e.what());
        }
      }
    }
  }
  TrainConfig& t = c.train;
  maybe(j, "epochs", "", t.epochs);
  maybe(j, "batch_size", "", t.batch_size);
  maybe(j, "eval_batch_size", "", t.eval_batch_size);
  maybe(j, "seed", "", t.seed);
  maybe(j, "lr", "", t.adamw.lr);
  maybe(j, "weight_decay", "", t.adamw.weight_decay);
  maybe(j, "beta1", "", t.adamw.beta1);
  maybe(j, "beta2", "", t.adamw.beta2);
  maybe(j, "eps", "", t.adamw.eps);
  if (j.contains("schedule")) t.schedule.kind = parse_schedule(get<std::string>(j, "schedule", ""));
  maybe(j, "max_lr", "", t.schedule.max_lr);
  maybe(j, "pct_start", "", t.schedule.pct_start);
  maybe(j, "div_factor", "", t.schedule.div_factor);
  maybe(j, "final_div_factor", "", t.schedule.final_div_factor);
  maybe(j, "gamma", "", t.schedule.gamma);
  maybe(j, "clip_norm", "", t.clip_norm);
  maybe(j, "early_stopping", "", t.early_stopping);
  maybe(j, "patience", "", t.patience);
  maybe(j, "min_delta", "", t.min_delta);
  if (j.contains("data_dir")) c.data_dir = get<std::string>(j, "data_dir", "");
  maybe(j, "train_subset", "", c.train_subset);
  maybe(j, "test_subset", "", c.test_subset);
  maybe(j, "val_size", "", c.val_size);
  if (j.contains("output_dir")) c.output_dir = get<std::string>(j, "output_dir", "");
  if (j.contains("overrides")) {
    const json& o = j["overrides"];
    if (!o.is_object()) throw ConfigError("overrides must be an object keyed by model name");
    for (auto it = o.begin(); it != o.end(); ++it) {
      ModelKind kind;
      try {
        kind = parse_model_kind(it.key());
      } catch (const std::invalid_argument&) {
        throw ConfigError("unknown model '" + it.key() + "' in overrides");
      }
      check_override_keys(kind, *it);
      c.overrides[kind] = *it;
    }
  }

  require(t.epochs >= 0, "epochs must be >= 0");
  require(t.batch_size >= 1, "batch_size must be >= 1");
  require(t.eval_batch_size >= 1, "eval_batch_size must be >= 1");
  require(t.adamw.lr > 0, "lr must be > 0");
  require(t.adamw.weight_decay >= 0, "weight_decay must be >= 0");
  require(t.adamw.beta1 >= 0 && t.adamw.beta1 < 1, "beta1 must lie in [0, 1)");
  require(t.adamw.beta2 >= 0 && t.adamw.beta2 < 1, "beta2 must lie in [0, 1)");
  require(t.adamw.eps > 0, "eps must be > 0");
  require(t.schedule.max_lr > 0, "max_lr must be > 0");
  require(t.schedule.pct_start > 0 && t.schedule.pct_start < 1, "pct_start must lie in (0, 1)");
  require(t.schedule.div_factor > 0 && t.schedule.final_div_factor > 0, "div factors must be > 0");
  require(t.schedule.gamma > 0 && t.schedule.gamma <= 1, "gamma must lie in (0, 1]");
  require(t.patience >= 1, "patience must be >= 1");
  require(t.min_delta >= 0, "min_delta must be >= 0");
  require(c.train_subset >= 0 && c.test_subset >= 0 && c.val_size >= 0, "sizes must be >= 0");
  // Resolve every selected family now so bad overrides fail before training.
  for (ModelKind k : kAllModelKinds) {
    if (!c.overrides.contains(k) && std::find(c.models.begin(), c.models.end(), k) == c.models.end()) continue;
    try {
      validate(model_spec(c, k));
      train_config(c, k);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  return c;
}

RunConfig resolve_config(const std::vector<json>& layers) {
  json merged = json::object();
  for (const auto& layer : layers) {
    if (layer.is_null()) continue;
    if (!layer.is_object()) throw ConfigError("config layers must be JSON objects");
    merge_into(merged, layer);
  }
  return parse_config(merged);
}

json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

ModelSpec model_spec(const RunConfig& config, ModelKind kind) {
  ModelSpec s = default_spec(kind);
  auto found = config.overrides.find(kind);
  if (found == config.overrides.end()) return s;
  const json& o = found->second;
  const std::string where = "overrides." + std::string(name(kind)) + ".";
  maybe(o, "layers", where, s.layers);
  maybe(o, "hidden_dims", where, s.hidden_dims);
  maybe(o, "dropout", where, s.dropout);
  if (o.contains("activation")) {
    try {
      s.activation_override = parse_activation(get<std::string>(o, "activation", where));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where + "activation: " + e.what());
    }
  }
  maybe(o, "dense_dim", where, s.dense_dim);
  maybe(o, "heads", where, s.heads);
  maybe(o, "ffn_dim", where, s.ffn_dim);
  if (o.contains("positional")) {
    const auto p = get<std::string>(o, "positional", where);
    if (p == "sinusoidal") {
      s.positional = PositionalEncoding::sinusoidal;
    } else if (p == "learned") {
      s.positional = PositionalEncoding::learned;
    } else {
      throw ConfigError(where + "positional must be sinusoidal or learned");
    }
  }
  maybe(o, "cell_dim", where, s.cell_dim);
  maybe(o, "reexcite", where, s.reexcite);
  if (o.contains("kan")) {
    const json& k = o["kan"];
    maybe(k, "rbf_points", where + "kan.", s.kan.rbf_points);
    maybe(k, "grid_size", where + "kan.", s.kan.grid_size);
    maybe(k, "spline_order", where + "kan.", s.kan.spline_order);
    maybe(k, "lo", where + "kan.", s.kan.lo);
    maybe(k, "hi", where + "kan.", s.kan.hi);
  }
  if (o.contains("jem")) {
    const json& k = o["jem"];
    maybe(k, "langevin_steps", where + "jem.", s.jem.langevin_steps);
    maybe(k, "step_size", where + "jem.", s.jem.step_size);
    maybe(k, "noise_scale", where + "jem.", s.jem.noise_scale);
    maybe(k, "energy_weight", where + "jem.", s.jem.energy_weight);
    maybe(k, "replay_buffer", where + "jem.", s.jem.replay_buffer);
    maybe(k, "replay_capacity", where + "jem.", s.jem.replay_capacity);
    maybe(k, "replay_reinit", where + "jem.", s.jem.replay_reinit);
  }
  return s;
}

TrainConfig train_config(const RunConfig& config, ModelKind kind) {
  TrainConfig t = config.train;
  auto found = config.overrides.find(kind);
  if (found != config.overrides.end()) {
    const json& o = found->second;
    const std::string where = "overrides." + std::string(name(kind)) + ".";
    if (o.contains("schedule")) t.schedule.kind = parse_schedule(get<std::string>(o, "schedule", where));
    maybe(o, "max_lr", where, t.schedule.max_lr);
    maybe(o, "gamma", where, t.schedule.gamma);
    maybe(o, "pct_start", where, t.schedule.pct_start);
    maybe(o, "epochs", where, t.epochs);
    require(t.epochs >= 0, where + "epochs must be >= 0");
    // An explicit per-model pct_start is taken as is.
    if (o.contains("pct_start")) return t;
  }
  return protocol_for(kind, t);
}

std::vector<ModelKind> selected_models(const RunConfig& config) {
  if (config.models.empty()) return {kAllModelKinds.begin(), kAllModelKinds.end()};
  return config.models;
}

std::filesystem::path data_root_from_env(const std::filesystem::path& fallback) {
  const char* env = std::getenv("PETBENCH_DATA");
  if (env && *env) return env;
  return fallback;
}

}  // namespace petbench
