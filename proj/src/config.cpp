#include "rcl/config.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "rcl/error.hpp"

namespace rcl {

using nlohmann::json;

namespace {

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config key '" + path_ + "' must be an object");
  }

  // Throws on any key not in `allowed`.
  void only(std::initializer_list<const char*> allowed) const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || it.key() == a;
      if (!ok) throw ConfigError("unknown config key '" + key(it.key()) + "'");
    }
  }

  bool has(const char* k) const { return j_.contains(k); }
  const json& raw(const char* k) const { return j_.at(k); }
  std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

  void get(const char* k, std::size_t& out) const {
    if (!has(k)) return;
    const json& v = j_.at(k);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw ConfigError("config key '" + key(k) + "' must be a non-negative integer");
    }
    out = v.get<std::size_t>();
  }
  void get(const char* k, double& out) const {
    if (!has(k)) return;
    const json& v = j_.at(k);
    if (!v.is_number()) throw ConfigError("config key '" + key(k) + "' must be a number");
    out = v.get<double>();
  }
  void get(const char* k, std::string& out) const {
    if (!has(k)) return;
    const json& v = j_.at(k);
    if (!v.is_string()) throw ConfigError("config key '" + key(k) + "' must be a string");
    out = v.get<std::string>();
  }

 private:
  const json& j_;
  std::string path_;
};

}  // namespace

ForecasterConfig RunConfig::forecaster(std::size_t t_out, std::size_t n_features) const {
  return {.n_layer = n_layer, .mamba = mamba, .t_in = t_in, .t_out = t_out, .n_features = n_features};
}

void RunConfig::validate() const {
  mamba.validate();
  pretrain.validate();
  transfer.validate();
  if (pretrain_window < 2) throw ConfigError("config key 'pretrain.window' must be >= 2");
  if (n_layer == 0) throw ConfigError("config key 'forecaster.n_layer' must be >= 1");
  if (t_in == 0) throw ConfigError("config key 'forecaster.t_in' must be >= 1");
  if (train.batch_size == 0) throw ConfigError("config key 'forecaster.batch_size' must be >= 1");
  if (synth.steps == 0 || synth.features == 0) throw ConfigError("config section 'synth' needs positive steps and features");
  if (!(synth.noise_std >= 0.0)) throw ConfigError("config key 'synth.noise_std' must be >= 0");
}

RunConfig parse_run_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  const Section top(root, "");
  top.only({"seed", "data", "synth", "mamba", "pretrain", "forecaster", "transfer"});
  std::size_t seed = 0;
  top.get("seed", seed);
  c.seed = seed;

  if (top.has("data")) {
    const Section s(top.raw("data"), "data");
    s.only({"path"});
    s.get("path", c.data_path);
  }
  if (top.has("synth")) {
    const Section s(top.raw("synth"), "synth");
    s.only({"steps", "features", "noise_std"});
    s.get("steps", c.synth.steps);
    s.get("features", c.synth.features);
    s.get("noise_std", c.synth.noise_std);
  }
  if (top.has("mamba")) {
    const Section s(top.raw("mamba"), "mamba");
    s.only({"d_model", "d_state", "d_conv", "expand"});
    s.get("d_model", c.mamba.d_model);
    s.get("d_state", c.mamba.d_state);
    s.get("d_conv", c.mamba.d_conv);
    s.get("expand", c.mamba.expand);
  }
  if (top.has("pretrain")) {
    const Section s(top.raw("pretrain"), "pretrain");
    s.only({"sigmas", "tau", "epochs", "lr", "weight_decay", "batch_size", "max_batches_per_epoch", "window"});
    if (s.has("sigmas")) {
      const json& v = s.raw("sigmas");
      if (!v.is_array()) throw ConfigError("config key 'pretrain.sigmas' must be an array of numbers");
      c.pretrain.ladder.sigmas.clear();
      for (const auto& e : v) {
        if (!e.is_number()) throw ConfigError("config key 'pretrain.sigmas' must be an array of numbers");
        c.pretrain.ladder.sigmas.push_back(e.get<double>());
      }
    }
    s.get("tau", c.pretrain.tau);
    s.get("epochs", c.pretrain.epochs);
    s.get("lr", c.pretrain.lr);
    s.get("weight_decay", c.pretrain.weight_decay);
    s.get("batch_size", c.pretrain.batch_size);
    s.get("max_batches_per_epoch", c.pretrain.max_batches_per_epoch);
    s.get("window", c.pretrain_window);
  }
  if (top.has("forecaster")) {
    const Section s(top.raw("forecaster"), "forecaster");
    s.only({"n_layer", "t_in", "lr", "weight_decay", "epochs", "batch_size", "max_train_batches", "max_eval_windows"});
    s.get("n_layer", c.n_layer);
    s.get("t_in", c.t_in);
    s.get("lr", c.train.lr);
    s.get("weight_decay", c.train.weight_decay);
    s.get("epochs", c.train.max_epochs);
    s.get("batch_size", c.train.batch_size);
    s.get("max_train_batches", c.train.max_train_batches);
    s.get("max_eval_windows", c.train.max_eval_windows);
  }
  if (top.has("transfer")) {
    const Section s(top.raw("transfer"), "transfer");
    s.only({"replace", "freeze", "scope"});
    s.get("replace", c.transfer.replace_fraction);
    std::string freeze = freeze_mode_name(c.transfer.freeze), scope = transfer_scope_name(c.transfer.scope);
    s.get("freeze", freeze);
    s.get("scope", scope);
    c.transfer.freeze = parse_freeze_mode(freeze);
    c.transfer.scope = parse_transfer_scope(scope);
  }
  c.pretrain.seed = c.seed;
  c.train.seed = c.seed;
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

std::string RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["data"] = {{"path", data_path}};
  j["synth"] = {{"steps", synth.steps}, {"features", synth.features}, {"noise_std", synth.noise_std}};
  j["mamba"] = {{"d_model", mamba.d_model}, {"d_state", mamba.d_state}, {"d_conv", mamba.d_conv}, {"expand", mamba.expand}};
  j["pretrain"] = {{"sigmas", pretrain.ladder.sigmas},
                   {"tau", pretrain.tau},
                   {"epochs", pretrain.epochs},
                   {"lr", pretrain.lr},
                   {"weight_decay", pretrain.weight_decay},
                   {"batch_size", pretrain.batch_size},
                   {"max_batches_per_epoch", pretrain.max_batches_per_epoch},
                   {"window", pretrain_window}};
  j["forecaster"] = {{"n_layer", n_layer},
                     {"t_in", t_in},
                     {"lr", train.lr},
                     {"weight_decay", train.weight_decay},
                     {"epochs", train.max_epochs},
                     {"batch_size", train.batch_size},
                     {"max_train_batches", train.max_train_batches},
                     {"max_eval_windows", train.max_eval_windows}};
  j["transfer"] = {{"replace", transfer.replace_fraction},
                   {"freeze", freeze_mode_name(transfer.freeze)},
                   {"scope", transfer_scope_name(transfer.scope)}};
  return j.dump(2);
}

}  // namespace rcl
