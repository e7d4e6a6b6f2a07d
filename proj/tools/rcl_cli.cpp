#include <CLI11.hpp>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>

#include "rcl/config.hpp"
#include "rcl/error.hpp"
#include "rcl/forecaster.hpp"
#include "rcl/param_io.hpp"
#include "rcl/pretrain.hpp"
#include "rcl/selectivity.hpp"
#include "rcl/util.hpp"
#include "rcl/verify.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace rcl;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitVerify = 3;

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::trunc | std::ios::binary);
  if (!os) throw DataError("cannot write '" + p.string() + "'");
  os << text;
}

json read_json(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw DataError("cannot open '" + p.string() + "'");
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw FormatError("'" + p.string() + "' is not valid JSON: " + e.what());
  }
}

RunConfig load_config(const std::string& path) {
  return path.empty() ? parse_run_config("{}") : load_run_config(path);
}

// "synth:<kind>" draws a corpus from the config, anything else is a CSV path.
// An empty source falls back to data.path of the config.
DatasetSplit load_data(std::string source, const RunConfig& cfg) {
  if (source.empty()) source = cfg.data_path;
  if (source.empty()) throw ConfigError("no data given: pass --data or set data.path in the config");
  const std::string prefix = "synth:";
  if (source.rfind(prefix, 0) == 0) {
    const SynthKind kind = parse_synth_kind(source.substr(prefix.size()));
    const Tensor c = synth_corpus(kind, 1, cfg.synth.steps, cfg.synth.features, cfg.synth.noise_std, cfg.seed);
    return split_dataset(c.reshaped({cfg.synth.steps, cfg.synth.features}));
  }
  if (!fs::exists(source)) throw DataError("data file '" + source + "' not found");
  return load_csv(source);
}

json scaler_json(const Scaler& s) { return {{"mean", s.mean}, {"std", s.std}}; }

json forecaster_json(const ForecasterConfig& f) {
  return {{"n_layer", f.n_layer},   {"d_model", f.mamba.d_model}, {"d_state", f.mamba.d_state},
          {"d_conv", f.mamba.d_conv}, {"expand", f.mamba.expand}, {"t_in", f.t_in},
          {"t_out", f.t_out},       {"n_features", f.n_features}};
}

ForecasterConfig forecaster_from_json(const json& j) {
  try {
    ForecasterConfig f;
    f.n_layer = j.at("n_layer").get<std::size_t>();
    f.mamba.d_model = j.at("d_model").get<std::size_t>();
    f.mamba.d_state = j.at("d_state").get<std::size_t>();
    f.mamba.d_conv = j.at("d_conv").get<std::size_t>();
    f.mamba.expand = j.at("expand").get<std::size_t>();
    f.t_in = j.at("t_in").get<std::size_t>();
    f.t_out = j.at("t_out").get<std::size_t>();
    f.n_features = j.at("n_features").get<std::size_t>();
    f.validate();
    return f;
  } catch (const json::exception& e) {
    throw FormatError(std::string("model manifest lacks a forecaster description: ") + e.what());
  }
}

struct Phases {
  json list = json::array();

  template <typename F>
  auto run(const std::string& name, F&& f) {
    Stopwatch sw;
    auto out = f();
    list.push_back({{"phase", name}, {"wall_s", sw.seconds()}, {"peak_rss_kb", peak_rss_kb()}});
    return out;
  }
};

Forecaster load_model(const fs::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  Forecaster m = build_forecaster(forecaster_from_json(manifest.at("forecaster")), 0);
  const TensorMap stored = load_params(dir / "params.rclp");
  for (auto& [name, t] : m.params) {
    const auto it = stored.find(name);
    if (it == stored.end()) throw FormatError("params.rclp lacks '" + name + "'");
    if (!it->second.same_shape(t)) {
      throw ShapeError("params.rclp entry '" + name + "' has shape " + shape_str(it->second.shape()) +
                       ", model expects " + shape_str(t.shape()));
    }
    t = it->second;
  }
  return m;
}

WindowSet test_windows(const Forecaster& m, const DatasetSplit& data) {
  if (data.features() != m.cfg.n_features) {
    throw DataError("data has " + std::to_string(data.features()) + " channels, model expects " +
                    std::to_string(m.cfg.n_features));
  }
  return make_windows(data.test, m.cfg.t_in, m.cfg.t_out);
}

// ---- pretrain ----

struct PretrainArgs {
  std::string config, data, out;
};

int cmd_pretrain(const PretrainArgs& a) {
  const std::string started = utc_now();
  const RunConfig cfg = load_config(a.config);
  Phases phases;
  const DatasetSplit data = phases.run("load", [&] { return load_data(a.data, cfg); });
  const PretrainResult res = phases.run("pretrain", [&] {
    const Tensor windows = make_windows(data.train, cfg.pretrain_window, 1).inputs;
    return pretrain(cfg.pretrain, cfg.mamba, windows);
  });

  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  const fs::path stem = out.parent_path() / out.stem();
  const fs::path loss_path = stem.string() + "_loss.csv";
  const fs::path manifest_path = stem.string() + "_manifest.json";
  save_params(res.to_map(), out);
  write_loss_history(res.history, loss_path);

  json m;
  m["command"] = "pretrain";
  m["config"] = json::parse(cfg.to_json());
  m["seed"] = cfg.seed;
  m["data"] = a.data;
  m["started"] = started;
  m["finished"] = utc_now();
  m["phases"] = phases.list;
  m["outputs"] = {{"params", out.string()}, {"loss_history", loss_path.string()}};
  m["final_loss"] = res.history.empty() ? json(nullptr) : json(res.history.back().total);
  write_text(manifest_path, m.dump(2) + "\n");

  if (!res.history.empty()) {
    const auto& f = res.history.front();
    const auto& l = res.history.back();
    std::cout << "pretrain: " << res.history.size() << " epochs, loss " << fmt_double(f.total) << " -> "
              << fmt_double(l.total) << "\n";
  }
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

// ---- train ----

struct TrainArgs {
  std::string config, data, init, out;
  std::size_t horizon = 96;
  std::optional<double> replace;
  std::optional<std::string> freeze;
};

int cmd_train(const TrainArgs& a) {
  const std::string started = utc_now();
  RunConfig cfg = load_config(a.config);
  if (a.replace) cfg.transfer.replace_fraction = *a.replace;
  if (a.freeze) cfg.transfer.freeze = parse_freeze_mode(*a.freeze);
  cfg.transfer.validate();

  Phases phases;
  const DatasetSplit data = phases.run("load", [&] { return load_data(a.data, cfg); });
  const ForecasterConfig fcfg = cfg.forecaster(a.horizon, data.features());
  const WindowSet train = make_windows(data.train, fcfg.t_in, fcfg.t_out);
  const WindowSet val = make_windows(data.val, fcfg.t_in, fcfg.t_out);
  const WindowSet test = make_windows(data.test, fcfg.t_in, fcfg.t_out);

  Forecaster model = build_forecaster(fcfg, cfg.seed);
  if (!a.init.empty()) {
    const PretrainResult pre = PretrainResult::from_map(load_params(a.init), cfg.mamba);
    model = transfer_params(std::move(model), pre.block, cfg.transfer);
  }

  const fs::path out(a.out);
  fs::create_directories(out);
  const TrainResult res = phases.run("train", [&] { return train_forecaster(model, train, val, cfg.train); });
  const Metrics met = phases.run("evaluate", [&] { return evaluate(res.best, test); });

  {
    std::ofstream os(out / "epoch_log.csv", std::ios::trunc);
    os << "epoch,train_mae,val_mae,val_mse\n";
    for (const auto& e : res.log) {
      os << e.epoch << ',' << fmt_double(e.train_mae) << ',' << fmt_double(e.val_mae) << ','
         << fmt_double(e.val_mse) << '\n';
    }
  }
  const std::string plan = fmt_double(a.init.empty() ? 0.0 : cfg.transfer.replace_fraction);
  write_text(out / "metrics.csv", "dataset,horizon,replace,freeze,seed,mae,mse\n" + a.data + ',' +
                                      std::to_string(a.horizon) + ',' + plan + ',' +
                                      freeze_mode_name(cfg.transfer.freeze) + ',' + std::to_string(cfg.seed) +
                                      ',' + fmt_double(met.mae) + ',' + fmt_double(met.mse) + '\n');
  save_params(res.best.params, out / "params.rclp");

  json m;
  m["command"] = "train";
  m["config"] = json::parse(cfg.to_json());
  m["forecaster"] = forecaster_json(fcfg);
  m["seed"] = cfg.seed;
  m["data"] = a.data;
  m["init"] = a.init.empty() ? json(nullptr) : json(a.init);
  m["plan"] = {{"replace", a.init.empty() ? 0.0 : cfg.transfer.replace_fraction},
               {"freeze", freeze_mode_name(cfg.transfer.freeze)},
               {"scope", transfer_scope_name(cfg.transfer.scope)}};
  m["started"] = started;
  m["finished"] = utc_now();
  m["phases"] = phases.list;
  m["best_epoch"] = res.best_epoch;
  m["metrics"] = {{"mae", met.mae}, {"mse", met.mse}};
  m["normalization"] = {{"note", "metrics are computed on z-scored data (train-split statistics)"},
                        {"scaler", scaler_json(data.scaler)}};
  m["outputs"] = {"manifest.json", "metrics.csv", "epoch_log.csv", "params.rclp"};
  write_text(out / "manifest.json", m.dump(2) + "\n");

  std::cout << "test mae " << fmt_double(met.mae) << " mse " << fmt_double(met.mse) << " (best epoch "
            << res.best_epoch << ")\n";
  return 0;
}

// ---- probe / eval ----

struct ModelArgs {
  std::string config, model, data, out;
  std::size_t windows = 16;
};

int cmd_probe(const ModelArgs& a) {
  const RunConfig cfg = load_config(a.config);
  const Forecaster model = load_model(a.model);
  const WindowSet test = test_windows(model, load_data(a.data, cfg));
  const WindowSet probe_set = test.gather(spaced_indices(test.size(), a.windows));
  const auto layers = model.probe(probe_set.inputs);

  std::vector<BlockTrace> traces;
  for (const auto& lp : layers) traces.push_back(lp.trace);
  const SelectivityReport rep = selectivity_report(traces);

  const fs::path out(a.out);
  fs::create_directories(out);
  write_text(out / "report.json", rep.to_json() + "\n");
  emit_traces(layers.front().trace, layers.front().block_out, 0, out);
  std::cout << "fr " << fmt_double(rep.fr) << " me " << fmt_double(rep.me) << " (SM " << rep.n_sm << ", SI "
            << rep.n_si << ", NR " << rep.n_nr << ")\n";
  return 0;
}

int cmd_eval(const ModelArgs& a) {
  const RunConfig cfg = load_config(a.config);
  const Forecaster model = load_model(a.model);
  const Metrics met = evaluate(model, test_windows(model, load_data(a.data, cfg)));
  std::cout << "mae " << fmt_double(met.mae) << "\nmse " << fmt_double(met.mse) << "\n";
  return 0;
}

// ---- verify ----

struct VerifyArgs {
  std::string suite = "all";
  std::string report, sweep;
};

int cmd_verify(const VerifyArgs& a) {
  std::vector<SuiteReport> suites;
  if (a.suite == "grad" || a.suite == "all") suites.push_back(run_grad_suite());
  if (a.suite == "scan" || a.suite == "all") suites.push_back(run_scan_suite());
  if (a.suite == "appendix-c" || a.suite == "all") suites.push_back(run_appendix_c_suite());

  bool ok = true;
  for (const auto& s : suites) {
    for (const auto& c : s.checks) {
      std::cout << (c.passed ? "PASS " : "FAIL ") << s.name << '.' << c.name << " value=" << fmt_double(c.value)
                << " threshold=" << fmt_double(c.threshold) << "\n";
    }
    ok = ok && s.passed();
  }
  if (!a.report.empty()) write_text(a.report, suites_to_json(suites) + "\n");
  if (!a.sweep.empty()) {
    const AppendixCInstance inst{.h = 1.0, .x = 0.5, .x_next = 1.5, .sigma = 0.0};
    write_sigma_sweep(sigma_sweep(inst, {0.0, 1e-3, 2e-3, 4e-3, 8e-3, 1.6e-2, 3.2e-2, 6.4e-2, 0.128}), a.sweep);
  }
  std::cout << (ok ? "verify: all checks passed\n" : "verify: FAILED\n");
  return ok ? 0 : kExitVerify;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Repetitive contrastive pretraining for Mamba forecasters"};
  app.require_subcommand(1);

  PretrainArgs pa;
  auto* pre = app.add_subcommand("pretrain", "contrastive pretraining of a single block");
  pre->add_option("--config", pa.config, "run config (JSON)");
  pre->add_option("--data", pa.data, "CSV path or synth:<kind> (default: data.path of the config)");
  pre->add_option("--out", pa.out, "output parameter file")->required();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train (optionally from pretrained blocks) and evaluate");
  train->add_option("--config", ta.config, "run config (JSON)");
  train->add_option("--data", ta.data, "CSV path or synth:<kind> (default: data.path of the config)");
  train->add_option("--horizon", ta.horizon, "forecast horizon")
      ->check(CLI::IsMember({96, 192, 336, 720}))
      ->required();
  train->add_option("--init", ta.init, "pretrained parameter file");
  train->add_option("--replace", ta.replace, "fraction of blocks replaced: 0, 0.25, 0.5, 0.75 or 1");
  train->add_option("--freeze", ta.freeze, "none or frozen-a")->check(CLI::IsMember({"none", "frozen-a"}));
  train->add_option("--out", ta.out, "output directory")->required();

  ModelArgs pr;
  auto* probe = app.add_subcommand("probe", "selectivity report and traces on the test split");
  probe->add_option("--config", pr.config, "run config (JSON), for synth corpora");
  probe->add_option("--model", pr.model, "directory written by train")->required();
  probe->add_option("--data", pr.data, "CSV path or synth:<kind> (default: data.path of the config)");
  probe->add_option("--windows", pr.windows, "evenly spaced test windows to probe")->check(CLI::PositiveNumber);
  probe->add_option("--out", pr.out, "output directory")->required();

  ModelArgs ev;
  auto* eval = app.add_subcommand("eval", "test metrics of a trained model");
  eval->add_option("--config", ev.config, "run config (JSON), for synth corpora");
  eval->add_option("--model", ev.model, "directory written by train")->required();
  eval->add_option("--data", ev.data, "CSV path or synth:<kind> (default: data.path of the config)");

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify", "numerical oracles");
  verify->add_option("--suite", va.suite, "grad, scan, appendix-c or all")
      ->check(CLI::IsMember({"grad", "scan", "appendix-c", "all"}));
  verify->add_option("--report", va.report, "write a JSON report here");
  verify->add_option("--sweep", va.sweep, "write the noise-level sweep CSV here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*pre) return cmd_pretrain(pa);
    if (*train) return cmd_train(ta);
    if (*probe) return cmd_probe(pr);
    if (*eval) return cmd_eval(ev);
    if (*verify) return cmd_verify(va);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitData;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
