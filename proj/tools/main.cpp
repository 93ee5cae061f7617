// odergru command-line driver: train | eval | bench | verify | corrupt.
//
// Exit codes: 0 ok, 1 usage/config, 2 data, 3 numerical failure.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "odergru/config.hpp"
#include "odergru/errors.hpp"
#include "odergru/model.hpp"
#include "odergru/spd_oracle.hpp"
#include "odergru/verify.hpp"

namespace fs = std::filesystem;
using namespace odergru;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::string> out;
};

// flag > environment > config file
void apply_overrides(RunConfig& rc, const Overrides& o) {
  if (const char* s = std::getenv("ODERGRU_SEED")) {
    try {
      rc.seed = std::stoull(s);
    } catch (const std::exception&) {
      throw ConfigError(std::string("ODERGRU_SEED is not an unsigned integer: ") + s);
    }
  }
  if (const char* s = std::getenv("ODERGRU_THREADS")) {
    try {
      rc.threads = std::stoul(s);
    } catch (const std::exception&) {
      throw ConfigError(std::string("ODERGRU_THREADS is not an unsigned integer: ") + s);
    }
  }
  if (o.seed) rc.seed = *o.seed;
  if (o.threads) rc.threads = *o.threads;
  if (o.out) rc.out = *o.out;
  if (rc.threads == 0) throw ConfigError("threads must be >= 1");
  rc.train.seed = rc.seed;
  rc.train.threads = rc.threads;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot write " + p.string());
  f << text;
}

int cmd_train(const std::string& config_path, const Overrides& o) {
  RunConfig rc = load_run_config(config_path);
  apply_overrides(rc, o);
  DropReport drop;
  Dataset ds = materialize(rc.data, &drop);
  rc.model.encoder.input_channels = ds.channels;
  if (rc.model.task == Task::classification && ds.classes > rc.model.classes) rc.model.classes = ds.classes;
  fs::create_directories(rc.out);

  const auto t0 = std::chrono::steady_clock::now();
  ModelParams init = ModelParams::init(rc.model, rc.seed);
  TrainResult res = train(ds, init, rc.model, rc.train);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  write_metrics_csv(res.log, rc.out / "metrics.csv");
  save_checkpoint(rc.out / "checkpoint", res.params, rc.model, rc.seed);
  Json manifest = {
      {"software", "odergru"},
      {"version", kVersion},
      {"config_hash", fnv1a_hex(rc.source.dump())},
      {"seed", rc.seed},
      {"threads", rc.threads},
      {"config", rc.source},
      {"sequences", ds.size()},
      {"dropped_sequences", drop.sequences_removed},
  };
  write_text(rc.out / "run.json", manifest.dump(2) + "\n");

  const MetricsRow& last = res.log.empty() ? MetricsRow{} : res.log.back();
  std::printf("trained %zu iterations in %.1f s: loss %.6g train %.4f test %.4f\n", res.log.size(), secs, last.loss,
              last.train_score, last.test_score);
  if (drop.sequences_removed > 0)
    std::fprintf(stderr, "warning: %zu sequences dropped (fewer than 2 surviving timesteps)\n",
                 drop.sequences_removed);
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& config_path, const std::string& split,
             std::optional<double> drop, const Overrides& o) {
  Checkpoint ck = load_checkpoint(checkpoint);
  RunConfig rc = load_run_config(config_path);
  apply_overrides(rc, o);
  if (drop) rc.data.drop_fraction = *drop;
  Dataset ds = materialize(rc.data);
  if (ds.channels != ck.config.encoder.input_channels)
    throw DataError("dataset has " + std::to_string(ds.channels) + " channels, checkpoint expects " +
                    std::to_string(ck.config.encoder.input_channels));

  std::vector<std::size_t> which;
  if (split == "all") {
    for (std::size_t i = 0; i < ds.size(); ++i) which.push_back(i);
  } else {
    which = ds.indices(split == "train" ? Split::train : Split::test);
  }
  if (which.empty()) throw DataError("split '" + split + "' is empty");

  EvalResult r = evaluate(ds, which, ck.params, ck.config, rc.threads);
  std::vector<std::pair<std::string, double>> rows{{"n", double(r.n)}, {"loss", r.loss}};
  if (ck.config.task == Task::classification) {
    rows.insert(rows.end(), {{"accuracy", r.cls.accuracy}, {"kappa", r.cls.kappa}, {"macro_f1", r.cls.macro_f1}});
  } else {
    rows.insert(rows.end(), {{"mse", r.reg.mse}, {"mape", r.reg.mape}, {"r2", r.reg.r2}});
  }
  fs::create_directories(rc.out);
  std::string csv = "metric,value\n";
  for (auto& [k, v] : rows) {
    std::printf("%-10s %14.6f\n", k.c_str(), v);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    csv += k + "," + buf + "\n";
  }
  write_text(rc.out / "eval.csv", csv);
  return 0;
}

int cmd_bench(const std::optional<std::string>& config_path, const Overrides& o) {
  RunConfig rc;
  if (config_path) rc = load_run_config(*config_path);
  apply_overrides(rc, o);
  auto rows = complexity_benchmark(rc.bench.dims, rc.bench.points, rc.bench.repeats, rc.seed);
  fs::create_directories(rc.out);
  {
    std::ofstream f(rc.out / "bench.csv", std::ios::binary);
    if (!f) throw DataError("cannot write bench.csv");
    write_bench_csv(f, rows);
  }
  std::vector<double> entries, tc;
  std::printf("%6s %4s %16s %16s %10s\n", "d", "n", "closed_ns", "karcher_ns", "ratio");
  for (const auto& r : rows) {
    std::printf("%6zu %4zu %16.1f %16.1f %10.1f\n", r.d, r.n, r.t_closed_ns, r.t_karcher_ns,
                r.t_karcher_ns / r.t_closed_ns);
    entries.push_back(double(r.d * (r.d + 1) / 2));
    tc.push_back(r.t_closed_ns);
  }
  std::printf("log-log slope (closed form vs entries): %.3f\n", loglog_slope(entries, tc));
  return 0;
}

int cmd_verify(bool quick, const std::string& mutation) {
  VerifyOptions vo;
  vo.quick = quick;
  if (mutation == "log-sign") vo.mutation = Mutation::log_sign;
  else if (!mutation.empty() && mutation != "none") throw ConfigError("unknown mutation '" + mutation + "'");
  auto results = run_battery(vo, [](const CheckResult& r) {
    std::printf("%-4s %-34s %8.1fs  %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.seconds, r.detail.c_str());
    std::fflush(stdout);
  });
  for (const auto& r : results)
    if (!r.passed) {
      std::fprintf(stderr, "verify: first failing property: %s\n", r.name.c_str());
      return 3;
    }
  return 0;
}

int cmd_corrupt(const std::string& input, double fraction, const Overrides& o) {
  RunConfig rc;
  apply_overrides(rc, o);
  Dataset ds = load_csv(input);
  DropReport rep;
  Dataset out = drop_observations(ds, fraction, rc.seed, &rep);
  fs::create_directories(rc.out);
  save_csv(out, rc.out / "corrupted.csv");
  std::printf("dropped %zu of %zu cells, %zu timesteps, %zu sequences\n", rep.cells_dropped, rep.cells_before,
              rep.timesteps_removed, rep.sequences_removed);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ODE-driven recurrent model on the Cholesky space of SPD matrices"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Overrides o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "random seed (overrides ODERGRU_SEED and the config)");
    sub->add_option("--threads", o.threads, "worker threads (overrides ODERGRU_THREADS)")->check(CLI::PositiveNumber);
    sub->add_option("--out", o.out, "output directory");
  };

  std::string config, checkpoint, split = "test", input, mutation;
  double fraction = 0.5, drop = 0.0;
  bool quick = false;

  auto* train = app.add_subcommand("train", "train a model; writes checkpoint, metrics.csv and run.json");
  train->add_option("--config", config, "run configuration (JSON)")->required();
  add_common(train);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the configured dataset");
  eval->add_option("--checkpoint", checkpoint, "checkpoint stem (without .json/.bin)")->required();
  eval->add_option("--config", config, "run configuration naming the dataset")->required();
  eval->add_option("--split", split, "train | test | all")->check(CLI::IsMember({"train", "test", "all"}));
  auto* drop_opt = eval->add_option("--drop", drop, "drop this fraction of cells before evaluating")
                       ->check(CLI::Range(0.0, 0.999999));
  add_common(eval);

  auto* bench = app.add_subcommand("bench", "time the closed-form weighted mean against the Karcher flow");
  auto* bench_cfg = bench->add_option("--config", config, "run configuration (bench section)");
  add_common(bench);

  auto* verify = app.add_subcommand("verify", "run the invariant / oracle / gradient battery");
  verify->add_flag("--quick", quick, "skip the training criteria");
  verify->add_option("--mutate", mutation, "inject a known fault (log-sign)");

  auto* corrupt = app.add_subcommand("corrupt", "drop a fraction of observed cells from a CSV dataset");
  corrupt->add_option("--input", input, "long-format CSV")->required();
  corrupt->add_option("--fraction", fraction, "fraction of observed cells to drop")->check(CLI::Range(0.0, 0.999999));
  add_common(corrupt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*train) return cmd_train(config, o);
    if (*eval) return cmd_eval(checkpoint, config, split, *drop_opt ? std::optional<double>(drop) : std::nullopt, o);
    if (*bench) return cmd_bench(*bench_cfg ? std::optional<std::string>(config) : std::nullopt, o);
    if (*verify) return cmd_verify(quick, mutation);
    if (*corrupt) return cmd_corrupt(input, fraction, o);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const NonFiniteError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const ConvergenceError& e) {
    std::fprintf(stderr, "numerical failure: %s (residual %g)\n", e.what(), e.residual());
    return 3;
  } catch (const FactorizationError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const DimensionMismatch& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 1;
}
