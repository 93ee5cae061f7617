#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path kCli = ODERGRU_CLI;

struct Run {
  int code = -1;
  std::string out;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs the CLI with args; stdout and stderr are captured together.
Run cli(const std::string& args, const std::string& env = "") {
  const fs::path log = fs::temp_directory_path() / "odergru_cli_test.log";
  const std::string cmd = env + " " + kCli.string() + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

struct Workdir {
  fs::path dir;
  explicit Workdir(const std::string& name) : dir(fs::temp_directory_path() / ("odergru_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workdir() { fs::remove_all(dir); }
  fs::path write(const std::string& file, const std::string& text) const {
    std::ofstream(dir / file) << text;
    return dir / file;
  }
};

nlohmann::json small_config(const fs::path& out) {
  auto j = nlohmann::json::parse(R"({
    "seed": 3,
    "data": {"synth": {"n_per_class": 6, "length": 6, "channels": 3, "classes": 2, "seed": 1}},
    "model": {"hidden_dim": 4,
              "encoder": {"mode": "pointwise",
                          "layers": [{"out_channels": 8, "kernel": 1}, {"out_channels": 8, "kernel": 1, "leaky": false}]},
              "field": {"hidden": [8]}, "ode": {"n_steps": 4}},
    "train": {"lr": 0.01, "batch": 4, "max_iter": 4, "eval_every": 2},
    "bench": {"dims": [2, 4], "points": 4, "repeats": 1}
  })");
  j["out"] = out.string();
  return j;
}

}  // namespace

TEST_CASE("train is reproducible and writes its artifacts") {
  Workdir w("train");
  const auto cfg = w.write("cfg.json", small_config(w.dir / "a").dump());
  const Run a = cli("train --config " + cfg.string());
  REQUIRE_MESSAGE(a.code == 0, a.out);
  const Run b = cli("train --config " + cfg.string() + " --out " + (w.dir / "b").string());
  REQUIRE_MESSAGE(b.code == 0, b.out);
  for (const char* f : {"metrics.csv", "checkpoint.json", "checkpoint.bin", "run.json"}) {
    CHECK(fs::exists(w.dir / "a" / f));
  }
  const std::string m = slurp(w.dir / "a" / "metrics.csv");
  CHECK(m == slurp(w.dir / "b" / "metrics.csv"));
  CHECK(m.rfind("iteration,loss,data_loss,l2_penalty,grad_norm,train_score,test_score\n", 0) == 0);
  CHECK(std::count(m.begin(), m.end(), '\n') == 5);

  const auto manifest = nlohmann::json::parse(slurp(w.dir / "a" / "run.json"));
  CHECK(manifest["seed"] == 3);
  CHECK(manifest["config_hash"].get<std::string>().size() == 16);
  CHECK(manifest.contains("version"));
}

TEST_CASE("seed precedence: flag over environment over config") {
  Workdir w("seed");
  const auto cfg = w.write("cfg.json", small_config(w.dir / "x").dump());
  REQUIRE(cli("train --config " + cfg.string() + " --out " + (w.dir / "env").string(), "ODERGRU_SEED=7").code == 0);
  REQUIRE(cli("train --config " + cfg.string() + " --seed 9 --out " + (w.dir / "flag").string(), "ODERGRU_SEED=7").code == 0);
  CHECK(nlohmann::json::parse(slurp(w.dir / "env" / "run.json"))["seed"] == 7);
  CHECK(nlohmann::json::parse(slurp(w.dir / "flag" / "run.json"))["seed"] == 9);
  CHECK(cli("train --config " + cfg.string(), "ODERGRU_THREADS=0").code == 1);
}

TEST_CASE("config errors exit 1 and name the field") {
  Workdir w("cfgerr");
  auto j = small_config(w.dir / "o");
  j["data"] = {{"csv", nlohmann::json::object()}};
  const auto cfg = w.write("cfg.json", j.dump());
  const Run r = cli("train --config " + cfg.string());
  CHECK(r.code == 1);
  CHECK(r.out.find("/data/csv") != std::string::npos);
  CHECK(r.out.find("path") != std::string::npos);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 1);
  CHECK(cli("train").code == 1);
  CHECK(cli("frobnicate").code == 1);
}

TEST_CASE("data errors exit 2") {
  Workdir w("dataerr");
  w.write("bad.csv", "seq_id,t,ch_0\nx,1,1\nx,1,2\n");
  auto j = small_config(w.dir / "o");
  j["data"] = {{"csv", {{"path", (w.dir / "bad.csv").string()}}}};
  const auto cfg = w.write("cfg.json", j.dump());
  const Run r = cli("train --config " + cfg.string());
  CHECK(r.code == 2);
  CHECK(r.out.find("duplicate") != std::string::npos);
}

TEST_CASE("eval") {
  Workdir w("eval");
  const auto cfg = w.write("cfg.json", small_config(w.dir / "run").dump());
  REQUIRE(cli("train --config " + cfg.string()).code == 0);
  const std::string ck = (w.dir / "run" / "checkpoint").string();

  const Run fresh = cli("eval --checkpoint " + ck + " --config " + cfg.string());
  REQUIRE_MESSAGE(fresh.code == 0, fresh.out);
  CHECK(fresh.out.find("accuracy") != std::string::npos);
  const std::string csv = slurp(w.dir / "run" / "eval.csv");
  CHECK(csv.find("accuracy") != std::string::npos);

  const Run dropped = cli("eval --checkpoint " + ck + " --config " + cfg.string() + " --drop 0.5");
  CHECK(dropped.code == 0);
  CHECK(dropped.out.find("0.5") != std::string::npos);

  auto j = small_config(w.dir / "run");
  j["data"]["synth"]["test_fraction"] = 0.0;
  const auto empty = w.write("empty.json", j.dump());
  const Run e = cli("eval --checkpoint " + ck + " --config " + empty.string() + " --split test");
  CHECK(e.code == 2);

  std::string manifest = slurp(w.dir / "run" / "checkpoint.json");
  auto mj = nlohmann::json::parse(manifest);
  mj["format_version"] = 2;
  std::ofstream(w.dir / "run" / "checkpoint.json") << mj.dump();
  const Run v = cli("eval --checkpoint " + ck + " --config " + cfg.string());
  CHECK(v.code == 1);
  CHECK(v.out.find("version") != std::string::npos);
}

TEST_CASE("corrupt") {
  Workdir w("corrupt");
  std::string csv = "seq_id,t,ch_0,ch_1\n";
  for (int s = 0; s < 4; ++s)
    for (int t = 0; t < 10; ++t) csv += "s" + std::to_string(s) + "," + std::to_string(t) + ",1,2\n";
  const auto in = w.write("in.csv", csv);
  const Run r = cli("corrupt --input " + in.string() + " --fraction 0.5 --seed 1 --out " + (w.dir / "o").string());
  REQUIRE_MESSAGE(r.code == 0, r.out);
  const std::string out = slurp(w.dir / "o" / "corrupted.csv");
  CHECK(out.rfind("seq_id,t,ch_0,ch_1", 0) == 0);
  CHECK(out.find(",,") != std::string::npos);  // some cells are now empty
  const Run again = cli("corrupt --input " + in.string() + " --fraction 0.5 --seed 1 --out " + (w.dir / "p").string());
  CHECK(again.code == 0);
  CHECK(slurp(w.dir / "p" / "corrupted.csv") == out);
}

TEST_CASE("bench") {
  Workdir w("bench");
  const auto cfg = w.write("cfg.json", small_config(w.dir / "b").dump());
  const Run r = cli("bench --config " + cfg.string());
  REQUIRE_MESSAGE(r.code == 0, r.out);
  const std::string csv = slurp(w.dir / "b" / "bench.csv");
  CHECK(csv.rfind("d,n,t_closed_ns,t_karcher_ns\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("verify --quick passes; the log-sign mutation is caught") {
  const Run ok = cli("verify --quick");
  CHECK_MESSAGE(ok.code == 0, ok.out);
  const Run bad = cli("verify --quick --mutate log-sign");
  CHECK(bad.code == 3);
  CHECK(bad.out.find("FAIL geometry round trips") != std::string::npos);
}
