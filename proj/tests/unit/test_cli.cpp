#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lfm/cli/commands.hpp"
#include "lfm/cli/config.hpp"
#include "lfm/core/error.hpp"

using namespace lfm;
using namespace lfm::cli;
namespace fs = std::filesystem;

namespace {

// Small enough that every command finishes in well under a second.
const char* const kSmallConfig = R"({
  "seed": 3,
  "data": {"dim": 8, "n": 201, "n_val": 40, "components": 3, "mean_scale": 1.0, "component_scale": 0.05},
  "transport": {"steps": 10, "sources": 60, "dominance_probes": 200},
  "pruning": {"k": 3, "kernel_features": 64},
  "surrogate": {"time_embedding": 4, "hidden": [16, 16], "batch": 16, "steps": 60,
                "score_noise_paths": 2, "score_timesteps": 3},
  "c2f": {"t0_grid": [0.0, 0.5], "steps": 10, "probes": 30},
  "metrics": {"prs": [0.5, 0.8], "path_sources": 10, "lipschitz_points": 5, "lipschitz_probes": 2,
              "lipschitz_iters": 5, "error_probes": 8}
})";

struct Result {
  int code = 0;
  std::string out, err;
};

class Workspace {
 public:
  explicit Workspace(const std::string& name) : dir_(fs::temp_directory_path() / ("lfm_test_cli_" + name)) {
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "config.json") << kSmallConfig;
  }
  ~Workspace() { fs::remove_all(dir_); }
  const fs::path& dir() const { return dir_; }
  fs::path operator/(const std::string& f) const { return dir_ / f; }

  // Runs lfmlab in-process with the small config and this directory as output.
  Result run(std::vector<std::string> args) const {
    std::vector<std::string> all{"lfmlab", "--config", (dir_ / "config.json").string(), "--out", dir_.string()};
    all.insert(all.end(), args.begin(), args.end());
    return run_raw(all);
  }

  static Result run_raw(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Result r;
    r.code = lfm::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
  }

 private:
  fs::path dir_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

std::size_t column(const CsvTable& t, const std::string& name) {
  for (std::size_t i = 0; i < t.header.size(); ++i)
    if (t.header[i] == name) return i;
  FAIL("missing column " << name);
  return 0;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) files[e.path().filename().string()] = slurp(e.path());
  return files;
}

}  // namespace

TEST_CASE("config resolution") {
  const Json d = default_config();
  CHECK(d.at("transport").at("t_max") == 0.999);
  CHECK(resolve_config(Json()) == d);
  CHECK_THROWS_WITH_AS(resolve_config(Json::parse(R"({"pruning": {"prr": 0.5}})")), doctest::Contains("pruning.prr"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(resolve_config(Json::parse(R"({"nope": {}})")), doctest::Contains("nope"), ConfigError);
  CHECK_THROWS_AS(resolve_config(Json::parse(R"({"pruning": {"pr": "half"}})")), ConfigError);
  CHECK_THROWS_AS(resolve_config(Json::parse(R"({"pruning": {"k": 2.5}})")), ConfigError);
  CHECK_THROWS_AS(resolve_config(Json::parse(R"({"pruning": {"k": -2}})")), ConfigError);
  CHECK_THROWS_AS(resolve_config(Json::parse(R"({"metrics": {"fields": [1]}})")), ConfigError);
  CHECK_THROWS_AS(resolve_config(Json::parse(R"({"surrogate": {"hidden": [8.5]}})")), ConfigError);
  CHECK_THROWS_AS(resolve_config(Json::parse("[1]")), ConfigError);
  const Json ok = resolve_config(Json::parse(R"({"pruning": {"k": 8.0, "pr": 1}, "seed": 4})"));
  CHECK(ok["pruning"]["k"].is_number_integer());
  CHECK(ok["pruning"]["pr"].is_number_float());
  CHECK(ok["seed"] == 4);

  Json c = default_config();
  apply_override(c, "pruning.criterion=C_b");
  apply_override(c, "surrogate.hidden=[32,32]");
  apply_override(c, "c2f.finetune=true");
  CHECK(c["pruning"]["criterion"] == "C_b");
  CHECK(c["surrogate"]["hidden"] == Json::array({32, 32}));
  CHECK(c["c2f"]["finetune"] == true);
  CHECK_THROWS_AS(apply_override(c, "pruning.k=abc"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "pruning.bogus=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "=1"), ConfigError);

  // Per-module streams differ and are reproducible.
  Rng a = module_rng(1, "data"), b = module_rng(1, "data"), p = module_rng(1, "prune");
  const auto va = a.next_u64();
  CHECK(va == b.next_u64());
  CHECK(va != p.next_u64());
}

TEST_CASE("defaults table matches the README") {
  const std::string table = defaults_table();
  CHECK(table.find("seed = 0\n") == 0);
  CHECK(table.find("pruning.pr = 0.5\n") != std::string::npos);
  const Result r = Workspace::run_raw({"lfmlab", "defaults"});
  CHECK(r.code == 0);
  CHECK(r.out == table);

  const std::string readme = slurp(fs::path(LFM_SOURCE_DIR) / "README.md");
  const std::string open = "```text\nseed = ";
  const auto start = readme.find(open);
  REQUIRE(start != std::string::npos);
  const auto body = start + std::string("```text\n").size();
  const auto end = readme.find("```", body);
  REQUIRE(end != std::string::npos);
  CHECK(readme.substr(body, end - body) == table);
}

TEST_CASE("exit codes") {
  Workspace w("codes");
  CHECK(Workspace::run_raw({"lfmlab"}).code == kConfigError);
  CHECK(Workspace::run_raw({"lfmlab", "frobnicate"}).code == kConfigError);
  const Result unknown = w.run({"--set", "pruning.prr=0.4", "gen-data"});
  CHECK(unknown.code == kConfigError);
  CHECK(unknown.err.find("pruning.prr") != std::string::npos);
  CHECK(w.run({"--set", "data.n=12.5", "gen-data"}).code == kConfigError);
  CHECK(Workspace::run_raw({"lfmlab", "--config", (w / "missing.json").string(), "gen-data"}).code == kIoError);
  std::ofstream(w / "broken.json") << "{ not json";
  CHECK(Workspace::run_raw({"lfmlab", "--config", (w / "broken.json").string(), "gen-data"}).code == kConfigError);
  CHECK(w.run({"prune"}).code == kIoError);  // no data.lfsd yet
  CHECK(w.run({"gen-data"}).code == kOk);
  CHECK(w.run({"prune", "--criterion", "bogus"}).code == kConfigError);
  const Result noscores = w.run({"prune", "--criterion", "G"});
  CHECK(noscores.code != kOk);
  CHECK(noscores.err.find("score") != std::string::npos);
  CHECK(w.run({"--set", "surrogate.lr=1e12", "--set", "surrogate.grad_clip=0", "train"}).code == kDivergence);

  // The installed binary maps errors the same way.
  const std::string cmd = std::string(LFMLAB_PATH) + " --set pruning.prr=1 gen-data >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == kConfigError);
  CHECK(std::system((std::string(LFMLAB_PATH) + " defaults >/dev/null").c_str()) == 0);
}

TEST_CASE("data, pruning and the sidecar config") {
  Workspace w("prune");
  REQUIRE(w.run({"gen-data"}).code == kOk);
  CHECK(fs::exists(w / "data.lfsd"));
  CHECK(fs::exists(w / "data_val.lfsd"));
  const auto side = read_json(w / "gen-data.config.json");
  CHECK(side["data"]["n"] == 201);
  CHECK(side["seed"] == 3);

  // Random pruning at pr = 0.5 keeps ceil(n / 2).
  REQUIRE(w.run({"prune", "--criterion", "random", "--pr", "0.5"}).code == kOk);
  const CsvTable sel = read_csv(w / "selection.csv");
  CHECK(sel.header == std::vector<std::string>{"id", "score", "cluster", "kept"});
  CHECK(sel.rows.size() == 201);
  std::size_t kept = 0;
  for (const auto& r : sel.rows) kept += r[3] == "1" ? 1 : 0;
  CHECK(kept == 101);
  CHECK(read_id_list(w / "selection.ids").size() == 101);
  CHECK(read_json(w / "prune.config.json")["pruning"]["pr"] == 0.5);

  // Nearest and furthest picks overlap only where a cluster holds fewer than
  // twice its quota.
  REQUIRE(w.run({"prune", "--criterion", "C_b"}).code == kOk);
  const CsvTable near = read_csv(w / "selection.csv");
  REQUIRE(w.run({"prune", "--criterion", "C_b^-1"}).code == kOk);
  const CsvTable far = read_csv(w / "selection.csv");
  std::map<std::string, std::size_t> size, quota, overlap;
  for (std::size_t i = 0; i < 201; ++i) {
    const std::string c = near.rows[i][2];
    CHECK(far.rows[i][2] == c);
    ++size[c];
    quota[c] += near.rows[i][3] == "1" ? 1 : 0;
    overlap[c] += near.rows[i][3] == "1" && far.rows[i][3] == "1" ? 1 : 0;
  }
  for (const auto& [c, n] : size) CHECK(overlap[c] == (2 * quota[c] > n ? 2 * quota[c] - n : 0));
  const auto report = read_json(w / "prune.json");
  CHECK(report.contains("balance_kl"));

  // Kernel selections carry the per-cluster discrepancy.
  REQUIRE(w.run({"prune", "--criterion", "C_b^k", "--pr", "0.7"}).code == kOk);
  const CsvTable ker = read_csv(w / "selection.csv");
  CHECK(ker.header.back() == "discrepancy");
  for (const auto& r : ker.rows) CHECK(std::isfinite(std::stod(r.back())));
}

TEST_CASE("train, score and score-based pruning") {
  Workspace w("train");
  REQUIRE(w.run({"gen-data"}).code == kOk);
  REQUIRE(w.run({"prune", "--criterion", "random", "--pr", "0.5"}).code == kOk);
  REQUIRE(w.run({"train", "--ids", (w / "selection.ids").string()}).code == kOk);
  const CsvTable loss = read_csv(w / "train_loss.csv");
  CHECK(loss.rows.size() == 60);
  REQUIRE(w.run({"score"}).code == kOk);
  const CsvTable scores = read_csv(w / "scores.csv");
  CHECK(scores.header == std::vector<std::string>{"id", "loss_score", "grad_score"});
  CHECK(scores.rows.size() == 201);

  REQUIRE(w.run({"prune", "--criterion", "G", "--pr", "0.5"}).code == kOk);
  const CsvTable g = read_csv(w / "selection.csv");
  REQUIRE(w.run({"prune", "--criterion", "G^-1", "--pr", "0.6"}).code == kOk);
  const CsvTable gi = read_csv(w / "selection.csv");
  // 101 highest and 80 lowest of 201 distinct scores never meet.
  for (std::size_t i = 0; i < 201; ++i) CHECK(!(g.rows[i][3] == "1" && gi.rows[i][3] == "1"));
}

TEST_CASE("stability, c2f, bound and report") {
  Workspace w("pipeline");
  REQUIRE(w.run({"gen-data"}).code == kOk);
  REQUIRE(w.run({"stability"}).code == kOk);
  const CsvTable st = read_csv(w / "stability.csv");
  CHECK(st.header.front() == "pr");
  CHECK(st.rows.size() == 2);
  for (const auto& r : st.rows) {
    const double u = std::stod(r[column(st, "unchanged_conditioned")]);
    CHECK(u >= 0.0);
    CHECK(u <= 1.0);
  }
  CHECK(read_csv(w / "path_deviation.csv").header == std::vector<std::string>{"pr", "median", "p95", "mean"});
  CHECK(read_csv(w / "assignments.csv").rows.size() == 60);
  CHECK(read_csv(w / "dominance.csv").rows.size() == 201);
  const auto sj = read_json(w / "stability.json");
  CHECK(sj["dominance"].contains("top_1pct_share"));
  CHECK(sj["dominance"].contains("samples_for_90pct"));

  REQUIRE(w.run({"prune", "--criterion", "random", "--pr", "0.3"}).code == kOk);
  REQUIRE(w.run({"stability", "--selection", (w / "selection.ids").string()}).code == kOk);
  const CsvTable one = read_csv(w / "stability.csv");
  REQUIRE(one.rows.size() == 1);
  CHECK(one.rows[0][column(one, "kept")] == "141");

  REQUIRE(w.run({"c2f"}).code == kOk);
  const CsvTable c2f = read_csv(w / "c2f.csv");
  REQUIRE(c2f.rows.size() == 2);
  CHECK(std::stod(c2f.rows[0][column(c2f, "dev_median")]) == 0.0);
  CHECK(std::stod(c2f.rows[0][column(c2f, "speedup")]) == doctest::Approx(1.0));
  CHECK(std::stod(c2f.rows[1][column(c2f, "speedup")]) > 1.0);
  CHECK(fs::exists(w / "seam_t0_0.5.csv"));
  REQUIRE(w.run({"c2f", "--coarse", "mode-removal", "--t0-grid", "0.5"}).code == kOk);
  const CsvTable removal = read_csv(w / "c2f.csv");
  CHECK(removal.header.back() == "dev_retained_median");
  CHECK(w.run({"c2f", "--t0-grid", "0.5,x"}).code == kConfigError);

  REQUIRE(w.run({"bound", "--field", "closed-form"}).code == kOk);
  const auto bj = read_json(w / "bound.json");
  REQUIRE(bj["fields"].size() == 1);
  CHECK(bj["fields"][0]["epsilon"] == 0.0);
  CHECK(bj["fields"][0]["bound"] == 0.0);
  CHECK(bj["fields"][0]["lipschitz"]["times"].size() == 5);

  REQUIRE(w.run({"report"}).code == kOk);
  const auto rj = read_json(w / "report.json");
  CHECK(rj["cost_model"]["measured_speedup"] == 2.15);
  CHECK(rj["cost_model"]["predicted_speedup"].get<double>() == doctest::Approx(2.99).epsilon(0.002));
  CHECK(rj["tables"].contains("c2f.csv"));
}

TEST_CASE("reruns are byte-identical and the seed matters") {
  Workspace w("rerun");
  const auto pipeline = [&](const std::vector<std::string>& extra) {
    for (const char* cmd : {"gen-data", "stability", "c2f"}) {
      std::vector<std::string> args = extra;
      args.push_back(cmd);
      REQUIRE(w.run(args).code == kOk);
    }
    std::vector<std::string> prune = extra;
    prune.insert(prune.end(), {"prune", "--criterion", "C_b^cs"});
    REQUIRE(w.run(prune).code == kOk);
    return snapshot(w.dir());
  };
  const auto first = pipeline({});
  const auto second = pipeline({});
  CHECK(first.size() > 10);
  CHECK(first == second);
  const auto reseeded = pipeline({"--seed", "4"});
  CHECK(reseeded.at("data.lfsd") != first.at("data.lfsd"));
  CHECK(read_json(w / "gen-data.config.json")["seed"] == 4);
}
