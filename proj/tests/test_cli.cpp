#include "divker/cli.hpp"
#include "divker/conditioning.hpp"
#include "divker/config.hpp"
#include "divker/diffusion_fit.hpp"
#include "divker/svg.hpp"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace divker;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "divker");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("divker_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
  return p.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kScoreConfig = R"(# small mult1d run
[model]
name = mult1d
gamma = 0.1

[simulate]
dt = 0.01
T = 0.2
n_paths = 3000

[estimator]
mode = discrete
alpha = 10

[bins]
lo = -2
hi = 2
n_bins = 5
)";

}  // namespace

TEST_CASE("config parsing") {
  auto c = Config::parse("top = 1\n[a]\nx = 2.5  # note\nlist = 1, 2,3\nflag = true\n", "f.cfg");
  CHECK(c.get_int("", "top", 0) == 1);
  CHECK(c.get_double("a", "x", 0.0) == 2.5);
  CHECK(c.get_list("a", "list", {}) == std::vector<double>{1.0, 2.0, 3.0});
  CHECK(c.get_bool("a", "flag", false));
  CHECK(c.get_double("a", "missing", 4.0) == 4.0);
  CHECK_NOTHROW(c.reject_unknown());
  const auto eff = Config::parse(c.effective_text(), "echo");
  CHECK(eff.has("a", "missing"));
  CHECK(eff.has("a", "list"));
}

TEST_CASE("config errors carry the line number") {
  const auto message = [](auto&& fn) {
    try {
      fn();
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message([] { Config::parse("[a]\nx = 1\nnot a pair\n", "f.cfg"); }).find("f.cfg:3") !=
        std::string::npos);
  CHECK(message([] { Config::parse("[a]\nx = 1\nx = 2\n", "f.cfg"); }).find("f.cfg:3") !=
        std::string::npos);
  CHECK(message([] { Config::parse("[a\n", "f.cfg"); }).find("f.cfg:1") != std::string::npos);
  CHECK(message([] {
          auto c = Config::parse("[a]\n\nx = 1.5q\n", "f.cfg");
          c.get_double("a", "x", 0.0);
        }).find("f.cfg:3") != std::string::npos);
  CHECK(message([] {
          auto c = Config::parse("[a]\nx = -1\n", "f.cfg");
          c.get_positive("a", "x", 1.0);
        }).find("f.cfg:2") != std::string::npos);
  const auto unknown = message([] {
    auto c = Config::parse("[a]\nx = 1\ntypo = 2\n", "f.cfg");
    c.get_double("a", "x", 0.0);
    c.reject_unknown();
  });
  CHECK(unknown.find("f.cfg:3") != std::string::npos);
  CHECK(unknown.find("typo") != std::string::npos);
}

TEST_CASE("format_double round trips") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-17, 12345.0}) {
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_list({1.0, 0.5}) == "1, 0.5");
}

TEST_CASE("svg plots") {
  SvgPlot p("title <&>", "x", "y");
  p.add({"a", {0.0, 1.0, 2.0}, {1.0, std::nan(""), 3.0}, {0.1, 0.1, 0.1}});
  const auto svg = p.render(400, 300);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("title &lt;&amp;&gt;") != std::string::npos);
  CHECK_THROWS_AS(p.add({"b", {0.0}, {1.0, 2.0}, {}}), ConfigError);
}

TEST_CASE("score run is reproducible and worker independent") {
  const auto dir = scratch("score");
  const auto cfg = write_file(dir / "score.cfg", kScoreConfig);
  const auto a = run({"score", "--config", cfg, "--out", (dir / "a").string(), "--seed", "5"});
  REQUIRE(a.code == kExitOk);
  const auto b = run({"score", "--config", cfg, "--out", (dir / "b").string(), "--seed", "5",
                      "--workers", "3"});
  REQUIRE(b.code == kExitOk);
  const auto results = slurp(dir / "a" / "results.csv");
  CHECK(results == slurp(dir / "b" / "results.csv"));
  CHECK(fs::exists(dir / "a" / "plot.svg"));

  std::ifstream csv(dir / "a" / "results.csv");
  const auto table = read_table_csv(csv);
  CHECK(table.size() == 5);

  const auto m = nlohmann::json::parse(slurp(dir / "a" / "manifest.json"));
  CHECK(m["tool"] == "divker");
  CHECK(m["subcommand"] == "score");
  CHECK(m["seed"] == 5);
  CHECK(m["workers"] == 1);
  CHECK(m.contains("git_describe"));
  CHECK(m["wall_seconds"].get<double>() >= 0.0);
  CHECK(m["outputs"].size() >= 2);
  CHECK(m["summary"].contains("mean_nu"));

  // The echoed configuration alone reproduces the run.
  const auto echoed = write_file(dir / "echo.cfg", m["config"].get<std::string>());
  const auto c = run({"score", "--config", echoed, "--out", (dir / "c").string()});
  REQUIRE(c.code == kExitOk);
  CHECK(slurp(dir / "c" / "results.csv") == results);
}

TEST_CASE("unknown keys and bad values exit with 2") {
  const auto dir = scratch("errors");
  const auto typo =
      write_file(dir / "typo.cfg", std::string(kScoreConfig) + "\n[simulate]\nn_path = 5\n");
  auto r = run({"score", "--config", typo, "--out", (dir / "o").string()});
  CHECK(r.code == kExitConfig);
  r = run({"score", "--config", write_file(dir / "dup.cfg", "[model]\nname = ou\nname = ou\n"),
           "--out", (dir / "o").string()});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("dup.cfg:3") != std::string::npos);
  r = run({"simulate", "--config",
           write_file(dir / "neg.cfg", "[simulate]\ndt = -0.1\n"), "--out",
           (dir / "o").string()});
  CHECK(r.code == kExitConfig);
  r = run({"simulate", "--config",
           write_file(dir / "frac.cfg", "[simulate]\ndt = 0.3\nT = 1\n"), "--out",
           (dir / "o").string()});
  CHECK(r.code == kExitConfig);
  r = run({"simulate", "--config",
           write_file(dir / "model.cfg", "[model]\nname = nosuchmodel\n"), "--out",
           (dir / "o").string()});
  CHECK(r.code == kExitConfig);
  CHECK(run({"simulate", "--out", (dir / "o").string()}).code == kExitConfig);
  CHECK(run({"repro", "nosuchpreset"}).code == kExitConfig);
  CHECK(run({"frobnicate"}).code == kExitConfig);
}

TEST_CASE("blow-up exits with 3") {
  const auto dir = scratch("blowup");
  const auto cfg = write_file(dir / "b.cfg",
                              "[model]\nname = ou\n[simulate]\ndt = 3\nT = 300\nn_paths = 10\n");
  const auto r = run({"simulate", "--config", cfg, "--out", (dir / "o").string()});
  CHECK(r.code == kExitNumerical);
  CHECK(r.err.find("numerical") != std::string::npos);
}

TEST_CASE("simulate, oracle and fit subcommands write their outputs") {
  const auto dir = scratch("subcommands");
  auto cfg = write_file(dir / "sim.cfg",
                        "[model]\nname = ou\ndim = 2\n[simulate]\nT = 0.1\nn_paths = 20\n");
  REQUIRE(run({"simulate", "--config", cfg, "--out", (dir / "sim").string()}).code == kExitOk);
  std::ifstream sim(dir / "sim" / "results.csv");
  std::string header;
  std::getline(sim, header);
  CHECK(header == "path,valid,x_0,x_1");

  cfg = write_file(dir / "quad.cfg",
                   "[model]\nname = mult1d\n[oracle]\nkind = quadrature\nn_points = 2000\n"
                   "points_per_bin = 50\n");
  REQUIRE(run({"oracle", "--config", cfg, "--out", (dir / "quad").string()}).code == kExitOk);
  std::ifstream quad(dir / "quad" / "results.csv");
  CHECK(read_table_csv(quad).size() == 10);

  cfg = write_file(dir / "ou.cfg", "[model]\nname = ou\n[oracle]\nkind = ou_analytic\n");
  REQUIRE(run({"oracle", "--config", cfg, "--out", (dir / "ou").string()}).code == kExitOk);

  cfg = write_file(dir / "fit.cfg",
                   "[fit]\ngamma0 = 5, 1\ngamma_true = 0, 0\nn_data = 50\nn_paths = 50\n"
                   "n_updates = 2\n");
  REQUIRE(run({"fit", "--config", cfg, "--out", (dir / "fit").string()}).code == kExitOk);
  std::ifstream data(dir / "fit" / "dataset.csv");
  CHECK(read_dataset_csv(data).rows() == 50);
  // Refit from the written dataset.
  cfg = write_file(dir / "fit2.cfg",
                   "[fit]\ngamma0 = 5, 1\nn_paths = 50\nn_updates = 2\ndata_file = " +
                       (dir / "fit" / "dataset.csv").string() + "\n");
  REQUIRE(run({"fit", "--config", cfg, "--out", (dir / "fit2").string()}).code == kExitOk);
  std::ifstream hist(dir / "fit2" / "results.csv");
  std::getline(hist, header);
  CHECK(header == "iteration,gamma_0,gamma_1,grad_0,grad_1,distance,wall_seconds");
}

TEST_CASE("repro presets") {
  const auto names = repro_presets();
  for (const char* n : {"sec4.1", "sec4.2", "sec4.2-full", "sec5.1", "sec5.2"}) {
    CHECK(std::find(names.begin(), names.end(), n) != names.end());
    CHECK_NOTHROW(Config::parse(repro_preset_text(n), n));
  }
  CHECK_THROWS_AS(repro_preset_text("nope"), ConfigError);
}

TEST_CASE("repro sec4.1 fills every bin with at least 180 samples") {
  const auto dir = scratch("sec41");
  const auto r = run({"repro", "sec4.1", "--out", dir.string()});
  REQUIRE(r.code == kExitOk);
  for (const char* f : {"results.csv", "score.csv", "fd_oracle.csv", "plot.svg", "score.svg",
                        "manifest.json"})
    CHECK(fs::exists(dir / f));
  std::ifstream csv(dir / "results.csv");
  const auto t = read_table_csv(csv);
  REQUIRE(t.size() == 10);
  for (std::size_t i = 0; i < t.size(); ++i) {
    CHECK(t.counts[i] >= 180);
    CHECK_FALSE(t.empty(i));
  }
  const auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
  CHECK(m["preset"] == "sec4.1");
}
