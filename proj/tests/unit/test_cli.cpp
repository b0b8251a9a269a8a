#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>

#include "test_paths.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::path(MTDLIFT_TEST_TMP) / "cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Run cli(const std::string& args) {
  const fs::path err = fs::path(MTDLIFT_TEST_TMP) / "cli_stderr.txt";
  const std::string cmd = std::string(MTDLIFT_CLI) + " " + args + " 2>" + err.string();
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  char buf[4096];
  std::size_t got;
  while ((got = fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, got);
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out, slurp(err)};
}

void check_error_line(const Run& r, const std::string& cls) {
  static const std::regex line("mtdlift: error: [a-z_]+: [^\n]+\n");
  CHECK(std::regex_match(r.err, line));
  CHECK(r.err.rfind("mtdlift: error: " + cls + ":", 0) == 0);
}

}  // namespace

TEST_CASE("evaluate reproduces the golden fixture values") {
  const Run r = cli("evaluate --scores " + test_data("metrics8_scores.csv") + " --data " + test_data("metrics8.tsv"));
  REQUIRE(r.code == 0);
  CHECK(r.out.find("qini=0.4428571428571428\n") != std::string::npos);
  CHECK(r.out.find("auuc=0.5257731958762889\n") != std::string::npos);
  CHECK(r.out.find("uplift_at_k=0.5\n") != std::string::npos);
  CHECK(r.out.find("average_uplift=0\n") != std::string::npos);

  const Run q = cli("evaluate --metric qini --scores " + test_data("metrics8_scores.csv") + " --data " +
                    test_data("metrics8.tsv"));
  CHECK(q.out == "qini=0.4428571428571428\n");
}

TEST_CASE("every subcommand documents where the metric formulas live") {
  for (const char* sub : {"gen-data", "transform", "train", "grid-search", "predict", "evaluate", "rq1", "rq2",
                          "plot-curves"}) {
    const Run r = cli(std::string(sub) + " --help");
    CAPTURE(sub);
    CHECK(r.code == 0);
    CHECK(r.out.find("docs/metrics.md") != std::string::npos);
  }
}

TEST_CASE("failures map to distinct exit classes") {
  const fs::path dir = scratch("errors");
  const std::string d8 = test_data("metrics8.tsv");
  const std::string s8 = test_data("metrics8_scores.csv");

  Run r = cli("");
  CHECK(r.code == 2);
  check_error_line(r, "usage");
  r = cli("evaluate --data " + d8 + " --scores " + s8 + " --bogus");
  CHECK(r.code == 2);
  check_error_line(r, "usage");
  r = cli("transform --data " + d8 + " --mode finance -o " + (dir / "x.tsv").string());
  CHECK(r.code == 2);

  r = cli("evaluate --data /nonexistent.tsv --scores " + s8);
  CHECK(r.code == 10);
  check_error_line(r, "io");

  std::ofstream(dir / "broken.tsv") << "#uplift-mtd v1 D=1 K=1 S=1\nx\t0\t\tnot-a-number\t\n";
  r = cli("evaluate --data " + (dir / "broken.tsv").string() + " --scores " + s8);
  CHECK(r.code == 3);
  check_error_line(r, "parse");
  CHECK(r.err.find("line 2") != std::string::npos);

  std::ofstream(dir / "wide.tsv") << "#uplift-mtd v1 D=2 K=1 S=1\nx\t0\t\t1\t\n";
  r = cli("evaluate --data " + (dir / "wide.tsv").string() + " --scores " + s8);
  CHECK(r.code == 4);

  std::ofstream(dir / "short.csv") << "id,score\nm0,1\n";
  r = cli("evaluate --data " + d8 + " --scores " + (dir / "short.csv").string());
  CHECK(r.code == 4);
  check_error_line(r, "schema");

  std::ofstream(dir / "map.json") << R"({"groups": ["PERSONNEL"]})";
  r = cli("transform --data " + test_data("binarize12.tsv") + " --mode basic --category-map " +
          (dir / "map.json").string() + " -o " + (dir / "b.tsv").string());
  CHECK(r.code == 5);
  check_error_line(r, "taxonomy");

  std::ofstream(dir / "tiny.tsv") << "#uplift-mtd v1 D=1 K=1 S=1\nonly\t0\t\t1\t\n";
  r = cli("train --model slearner --data " + (dir / "tiny.tsv").string() + " --out " + (dir / "m").string());
  CHECK(r.code == 9);
  check_error_line(r, "training");

  std::ofstream(dir / "infeasible.json")
      << R"({"effect": "null", "propensity": "constant", "n": 500, "target": {"treated_fraction": 0.5, "control_positive_rate": 0.1, "treated_positive_rate": 0.4}})";
  r = cli("gen-data --spec " + (dir / "infeasible.json").string() + " -o " + (dir / "g.tsv").string());
  CHECK(r.code == 7);
  check_error_line(r, "calibration");

  r = cli("gen-data --preset nothing -o " + (dir / "g.tsv").string());
  CHECK(r.code == 11);
  check_error_line(r, "invalid_argument");

  std::ofstream(dir / "flat.csv") << "m0,0.9\nm1,0.8\nm2,0.7\nm3,0.6\nm4,0.5\nm5,0.4\nm6,0.3\nm7,0.2\n";
  std::ofstream(dir / "onearm.tsv") << "#uplift-mtd v1 D=1 K=1 S=1\n"
                                    << "m0\t1\t\t0\t0,0,0:1\nm1\t0\t\t0\t0,0,0:1\nm2\t1\t\t0\t0,0,0:1\n"
                                    << "m3\t0\t\t0\t\nm4\t1\t\t0\t\nm5\t0\t\t0\t\nm6\t1\t\t0\t\nm7\t0\t\t0\t\n";
  r = cli("evaluate --metric uplift_at_k --data " + (dir / "onearm.tsv").string() + " --scores " +
          (dir / "flat.csv").string());
  CHECK(r.code == 12);
  check_error_line(r, "degenerate");

  std::ofstream(dir / "bad.json") << "{not json";
  r = cli("gen-data --spec " + (dir / "bad.json").string() + " -o " + (dir / "g.tsv").string());
  CHECK(r.code == 3);
}

TEST_CASE("train, predict and plot leave inputs untouched and write only under --out") {
  const fs::path dir = scratch("pipeline");
  const std::string data = (dir / "d.tsv").string();
  REQUIRE(cli("gen-data --preset linear-rct --n 1500 --seed 4 -o " + data).code == 0);
  const std::string before = slurp(data);

  const fs::path out = dir / "run";
  Run r = cli("train --model mtdnet --data " + data + " --epochs 2 --hidden-size 8 --seed 1 --out " + out.string());
  REQUIRE(r.code == 0);
  CHECK(fs::exists(out / "model.ckpt"));
  CHECK(fs::exists(out / "config.json"));
  CHECK(slurp(out / "metrics.log").rfind("epoch L_C L_T L_D total val_total\n", 0) == 0);
  CHECK(slurp(out / "config.json").find("\"hidden_size\": 8") != std::string::npos);

  r = cli("predict --model " + (out / "model.ckpt").string() + " --data " + data + " --out " + (dir / "p").string());
  REQUIRE(r.code == 0);
  const std::string scores = slurp(dir / "p" / "scores.csv");
  CHECK(scores.rfind("id,score\nc000000,", 0) == 0);

  r = cli("plot-curves --svg --scores " + (dir / "p" / "scores.csv").string() + " --data " + data + " --out " +
          (dir / "curves").string());
  REQUIRE(r.code == 0);
  for (const char* f : {"qini.csv", "uplift.csv", "qini.svg", "uplift.svg"}) CHECK(fs::exists(dir / "curves" / f));

  r = cli("transform --mode collapse --data " + data + " -o " + (dir / "c.tsv").string());
  CHECK(r.code == 0);
  CHECK(slurp(dir / "c.tsv").rfind("#uplift-mtd v1 D=8 K=24 S=1\n", 0) == 0);

  CHECK(slurp(data) == before);
}

TEST_CASE("identical commands give byte-identical outputs") {
  const fs::path dir = scratch("determinism");
  for (const char* tag : {"a", "b"}) {
    const fs::path sub = dir / tag;
    fs::create_directories(sub);
    REQUIRE(cli("gen-data --preset time-sensitive --n 800 --seed 3 -o " + (sub / "d.tsv").string()).code == 0);
    REQUIRE(cli("train --model mtdnet --epochs 2 --hidden-size 8 --seed 1 --data " + (sub / "d.tsv").string() +
                " --out " + (sub / "m").string())
                .code == 0);
    REQUIRE(cli("train --model tlearner --base-learner boosted --data " + (sub / "d.tsv").string() + " --out " +
                (sub / "t").string())
                .code == 0);
  }
  CHECK(slurp(dir / "a" / "d.tsv") == slurp(dir / "b" / "d.tsv"));
  CHECK(slurp(dir / "a" / "m" / "model.ckpt") == slurp(dir / "b" / "m" / "model.ckpt"));
  CHECK(slurp(dir / "a" / "m" / "metrics.log") == slurp(dir / "b" / "m" / "metrics.log"));
  CHECK(slurp(dir / "a" / "t" / "model.ckpt") == slurp(dir / "b" / "t" / "model.ckpt"));
}
