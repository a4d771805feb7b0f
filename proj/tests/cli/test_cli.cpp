#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string err;
};

const fs::path& scratch() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "compbind_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome run(const std::string& args) {
  const fs::path err = scratch() / "stderr.txt";
  const std::string cmd = std::string(COMPBIND_CLI) + " " + args + " > /dev/null 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

fs::path write_config(const std::string& name, const std::string& text) {
  const fs::path p = scratch() / name;
  std::ofstream(p) << text;
  return p;
}

const char* kTiny =
    "corpus.n_samples=40\n"
    "corpus.holdout=4\n"
    "diffusion.steps=10\n"
    "diffusion.train_steps=6\n"
    "diffusion.batch=2\n"
    "proj.steps=4\n"
    "embed.steps=3\n"
    "eval.seeds=1\n"
    "reweight.tuning_prompts=2\n"
    "eval.heatmap_prompts=1\n";

}  // namespace

TEST_CASE("gen-data is deterministic given the seed") {
  const auto a = scratch() / "gen_a";
  const auto b = scratch() / "gen_b";
  const auto cfg = write_config("gen.txt", "corpus.n_samples=50\n");
  REQUIRE(run("gen-data --out " + a.string() + " --seed 7 --config " + cfg.string()).code == 0);
  REQUIRE(run("gen-data --out " + b.string() + " --seed 7 --config " + cfg.string()).code == 0);
  CHECK(slurp(a / "corpus.cbd") == slurp(b / "corpus.cbd"));
  CHECK(slurp(a / "manifest.txt") == slurp(b / "manifest.txt"));
  CHECK(slurp(a / "config.txt").find("corpus.seed=7\n") != std::string::npos);
  const auto c = scratch() / "gen_c";
  REQUIRE(run("gen-data --out " + c.string() + " --seed 8 --config " + cfg.string()).code == 0);
  CHECK(slurp(a / "corpus.cbd") != slurp(c / "corpus.cbd"));
}

TEST_CASE("existing outputs are never overwritten") {
  const auto a = scratch() / "gen_keep";
  REQUIRE(run("gen-data --out " + a.string() + " --seed 1").code == 0);
  const auto before = slurp(a / "corpus.cbd");
  const auto r = run("gen-data --out " + a.string() + " --seed 2");
  CHECK(r.code == 1);
  CHECK(r.err.find("already exists") != std::string::npos);
  CHECK(slurp(a / "corpus.cbd") == before);
}

TEST_CASE("train-wiclp without a pretrained checkpoint names the missing path") {
  const auto missing = scratch() / "nowhere" / "model.ckpt";
  const auto r = run("train-wiclp --model " + missing.string() + " --data x.cbd --out " + (scratch() / "w").string());
  CHECK(r.code == 1);
  CHECK(r.err.find(missing.string()) != std::string::npos);
  CHECK_FALSE(fs::exists(scratch() / "w"));
}

TEST_CASE("usage errors exit with code 1") {
  CHECK(run("frobnicate").code == 1);
  CHECK(run("gen-data --out " + (scratch() / "u1").string() + " --bogus").code == 1);
  CHECK(run("gen-data").code == 1);
  const auto bad = write_config("bad.txt", "corpus.colour=3\n");
  const auto r = run("gen-data --out " + (scratch() / "u2").string() + " --config " + bad.string());
  CHECK(r.code == 1);
  CHECK(r.err.find("corpus.colour") != std::string::npos);
  CHECK(run("gen-data --out " + (scratch() / "u3").string() + " --config " +
            write_config("bad2.txt", "corpus.p_corrupt=1.5\n").string())
            .code == 1);
  CHECK(run("--help").code == 0);
}

TEST_CASE("tradeoff writes one csv row per tau fraction") {
  const auto cfg = write_config("tiny.txt", kTiny).string();
  const auto data = scratch() / "t_data";
  const auto model = scratch() / "t_model";
  const auto proj = scratch() / "t_proj";
  const auto out = scratch() / "t_out";
  REQUIRE(run("gen-data --config " + cfg + " --out " + data.string()).code == 0);
  REQUIRE(run("pretrain --config " + cfg + " --data " + (data / "corpus.cbd").string() + " --out " + model.string())
              .code == 0);
  REQUIRE(run("train-wiclp --config " + cfg + " --model " + (model / "model.ckpt").string() + " --data " +
              (data / "corpus.cbd").string() + " --out " + proj.string())
              .code == 0);
  REQUIRE(run("tradeoff --config " + cfg + " --model " + (model / "model.ckpt").string() + " --proj " +
              (proj / "proj.ckpt").string() + " --taus 0,0.2,0.4,0.6,0.8,1.0 --out " + out.string())
              .code == 0);
  std::stringstream csv(slurp(out / "tradeoff.csv"));
  std::string line;
  int rows = -1;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 6);
  CHECK(fs::exists(out / "tradeoff.png"));
  const auto manifest = slurp(out / "manifest.txt");
  CHECK(manifest.find("input=" + (proj / "proj.ckpt").string()) != std::string::npos);
  CHECK(manifest.find("config_hash=") != std::string::npos);
}
