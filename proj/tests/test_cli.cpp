// Drives the traitlens executable as a subprocess.
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "test_files.hpp"

namespace fs = std::filesystem;
using testutil::read_bytes;
using testutil::scratch_dir;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

std::string quote(const std::string& s) { return "'" + s + "'"; }

Run run_cli(const std::string& args, const fs::path& work) {
  const fs::path out = work / "stdout.txt", err = work / "stderr.txt";
  const std::string cmd = "TRAITLENS_THREADS=1 " + quote(TRAITLENS_CLI) + " " + args + " >" + quote(out.string()) +
                          " 2>" + quote(err.string());
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_bytes(out);
  r.err = read_bytes(err);
  return r;
}

// Relative path -> contents of every regular file below dir.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_bytes(e.path());
  }
  return files;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);) out.push_back(line);
  return out;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, sep)) out.push_back(cell);
  return out;
}

// Small corpus plus a one-epoch all-in-one model, shared by the downstream tests.
struct Pipeline {
  fs::path root, corpus, model_dir, model;

  Pipeline() {
    root = scratch_dir("cli_pipeline");
    corpus = root / "corpus";
    model_dir = root / "train";
    model = model_dir / "model.ckpt";
    Run g = run_cli("gen-corpus --out " + quote(corpus.string()) + " --images-per-word 3 --signal 1.0 --noise 8 --seed 7",
                    root);
    REQUIRE_MESSAGE(g.code == 0, g.err);
    Run t = run_cli("train --corpus " + quote(corpus.string()) + " --out " + quote(model_dir.string()) +
                        " --arch mini-resnet --heads all-in-one --mode scratch --epochs 1 --seed 1",
                    root);
    REQUIRE_MESSAGE(t.code == 0, t.err);
  }
};

const Pipeline& pipeline() {
  static const Pipeline p;
  return p;
}

}  // namespace

TEST_CASE("usage errors exit 1 with usage text") {
  const fs::path work = scratch_dir("cli_usage");
  Run none = run_cli("", work);
  CHECK(none.code == 1);

  Run no_out = run_cli("gen-corpus --images-per-word 2", work);
  CHECK(no_out.code == 1);
  CHECK(no_out.err.find("--out") != std::string::npos);
  CHECK(no_out.err.find("Usage") != std::string::npos);

  Run bad_flag = run_cli("gen-corpus --out x --bogus 3", work);
  CHECK(bad_flag.code == 1);

  Run bad_signal = run_cli("gen-corpus --out " + quote((work / "neg").string()) + " --signal -1", work);
  CHECK(bad_signal.code == 1);
  CHECK_FALSE(fs::exists(work / "neg"));

  Run bad_arch = run_cli("train --corpus c --arch vgg", work);
  CHECK(bad_arch.code == 1);

  Run no_pretrained = run_cli("train --corpus c --mode finetune", work);
  CHECK(no_pretrained.code == 1);
  CHECK(no_pretrained.err.find("--pretrained") != std::string::npos);

  Run bad_momentum = run_cli("train --corpus c --momentum 1.5", work);
  CHECK(bad_momentum.code == 1);

  Run help = run_cli("--help", work);
  CHECK(help.code == 0);
  CHECK(help.out.find("gen-corpus") != std::string::npos);
}

TEST_CASE("gen-corpus writes the default-size corpus and is idempotent") {
  const fs::path work = scratch_dir("cli_gen");
  const fs::path dir = work / "c1";
  const std::string args = "gen-corpus --out " + quote(dir.string()) + " --images-per-word 20 --signal 1.0 --noise 8 --seed 7";
  Run first = run_cli(args, work);
  REQUIRE_MESSAGE(first.code == 0, first.err);
  CHECK(first.out.find("2200 images (1760 train, 440 test)") != std::string::npos);
  CHECK(fs::exists(dir / "manifest.jsonl"));
  CHECK(fs::exists(dir / "config.toml"));
  const auto before = snapshot(dir);
  CHECK(before.size() > 2200);

  Run again = run_cli(args, work);
  REQUIRE(again.code == 0);
  CHECK(snapshot(dir) == before);

  // replay from the echoed configuration into another directory
  const fs::path other = work / "c2";
  Run replay = run_cli("--config " + quote((dir / "config.toml").string()) + " gen-corpus --out " + quote(other.string()), work);
  REQUIRE_MESSAGE(replay.code == 0, replay.err);
  auto replayed = snapshot(other);
  auto original = before;
  original.erase("config.toml");
  replayed.erase("config.toml");
  CHECK(replayed == original);
}

TEST_CASE("I/O failures exit 2") {
  const fs::path work = scratch_dir("cli_io");
  Run missing = run_cli("train --corpus " + quote((work / "nowhere").string()) + " --out " + quote((work / "t").string()), work);
  CHECK(missing.code == 2);
  CHECK(missing.err.find("nowhere") != std::string::npos);

  // output path below a regular file
  {
    std::ofstream(work / "plain") << "x";
  }
  Run blocked = run_cli("gen-corpus --out " + quote((work / "plain" / "c").string()) + " --images-per-word 2", work);
  CHECK(blocked.code == 2);

  const auto& p = pipeline();
  Run no_model = run_cli("eval --model " + quote((work / "absent.ckpt").string()) + " --corpus " + quote(p.corpus.string()) +
                             " --out " + quote((work / "e").string()),
                         work);
  CHECK(no_model.code == 2);

  {
    std::ofstream(work / "junk.ckpt") << "not a checkpoint";
  }
  Run junk = run_cli("eval --model " + quote((work / "junk.ckpt").string()) + " --corpus " + quote(p.corpus.string()) +
                         " --out " + quote((work / "e").string()),
                     work);
  CHECK(junk.code == 2);
}

TEST_CASE("train echoes the effective configuration and replays byte-identically") {
  const auto& p = pipeline();
  for (const char* name : {"model.ckpt", "history.csv", "accuracy.csv", "config.toml"}) {
    CHECK_MESSAGE(fs::exists(p.model_dir / name), name);
  }
  const std::string echo = read_bytes(p.model_dir / "config.toml");
  CHECK(echo.find("[train]") != std::string::npos);
  CHECK(echo.find("momentum = 0.9\n") != std::string::npos);
  CHECK(echo.find("lr = 0.01\n") != std::string::npos);
  CHECK(echo.find("weight-decay = 0.0005\n") != std::string::npos);
  CHECK(echo.find("dropout = 0.5\n") != std::string::npos);
  CHECK(echo.find("batch-size = 32\n") != std::string::npos);

  const fs::path work = scratch_dir("cli_replay");
  const fs::path copy = work / "config.toml";
  fs::copy_file(p.model_dir / "config.toml", copy);
  const fs::path again = work / "again";
  Run replay = run_cli("--config " + quote(copy.string()) + " train --out " + quote(again.string()), work);
  REQUIRE_MESSAGE(replay.code == 0, replay.err);
  for (const char* name : {"model.ckpt", "history.csv", "accuracy.csv"}) {
    CHECK_MESSAGE(read_bytes(again / name) == read_bytes(p.model_dir / name), name);
  }

  // flags win over the file
  const fs::path other = work / "other";
  Run override_seed = run_cli("--config " + quote(copy.string()) + " train --seed 2 --out " + quote(other.string()), work);
  REQUIRE(override_seed.code == 0);
  CHECK(read_bytes(other / "config.toml").find("seed = 2\n") != std::string::npos);
  CHECK(read_bytes(other / "model.ckpt") != read_bytes(p.model_dir / "model.ckpt"));
}

TEST_CASE("eval, activations and tsne honour their output contracts without touching inputs") {
  const auto& p = pipeline();
  const fs::path work = scratch_dir("cli_downstream");
  const auto corpus_before = snapshot(p.corpus);
  const std::string model_before = read_bytes(p.model);
  const std::string common = " --model " + quote(p.model.string()) + " --corpus " + quote(p.corpus.string());

  SUBCASE("eval") {
    const fs::path out = work / "results";
    Run r = run_cli("eval" + common + " --out " + quote(out.string()), work);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto metrics = nlohmann::json::parse(read_bytes(out / "metrics.json"));
    REQUIRE(metrics["traits"].size() == 5);
    double sum = 0.0;
    for (const auto& t : metrics["traits"]) {
      const double acc = t["accuracy_percent"];
      CHECK(acc >= 0.0);
      CHECK(acc <= 100.0);
      sum += acc;
      CHECK(fs::exists(out / ("roc_" + t["trait"].get<std::string>() + ".csv")));
      CHECK(fs::exists(out / ("pr_" + t["trait"].get<std::string>() + ".csv")));
    }
    CHECK(metrics["average_accuracy_percent"].get<double>() == doctest::Approx(sum / 5).epsilon(1e-12));
    CHECK(metrics["config"]["command"] == "eval");
    CHECK(fs::exists(out / "curves.svg"));
    CHECK(fs::exists(out / "config.toml"));
  }

  SUBCASE("activations") {
    const fs::path out = work / "act";
    Run r = run_cli("activations" + common + " --trait E --pole high --top 50 --out " + quote(out.string()), work);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto rows = lines(r.out);
    REQUIRE(rows.size() == 51);
    CHECK(rows[0] == "rank,sample_id,score");
    double prev = 1e300;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto cells = split(rows[i], ',');
      REQUIRE(cells.size() == 3);
      CHECK(std::stoul(cells[0]) == i);
      const double s = std::stod(cells[2]);
      CHECK(s <= prev);
      prev = s;
    }
    CHECK(read_bytes(out / "activations_E_high.csv") == r.out);

    Run bad_pole = run_cli("activations" + common + " --trait E --pole middle", work);
    CHECK(bad_pole.code == 1);
    Run bad_trait = run_cli("activations" + common + " --trait Q", work);
    CHECK(bad_trait.code == 1);
  }

  SUBCASE("tsne") {
    const fs::path out = work / "tsne";
    Run r = run_cli("tsne" + common + " --perplexity 30 --seed 3 --per-pole 10 --out " + quote(out.string()), work);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.find("embedded 100 points") != std::string::npos);
    const auto rows = lines(read_bytes(out / "embedding.csv"));
    REQUIRE(rows.size() == 101);
    CHECK(rows[0] == "sample_id,x,y,trait,polarity");
    CHECK(fs::exists(out / "embedding.json"));

    const fs::path again = work / "tsne2";
    Run replay = run_cli("--config " + quote((out / "config.toml").string()) + " tsne --out " + quote(again.string()), work);
    REQUIRE_MESSAGE(replay.code == 0, replay.err);
    CHECK(read_bytes(again / "embedding.csv") == read_bytes(out / "embedding.csv"));
  }

  CHECK(snapshot(p.corpus) == corpus_before);
  CHECK(read_bytes(p.model) == model_before);
}

TEST_CASE("incompatible checkpoint and corpus exit 1 naming both descriptors") {
  const auto& p = pipeline();
  const fs::path work = scratch_dir("cli_incompatible");
  const fs::path small = work / "crop24";
  Run g = run_cli("gen-corpus --out " + quote(small.string()) + " --images-per-word 2 --image-size 28 --crop-size 24", work);
  REQUIRE_MESSAGE(g.code == 0, g.err);

  Run e = run_cli("eval --model " + quote(p.model.string()) + " --corpus " + quote(small.string()) + " --out " +
                      quote((work / "e").string()),
                  work);
  CHECK(e.code == 1);
  CHECK(e.err.find("\"input_size\":32") != std::string::npos);
  CHECK(e.err.find("24") != std::string::npos);

  Run t = run_cli("train --corpus " + quote(small.string()) + " --out " + quote((work / "t").string()) + " --epochs 1", work);
  CHECK(t.code == 1);

  // finetuning a mini-alex from a mini-resnet checkpoint
  Run f = run_cli("train --corpus " + quote(p.corpus.string()) + " --out " + quote((work / "f").string()) +
                      " --arch mini-alex --mode finetune --pretrained " + quote(p.model.string()) + " --epochs 1",
                  work);
  CHECK(f.code == 1);
  CHECK(f.err.find("mini") != std::string::npos);
}

TEST_CASE("numerical divergence exits 3") {
  const auto& p = pipeline();
  const fs::path work = scratch_dir("cli_numerical");
  Run r = run_cli("train --corpus " + quote(p.corpus.string()) + " --out " + quote((work / "t").string()) +
                      " --lr 1e30 --epochs 1 --no-test-eval",
                  work);
  CHECK(r.code == 3);
  CHECK(r.err.find("lr") != std::string::npos);
}
