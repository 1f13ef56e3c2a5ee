#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include <fmt/format.h>

#include "adherence/artifact.hpp"
#include "adherence/text.hpp"

using namespace adherence;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const int status = std::system(fmt::format("{} {} > /dev/null 2>&1", ADHERENCE_CLI, args).c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct Workdir {
  fs::path dir;
  Workdir() {
    dir = fs::temp_directory_path() / "adherence_cli_test";
    fs::remove_all(dir);
    write_file(dir / "cfg.json",
               R"({"slvm": {"latent1": 3, "latent2": 3, "hidden": [8]}, "lstm": {"hidden": 6, "layers": 1},)"
               R"( "train": {"max_epochs": 2, "seed": 11}, "folds": 2, "samples": 3, "ig_steps": 8, "ig_samples": 2})");
  }
  ~Workdir() { fs::remove_all(dir); }
  [[nodiscard]] std::string path(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(run("") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("train --out x --no-such-flag") == 2);
  CHECK(run("eval") == 2);
  CHECK(run("--help") == 0);
}

TEST_CASE("train is reproducible and eval enforces thresholds") {
  Workdir w;
  REQUIRE(run(fmt::format("ingest --config {} --synthetic 30 --out {}", w.path("cfg.json"), w.path("a"))) == 0);
  REQUIRE(run(fmt::format("ingest --config {} --synthetic 30 --out {}", w.path("cfg.json"), w.path("b"))) == 0);
  REQUIRE(run("train --out " + w.path("a")) == 0);
  REQUIRE(run("train --out " + w.path("b")) == 0);
  for (const char* kind : {"slvm", "lstm"}) {
    for (int f = 0; f < 2; ++f) {
      const auto rel = fs::path("models") / kind / fmt::format("fold{}.model", f);
      const Artifact a = load_artifact(w.dir / "a" / rel);
      const Artifact b = load_artifact(w.dir / "b" / rel);
      REQUIRE(a.parameters.size() == b.parameters.size());
      for (size_t i = 0; i < a.parameters.size(); ++i) CHECK(a.parameters[i].value == b.parameters[i].value);
      CHECK(read_file(w.dir / "a" / rel) == read_file(w.dir / "b" / rel));
    }
  }

  CHECK(run(fmt::format("eval --out {} --require \"slvm/one-step/rmse/all<100\"", w.path("a"))) == 0);
  CHECK(run(fmt::format("eval --out {} --require \"slvm/one-step/rmse/all<0\"", w.path("a"))) == 1);
  CHECK(run(fmt::format("eval --out {} --require \"nonsense\"", w.path("a"))) == 2);
  const std::string metrics = read_file(w.dir / "a" / "report" / "metrics.csv");
  CHECK(run("eval --out " + w.path("a")) == 0);
  CHECK(read_file(w.dir / "a" / "report" / "metrics.csv") == metrics);

  CHECK(run("attribute --out " + w.path("a")) == 0);
  CHECK(read_file(w.dir / "a" / "attribution" / "importance.csv").rfind("feature,mean,std,rank\n", 0) == 0);
  CHECK(run("simulate --out " + w.path("a")) == 0);
  CHECK(fs::exists(w.dir / "a" / "simulate" / "effects.csv"));
  CHECK(run(fmt::format("simulate --out {} --first 1,2", w.path("a"))) == 2);
}
