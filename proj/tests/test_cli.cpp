#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gduap/config.hpp"
#include "gduap/hash.hpp"
#include "gduap/io.hpp"
#include "gduap/run.hpp"

using namespace gduap;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

// Runs the CLI inside `cwd`, capturing both streams.
Result cli(const fs::path& cwd, const std::string& args) {
  const std::string cmd = "cd '" + cwd.string() + "' && '" + std::string(GDUAP_CLI_PATH) + "' " + args +
                          " > cli.out 2> cli.err";
  const int st = std::system(cmd.c_str());
  return {WIFEXITED(st) ? WEXITSTATUS(st) : -1, io::read_file(cwd / "cli.out"), io::read_file(cwd / "cli.err")};
}

std::string shell_out(const std::string& cmd) {
  std::string out;
  if (FILE* p = popen(cmd.c_str(), "r")) {
    char buf[256];
    while (fgets(buf, sizeof buf, p)) out += buf;
    pclose(p);
  }
  while (!out.empty() && (out.back() == '\n' || out.back() == ' ')) out.pop_back();
  return out;
}

class CliDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("gduap_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  void write(const std::string& rel, const std::string& text) { io::write_file(dir / rel, text); }

  fs::path dir;
};

// Small datasets plus a one-epoch victim shared by the pipeline tests.
class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root = fs::temp_directory_path() / "gduap_cli_pipeline";
    fs::remove_all(root);
    run::write_synthetic_datasets(root / "data", 3, 120, 40, 16);
    io::write_file(root / "train.json", R"({"command": "train-victim", "seed": 1,
      "paths": {"dataset_root": "data/desk10", "output_dir": "runs/victim"},
      "victim": {"epochs": 1}})");
    train_rc = cli(root, "train-victim --config train.json").code;
  }
  static void TearDownTestSuite() { fs::remove_all(root); }

  static fs::path weights() { return root / "runs/victim/weights/small_conv_a-s1.uapw"; }

  static inline fs::path root;
  static inline int train_rc = -1;
};

}  // namespace

TEST(Schema, PublishedFileMatchesEmbeddedSchema) {
  const auto published = nlohmann::json::parse(io::read_file(fs::path(GDUAP_SOURCE_DIR) / "docs/config.schema.json"));
  EXPECT_EQ(published, config::schema());
}

TEST(Schema, ErrorsCarryLineAndColumn) {
  const std::string text = "{\n  \"command\": \"craft\",\n  \"craft\": {\n    \"xii\": 5,\n    \"xi\": \"big\"\n  }\n}\n";
  try {
    config::parse_and_validate(text, "cfg.json");
    FAIL() << "expected a config error";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("cfg.json:4:12: /craft/xii: unknown key 'xii'"), std::string::npos) << msg;
    EXPECT_NE(msg.find("cfg.json:5:11: /craft/xi: expected number, got string"), std::string::npos) << msg;
  }
}

TEST(Schema, MalformedJsonReportsPosition) {
  try {
    config::parse_and_validate("{\n  \"seed\": 1,\n  oops\n}", "bad.json");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("bad.json:3:", 0), 0u) << e.what();
  }
}

TEST(Schema, RangeAndEnumChecks) {
  const auto issues = config::validate(nlohmann::json::parse(
      R"({"craft": {"theta": 0, "prior_mode": "noise"}, "defense": [{"kind": "jpeg", "quality": 101}, {}]})"));
  std::set<std::string> ptrs;
  for (const auto& i : issues) ptrs.insert(i.pointer);
  EXPECT_EQ(ptrs, (std::set<std::string>{"/craft/theta", "/craft/prior_mode", "/defense/0/quality", "/defense/1"}));
}

TEST(BuildConfig, FlagsOverrideConfigOverrideDefaults) {
  const auto doc = nlohmann::json::parse(
      R"({"command": "craft", "seed": 4, "craft": {"seed": 9, "xi": 8}, "victim": {"seed": 2},
          "paths": {"output_dir": "a"}})");
  const auto plain = run::build_config(doc, {"craft"});
  EXPECT_EQ(plain.craft.config.seed, 9u);
  EXPECT_EQ(plain.victim.spec.seed, 2u);
  EXPECT_EQ(plain.craft.config.xi, 8.0);
  EXPECT_EQ(plain.craft.config.lr, 0.1);
  EXPECT_EQ(plain.craft.config.prior_mode, PriorMode::range);
  EXPECT_EQ(plain.paths.output_dir, "a");
  const auto flagged = run::build_config(doc, {"craft", 17, std::string("b")});
  EXPECT_EQ(flagged.seed, 17u);
  EXPECT_EQ(flagged.craft.config.seed, 17u);
  EXPECT_EQ(flagged.victim.spec.seed, 17u);
  EXPECT_EQ(flagged.paths.output_dir, "b");
  EXPECT_EQ(flagged.source["seed"], 17);
}

TEST(BuildConfig, SeedFallsBackToTopLevel) {
  const auto c = run::build_config(nlohmann::json::parse(R"({"command": "craft", "seed": 5})"), {});
  EXPECT_EQ(c.craft.config.seed, 5u);
  EXPECT_EQ(c.victim.spec.seed, 5u);
}

TEST(BuildConfig, SubcommandMustMatch) {
  EXPECT_THROW(run::build_config(nlohmann::json::parse(R"({"command": "eval"})"), {"craft"}), ConfigError);
}

TEST(BuildConfig, DefenseGridAlwaysStartsUndefended) {
  const auto c = run::build_config(
      nlohmann::json::parse(R"({"command": "defend", "defense": [{"kind": "jpeg", "quality": 50}]})"), {});
  ASSERT_EQ(c.defense.size(), 2u);
  EXPECT_EQ(c.defense[0].kind, defense::Kind::none);
  EXPECT_EQ(c.defense[1].quality, 50);
  const auto d = run::build_config(nlohmann::json::parse(R"({"command": "defend"})"), {});
  EXPECT_EQ(d.defense.size(), 7u);
}

TEST_F(CliDir, UsageErrorsExitTwo) {
  EXPECT_EQ(cli(dir, "").code, 2);
  EXPECT_EQ(cli(dir, "craft").code, 2);
  EXPECT_EQ(cli(dir, "frobnicate --config x.json").code, 2);
  const auto r = cli(dir, "craft --config missing.json");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("missing.json"), std::string::npos);
}

TEST_F(CliDir, InvalidConfigExitsTwoWithPosition) {
  write("c.json", "{\n  \"command\": \"craft\",\n  \"craft\": {\"patience_H\": 0}\n}\n");
  const auto r = cli(dir, "craft --config c.json");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("c.json:3:27: /craft/patience_H"), std::string::npos) << r.err;
}

TEST_F(CliDir, MissingInputsExitTwo) {
  write("c.json", R"({"command": "eval", "paths": {"dataset_root": "nowhere"}})");
  const auto r = cli(dir, "eval --config c.json");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("dataset_root"), std::string::npos) << r.err;
}

TEST_F(CliDir, RefusesNonEmptyOutputWithoutOverwrite) {
  fs::create_directories(dir / "out");
  write("out/keep.txt", "x");
  EXPECT_THROW(run::RunDir(dir / "out", false), ConfigError);
  EXPECT_NO_THROW(run::RunDir(dir / "out", true));
  EXPECT_TRUE(fs::exists(dir / "out/reports"));
}

TEST_F(CliDir, SchemaCommandPrintsSchema) {
  const auto r = cli(dir, "schema");
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(nlohmann::json::parse(r.out), config::schema());
}

TEST_F(CliPipeline, TrainCraftEvalCompare) {
  ASSERT_EQ(train_rc, 0);
  ASSERT_TRUE(fs::exists(weights()));
  io::write_file(root / "craft.json", R"({"command": "craft", "seed": 2,
    "paths": {"dataset_root": "data/desk10", "substitute_root": "data/substitute",
              "weights": "runs/victim/weights/small_conv_a-s1.uapw", "output_dir": "runs/craft"},
    "craft": {"max_iterations": 60}})");
  ASSERT_EQ(cli(root, "craft --config craft.json").code, 0);
  ASSERT_TRUE(fs::exists(root / "runs/craft/perturbations/range.uapf"));

  // rerunning into the same directory needs --overwrite
  EXPECT_EQ(cli(root, "craft --config craft.json").code, 2);
  EXPECT_EQ(cli(root, "craft --config craft.json --overwrite").code, 0);

  io::write_file(root / "eval.json", R"({"command": "eval",
    "paths": {"dataset_root": "data/desk10", "weights": "runs/victim/weights/small_conv_a-s1.uapw",
              "perturbations": ["runs/craft/perturbations/range.uapf"], "output_dir": "runs/eval"}})");
  ASSERT_EQ(cli(root, "eval --config eval.json").code, 0);
  const auto rep = nlohmann::json::parse(io::read_file(root / "runs/eval/reports/eval.json"));
  EXPECT_EQ(rep["n_samples"], 40);
  EXPECT_TRUE(rep["perturbations"].contains("range"));
  EXPECT_TRUE(rep["perturbations"].contains("baseline"));

  // manifest hashes agree with git's object hashing where git is available
  const auto man = nlohmann::json::parse(io::read_file(root / "runs/eval/manifest.json"));
  EXPECT_EQ(man["command"], "eval");
  ASSERT_FALSE(man["artifacts"].empty());
  const bool have_git = shell_out("command -v git") != "";
  for (const auto& a : man["artifacts"]) {
    const auto p = root / "runs/eval" / a["path"].get<std::string>();
    EXPECT_EQ(a["git_hash"], git_blob_hash_file(p));
    if (have_git) EXPECT_EQ(a["git_hash"], shell_out("git hash-object '" + p.string() + "'"));
  }
  for (const auto& i : man["inputs"]) {
    const fs::path p = i["path"].get<std::string>();
    EXPECT_EQ(i["git_hash"], git_blob_hash_file(p.is_absolute() ? p : root / p));
  }

  io::write_file(root / "compare.json", R"({"command": "compare",
    "paths": {"runs": ["runs/eval", "runs/craft"], "output_dir": "runs/cmp"}})");
  const auto r = cli(root, "compare --config compare.json");
  EXPECT_EQ(r.code, 1);
  const auto log = nlohmann::json::parse(r.err.substr(0, r.err.find('\n')));
  EXPECT_EQ(log["level"], "error");
  EXPECT_EQ(log["command"], "compare");
  EXPECT_NE(log["message"].get<std::string>().find("runs/craft"), std::string::npos);
}

TEST_F(CliPipeline, MismatchedPerturbationShapeExitsTwo) {
  ASSERT_EQ(train_rc, 0);
  Perturbation small{make_image({16, 16, 3}), 10.0, {"x", "range", 0, 0, 0.0}};
  save_perturbation(small, root / "small.uapf");
  io::write_file(root / "bad_eval.json", R"({"command": "eval",
    "paths": {"dataset_root": "data/desk10", "weights": "runs/victim/weights/small_conv_a-s1.uapw",
              "perturbations": ["small.uapf"], "output_dir": "runs/bad"}})");
  const auto r = cli(root, "eval --config bad_eval.json");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("shape"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(root / "runs/bad"));
}
