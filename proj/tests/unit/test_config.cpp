#include <cstdlib>

#include <gtest/gtest.h>

#include "modalign/config.hpp"
#include "modalign/synthetic.hpp"
#include "modalign/util/strings.hpp"
#include "support.hpp"

using namespace modalign;
using modalign::testing::TempDir;
using nlohmann::json;

namespace {

json base_config() {
  return json::parse(R"({
    "dataset": {"manifest": "manifest.csv", "schema": "schema.json",
                "task": {"kind": "classification", "num_classes": 3},
                "task_description_file": "task.txt"},
    "backends": {"mock": {"kind": "mock", "knowledge": "knowledge.json"}},
    "pipeline": {"preset": "full", "llm_backend": "mock"},
    "training": {"epochs": 2, "model": {"d_model": 16, "layers": 1, "heads": 2, "ff_width": 32, "head_hidden": 16},
                 "tokenizer": {"mode": "learned"}},
    "scenarios": {"universe": ["text", "image", "tabular"], "pairs": [{"train": "tabular", "test": "image"}]}
  })");
}

struct ConfigFixture : ::testing::Test {
  TempDir dir{"config"};
  ConfigFixture() { synthetic::write_style_gap_fixture(dir.path(), {40, 2}); }
  RunConfig parse(const json& j) { return parse_run_config(j, dir.path()); }
};

int run(const std::string& command) {
  const int rc = std::system((command + " >/dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string cli() { return MODALIGN_CLI_PATH; }

}  // namespace

TEST_F(ConfigFixture, ParsesAndResolvesPaths) {
  const RunConfig c = parse(base_config());
  EXPECT_EQ(c.dataset.manifest, dir.path() / "manifest.csv");
  EXPECT_EQ(c.dataset.task_description, synthetic::kStyleGapTask);
  EXPECT_EQ(c.dataset.metric, Metric::accuracy);
  EXPECT_EQ(c.pipeline.llm.backend_id, "mock");
  EXPECT_TRUE(c.pipeline.translation);
  EXPECT_EQ(c.training.epochs, 2u);
  EXPECT_EQ(c.model.d_model, 16u);
  EXPECT_EQ(c.tokenizer.mode, nn::VocabMode::learned);
  ASSERT_EQ(c.scenarios.size(), 1u);
  EXPECT_EQ(to_string(c.scenarios[0].test_set), "image");
  EXPECT_EQ(c.output_dir, dir.path() / "out");
}

TEST_F(ConfigFixture, RejectsUnknownKeysAndBadReferences) {
  const auto rejects = [&](const std::string& override) {
    json j = base_config();
    apply_override(j, override);
    EXPECT_THROW(parse(j), ConfigError) << override;
  };
  rejects("training.lr=0.1");
  rejects("dataset.bogus=1");
  rejects("pipeline.llm_backend=nowhere");
  rejects("pipeline.preset=fancy");
  rejects("dataset.metric=f1");
  rejects("backends.mock.kind=telepathy");
  rejects("scenarios.pairs=[{\"train\": \"text\", \"test\": \"text\"}]");
  rejects("training.model.heads=3");
  json j = base_config();
  j.erase("dataset");
  EXPECT_THROW(parse(j), ConfigError);
}

TEST_F(ConfigFixture, OverridesParseJsonOrFallBackToStrings) {
  json j = base_config();
  apply_override(j, "training.epochs=9");
  apply_override(j, "pipeline.strip_terms=[\"adoption\"]");
  apply_override(j, "dataset.name=pets and more");
  EXPECT_EQ(j["training"]["epochs"], 9);
  EXPECT_EQ(j["dataset"]["name"], "pets and more");
  const RunConfig c = parse(j);
  EXPECT_EQ(c.training.epochs, 9u);
  EXPECT_EQ(c.pipeline.strip_terms, std::vector<std::string>{"adoption"});
  EXPECT_THROW(apply_override(j, "no_equals_sign"), ConfigError);
}

TEST_F(ConfigFixture, LoadsFromFileAndBuildsRuntime) {
  util::write_file((dir / "config.json").string(), base_config().dump());
  const RunConfig c = load_run_config(dir / "config.json", {"pipeline.preset=transform-only"});
  EXPECT_FALSE(c.pipeline.translation);
  Runtime rt = build_runtime(c);
  EXPECT_EQ(rt.experiment.dataset->records.size(), 40u);
  EXPECT_TRUE(rt.gateway->has_backend("mock"));
  EXPECT_EQ(rt.experiment.model.d_model, 16u);
  EXPECT_THROW(load_run_config(dir / "missing.json"), ConfigError);
  util::write_file((dir / "broken.json").string(), "{");
  EXPECT_THROW(load_run_config(dir / "broken.json"), ConfigError);
}

TEST_F(ConfigFixture, ReplayNeedsCacheAndHttpNeedsEndpoint) {
  json j = base_config();
  apply_override(j, "backends.mock.kind=http");
  EXPECT_THROW(parse(j), ConfigError);
  j = base_config();
  apply_override(j, "backends.mock.kind=replay");
  apply_override(j, "backends.mock.cache_dir=nowhere");
  EXPECT_THROW(parse(j), ConfigError);
}

// ---------------------------------------------------------------------------
// Command line

struct CliFixture : ::testing::Test {
  TempDir dir{"cli"};
  std::string config;

  CliFixture() {
    EXPECT_EQ(run(std::string(MODALIGN_MAKE_FIXTURE_PATH) + " " + dir.path().string() + " --records 60 --seed 4"), 0);
    config = (dir / "config.json").string();
  }

  int modalign(const std::string& args) {
    return run(cli() + " --config " + config + " --set training.epochs=2 " + args);
  }
  std::string read(const std::filesystem::path& p) { return util::read_file(p.string()); }
};

TEST_F(CliFixture, BadConfigExitsWithTwo) {
  EXPECT_EQ(modalign("--set dataset.schema=nope.json validate-config"), 2);
  EXPECT_EQ(modalign("--set training.bogus=1 validate-config"), 2);
  EXPECT_EQ(modalign("no-such-command"), 2);
  EXPECT_EQ(modalign("validate-config"), 0);
}

TEST_F(CliFixture, TransformIsByteIdenticalOnRerun) {
  const auto out = dir / "t";
  ASSERT_EQ(modalign("--scenario tabular:image --out " + out.string() + " transform --split test"), 0);
  const auto first = read(out / "test.transformed.jsonl");
  ASSERT_EQ(modalign("--scenario tabular:image --out " + out.string() + " transform --split test"), 0);
  EXPECT_EQ(first, read(out / "test.transformed.jsonl"));
  EXPECT_NE(first.find("The image shows"), std::string::npos);
}

TEST_F(CliFixture, PipelineWritesStagesAndManifest) {
  const auto out = dir / "p";
  ASSERT_EQ(modalign("--scenario tabular:image --out " + out.string() + " pipeline"), 0);
  for (const auto* f : {"train/01-transformed.jsonl", "train/04-final.jsonl", "test/02-translated.jsonl",
                        "test/05-final.jsonl"}) {
    EXPECT_TRUE(std::filesystem::exists(out / f)) << f;
  }
  const auto manifest = json::parse(read(out / "manifest.json"));
  ASSERT_EQ(manifest["train"].size(), 4u);
  ASSERT_EQ(manifest["test"].size(), 5u);
  for (const auto* side : {"train", "test"}) {
    for (const auto& f : manifest[side]) {
      EXPECT_EQ(f["sha256"].get<std::string>().size(), 64u);
      EXPECT_GT(f["records"].get<int>(), 0);
    }
  }
}

TEST_F(CliFixture, TrainWritesCheckpointAndHistoryThenEvalReloads) {
  const auto out = dir / "m";
  ASSERT_EQ(modalign("--scenario tabular:image --out " + out.string() + " train"), 0);
  EXPECT_TRUE(std::filesystem::exists(out / "model.ckpt"));
  EXPECT_TRUE(read(out / "history.csv").starts_with("epoch,train_loss,val_loss,val_metric\n"));
  const auto metrics = json::parse(read(out / "metrics.json"));
  const double value = metrics["value"].get<double>();

  const auto scored = dir / "e";
  ASSERT_EQ(modalign("--scenario tabular:image --out " + scored.string() + " eval --checkpoint " +
                     (out / "model.ckpt").string()),
            0);
  EXPECT_DOUBLE_EQ(json::parse(read(scored / "metrics.json"))["value"].get<double>(), value);
  EXPECT_TRUE(read(scored / "predictions.csv").starts_with("id,label,prediction\n"));
}

TEST_F(CliFixture, MatrixReportsEveryScenarioAndPreset) {
  const auto out = dir / "x";
  ASSERT_EQ(modalign("--set 'pipeline.matrix_presets=[\"transform-only\",\"full\"]' --set pipeline.matrix_threads=4 "
                     "--out " +
                     out.string() + " matrix"),
            0);
  const auto lines = util::split(read(out / "report.csv"), '\n');
  std::size_t scenario_rows = 0, averages = 0;
  for (const auto& l : lines) {
    scenario_rows += l.starts_with("scenario,");
    averages += l.starts_with("average,");
  }
  EXPECT_EQ(scenario_rows, 24u);
  EXPECT_EQ(averages, 2u);
  EXPECT_TRUE(std::filesystem::exists(out / "timings.csv"));
  EXPECT_EQ(json::parse(read(out / "report.json"))["rows"].size(), 24u);
}

TEST_F(CliFixture, DiagnoseWritesPointsAndDistances) {
  const auto out = dir / "d";
  ASSERT_EQ(modalign("--scenario tabular:image --out " + out.string() + " diagnose"), 0);
  const auto d = json::parse(read(out / "distances.json"));
  EXPECT_LT(d["after"].get<double>(), d["before"].get<double>());
  EXPECT_TRUE(read(out / "points_before.csv").starts_with("id,group,v0,"));
  EXPECT_TRUE(std::filesystem::exists(out / "points_after.csv"));
}
