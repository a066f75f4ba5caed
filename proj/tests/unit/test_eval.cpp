#include <random>

#include <gtest/gtest.h>

#include "modalign/eval.hpp"
#include "modalign/mock_llm.hpp"
#include "modalign/synthetic.hpp"
#include "modalign/util/strings.hpp"
#include "support.hpp"

using namespace modalign;
using modalign::testing::TempDir;

namespace {

double brute_force_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  std::vector<double> all;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      double sq = 0.0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) sq += (a(i, k) - b(j, k)) * (a(i, k) - b(j, k));
      all.push_back(std::sqrt(sq));
    }
  }
  long double total = 0.0L;
  for (double d : all) total += d;
  return static_cast<double>(total / static_cast<long double>(all.size()));
}

MatrixRow row(std::string train, std::string test, std::string preset, double value, bool failed = false) {
  MatrixRow r;
  r.train_set = std::move(train);
  r.test_set = std::move(test);
  r.preset = std::move(preset);
  r.metric = "accuracy";
  r.value = value;
  r.seed = 7;
  r.failed = failed;
  return r;
}

const std::vector<ModalityKind> kU{ModalityKind::text(), ModalityKind::image(), ModalityKind::tabular()};

/// Small style-gap experiment with a compact model, cheap enough for unit tests.
struct ExperimentFixture : ::testing::Test {
  TempDir dir{"eval"};
  Gateway gateway;
  SidecarCaptioner captioner;
  Experiment experiment;

  ExperimentFixture() {
    const auto files = synthetic::write_style_gap_fixture(dir.path(), {60, 5});
    experiment.dataset = std::make_shared<const Dataset>(synthetic::load_style_gap(files));
    experiment.task_description = files.task_description;
    experiment.model.d_model = 16;
    experiment.model.layers = 1;
    experiment.model.heads = 2;
    experiment.model.ff_width = 32;
    experiment.model.head_hidden = 16;
    experiment.tokenizer.mode = nn::VocabMode::learned;
    experiment.training.epochs = 4;
    experiment.training.learning_rate = 3e-3;
    BackendOptions o;
    o.mode = RunMode::mock;
    gateway.register_backend("llm", std::make_shared<MockLlmProvider>(MockKnowledge::load(files.knowledge)), o);
  }

  RunEnvironment env() { return {gateway, captioner}; }

  static PipelineConfig preset(std::string_view name) {
    PipelineConfig p = make_preset(name);
    p.llm.backend_id = "llm";
    return p;
  }
};

}  // namespace

TEST(Metrics, RelativeGain) {
  EXPECT_NEAR(relative_gain(0.355, 0.289), 0.228373702422145, 1e-12);
  EXPECT_DOUBLE_EQ(relative_gain(2.0, 4.0), -0.5);
  EXPECT_THROW(relative_gain(1.0, 0.0), ContractError);
}

TEST(Metrics, AccuracyAndErrors) {
  const std::vector<std::size_t> p{0, 1, 2, 2}, t{0, 1, 1, 2};
  EXPECT_DOUBLE_EQ(metric_accuracy(p, t), 0.75);
  const std::vector<double> x{1.0, 2.0, 4.0}, y{1.0, 4.0, 0.0};
  EXPECT_DOUBLE_EQ(metric_mse(x, y), 20.0 / 3.0);
  EXPECT_DOUBLE_EQ(metric_rmse(x, y), std::sqrt(20.0 / 3.0));
  EXPECT_THROW(metric_accuracy(std::vector<std::size_t>{1}, t), ContractError);
  EXPECT_THROW(metric_mse(std::vector<double>{}, std::vector<double>{}), ContractError);
  EXPECT_EQ(parse_metric("rmse"), Metric::rmse);
  EXPECT_THROW(parse_metric("f1"), ConfigError);
  EXPECT_TRUE(higher_is_better(Metric::accuracy));
  EXPECT_FALSE(higher_is_better(Metric::mse));
}

TEST(Distance, MatchesBruteForceOnRandomGroups) {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> normal(0.0, 3.0);
  std::uniform_int_distribution<int> size(1, 12);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = size(rng);
    Eigen::MatrixXd a(size(rng), d), b(size(rng), d);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = normal(rng);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = normal(rng);
    EXPECT_NEAR(mean_pairwise_distance(a, b), brute_force_distance(a, b), 1e-9);
  }
  const Eigen::MatrixXf f = Eigen::MatrixXf::Ones(2, 3);
  EXPECT_NEAR(mean_pairwise_distance(f, Eigen::MatrixXf::Zero(1, 3)), std::sqrt(3.0), 1e-6);
  EXPECT_THROW(mean_pairwise_distance(Eigen::MatrixXd(0, 3), Eigen::MatrixXd::Ones(1, 3)), ContractError);
  EXPECT_THROW(mean_pairwise_distance(Eigen::MatrixXd::Ones(1, 2), Eigen::MatrixXd::Ones(1, 3)), ShapeError);
}

TEST(Distance, PointsCsv) {
  Eigen::MatrixXd pts(2, 2);
  pts << 1.0, -0.5, 0.25, 3.0;
  const std::vector<std::string> ids{"a", "b"}, groups{"train", "test"};
  EXPECT_EQ(points_csv(ids, groups, pts), "id,group,v0,v1\na,train,1,-0.5\nb,test,0.25,3\n");
  EXPECT_THROW(points_csv(std::vector<std::string>{"a"}, groups, pts), ShapeError);
}

TEST(Report, SummariesUsePopulationVarianceAndSkipFailures) {
  MatrixReport r;
  r.presets = {"p", "q"};
  r.rows = {row("text", "image", "p", 0.5), row("text", "image", "q", 0.25), row("image", "text", "p", 0.75),
            row("image", "text", "q", 0.0, true)};
  const auto s = r.summaries();
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].rows, 2u);
  EXPECT_DOUBLE_EQ(s[0].mean, 0.625);
  EXPECT_DOUBLE_EQ(s[0].variance, 0.015625);
  EXPECT_EQ(s[1].rows, 1u);
  EXPECT_DOUBLE_EQ(s[1].mean, 0.25);
  EXPECT_DOUBLE_EQ(s[1].variance, 0.0);

  EXPECT_DOUBLE_EQ(*r.gain_over_best_other(0), 1.0);
  EXPECT_DOUBLE_EQ(*r.gain_over_best_other(1), -0.5);
  EXPECT_FALSE(r.gain_over_best_other(2));
  EXPECT_FALSE(r.gain_over_best_other(3));

  EXPECT_EQ(r.to_csv(),
            "row_type,train_set,test_set,preset,metric,value,variance,seed,status,gain_over_best_other\n"
            "scenario,text,image,p,accuracy,0.5,,7,ok,1\n"
            "scenario,text,image,q,accuracy,0.25,,7,ok,-0.5\n"
            "scenario,image,text,p,accuracy,0.75,,7,ok,\n"
            "scenario,image,text,q,accuracy,,,7,failed,\n"
            "average,,,p,accuracy,0.625,0.015625,,2,\n"
            "average,,,q,accuracy,0.25,0,,1,\n");
  const auto j = r.to_json();
  EXPECT_EQ(j["rows"].size(), 4u);
  EXPECT_TRUE(j["rows"][3]["failed"].get<bool>());
  EXPECT_EQ(j["averages"][0]["rows"], 2);
}

TEST(Report, LowerIsBetterForErrorMetrics) {
  MatrixReport r;
  r.metric = Metric::rmse;
  r.presets = {"p", "q", "s"};
  r.rows = {row("a", "b", "p", 1.0), row("a", "b", "q", 2.0), row("a", "b", "s", 4.0)};
  EXPECT_DOUBLE_EQ(*r.gain_over_best_other(1), 1.0);
  EXPECT_DOUBLE_EQ(*r.gain_over_best_other(0), -0.5);
}

TEST_F(ExperimentFixture, ScenarioRunReportsMetricAndHistory) {
  const MismatchScenario s{kU, {ModalityKind::tabular()}, {ModalityKind::image()}, ScenarioMode::strict_mismatch};
  const auto out = run_scenario(experiment, s, preset("full"), env());
  EXPECT_EQ(out.metric, "accuracy");
  EXPECT_GE(out.value, 0.0);
  EXPECT_LE(out.value, 1.0);
  EXPECT_EQ(out.predictions.size(), 12u);
  EXPECT_FALSE(out.history.epochs.empty());
  ASSERT_TRUE(out.trained);

  const MismatchScenario bad{kU, {ModalityKind::tabular()}, {ModalityKind::tabular()}, ScenarioMode::strict_mismatch};
  EXPECT_THROW(run_scenario(experiment, bad, preset("full"), env()), ContractError);
  Experiment wrong = experiment;
  wrong.metric = Metric::rmse;
  EXPECT_THROW(run_scenario(wrong, s, preset("full"), env()), ConfigError);
}

TEST_F(ExperimentFixture, MatrixIsDeterministicAcrossThreadCounts) {
  const std::vector<MismatchScenario> scenarios{
      {kU, {ModalityKind::tabular()}, {ModalityKind::image()}, ScenarioMode::strict_mismatch},
      {kU, {ModalityKind::image()}, {ModalityKind::text()}, ScenarioMode::strict_mismatch}};
  const std::vector<PipelineConfig> presets{preset("transform-only"), preset("full")};
  const auto one = run_matrix(experiment, scenarios, presets, env(), {1, true});
  const auto four = run_matrix(experiment, scenarios, presets, env(), {4, true});
  ASSERT_EQ(one.rows.size(), 4u);
  EXPECT_EQ(one.rows[0].preset, "transform-only");
  EXPECT_EQ(one.rows[1].preset, "full");
  EXPECT_EQ(one.rows[2].train_set, "image");
  EXPECT_EQ(one.to_csv(), four.to_csv());
  EXPECT_EQ(one.to_csv(), run_matrix(experiment, scenarios, presets, env(), {1, true}).to_csv());
}

TEST_F(ExperimentFixture, MatrixFailFastAndKeepGoing) {
  const std::vector<MismatchScenario> scenarios{
      {kU, {ModalityKind::tabular()}, {ModalityKind::image()}, ScenarioMode::strict_mismatch}};
  PipelineConfig broken = preset("full");
  broken.llm.backend_id = "absent";
  const std::vector<PipelineConfig> presets{preset("transform-only"), broken};
  EXPECT_THROW(run_matrix(experiment, scenarios, presets, env(), {1, true}), Error);
  const auto r = run_matrix(experiment, scenarios, presets, env(), {2, false});
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_FALSE(r.rows[0].failed);
  EXPECT_TRUE(r.rows[1].failed);
  EXPECT_NE(r.rows[1].error.find("full"), std::string::npos);
  EXPECT_EQ(r.summaries()[1].rows, 0u);
}

TEST_F(ExperimentFixture, SummarizationMovesGroupsCloser) {
  const MismatchScenario s{kU, {ModalityKind::tabular()}, {ModalityKind::image()}, ScenarioMode::strict_mismatch};
  const auto d = diagnose_distance(experiment, s, preset("full"), env());
  EXPECT_GT(d.before, 0.0);
  EXPECT_LT(d.after, d.before);
  EXPECT_EQ(d.points_before.rows(), 60);
  EXPECT_EQ(d.ids_after.size(), 60u);
  EXPECT_THROW(diagnose_distance(experiment, s, preset("transform-only"), env()), ConfigError);
}
