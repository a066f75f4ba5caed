#include <set>

#include <gtest/gtest.h>

#include "modalign/align.hpp"
#include "modalign/mock_llm.hpp"
#include "modalign/pipeline.hpp"
#include "modalign/synthetic.hpp"
#include "modalign/util/strings.hpp"
#include "support.hpp"

using namespace modalign;
using modalign::testing::TempDir;

namespace {

/// Mock provider that records every request it sees.
class RecordingMock : public Provider {
 public:
  explicit RecordingMock(MockKnowledge k = {}) : inner_(std::move(k)) {}
  ProviderReply invoke(const ChatRequest& r) override {
    {
      std::lock_guard lock(mutex_);
      seen.push_back(r);
    }
    return inner_.invoke(r);
  }
  std::vector<ChatRequest> seen;

 private:
  MockLlmProvider inner_;
  std::mutex mutex_;
};

struct Harness {
  Gateway gateway;
  std::shared_ptr<RecordingMock> mock;
  StageContext ctx{gateway, StageSettings{}, TemplateSet::defaults(), ErrorPolicy::fail_fast, 1};

  explicit Harness(MockKnowledge k = {}) : mock(std::make_shared<RecordingMock>(std::move(k))) {
    BackendOptions o;
    o.mode = RunMode::mock;
    gateway.register_backend("llm", mock, o);
  }
};

StagedText staged(std::string id, std::vector<TextSlot> slots, TextStage stage = TextStage::transformed) {
  StagedText s;
  s.record_id = std::move(id);
  s.per_modality = std::move(slots);
  s.stage = stage;
  s.label = Label{std::size_t{0}};
  return s;
}

std::vector<Demonstration> pool(std::size_t n) {
  std::vector<Demonstration> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({"The image shows crimson fur " + std::to_string(i) + ".", "The Color is Red.", LlmStage::translate});
  return out;
}

}  // namespace

TEST(Templates, PlaceholdersRenderOrFail) {
  EXPECT_EQ(render_placeholders("a {{x}} b {{y}}", {{"x", "1"}, {"y", "2"}}), "a 1 b 2");
  EXPECT_THROW(render_placeholders("{{missing}}", {}), ContractError);
  EXPECT_THROW(render_placeholders("{{open", {{"open", "x"}}), ContractError);
}

TEST(Templates, SaveLoadRoundTripAndOverride) {
  TempDir dir;
  TemplateSet t = TemplateSet::defaults();
  t.save(dir.path());
  const auto back = TemplateSet::load(dir.path());
  EXPECT_EQ(back.summarize.system, t.summarize.system);
  EXPECT_EQ(back.augment.instruction, t.augment.instruction);
  util::write_file((dir / "summarize.system.txt").string(), "Custom system.");
  EXPECT_EQ(TemplateSet::load(dir.path()).summarize.system, "Custom system.");
  EXPECT_THROW(TemplateSet::load(dir / "nope"), ConfigError);
}

TEST(Translation, PromptHasSystemThreeShotsAndQuery) {
  const auto src = staged("r1", {{ModalityKind::image(), "The image shows azure fur."}});
  const auto exemplars = pool(3);
  const TranslationTarget target{{ModalityKind::image()}, {ModalityKind::tabular()}};
  const auto r = build_translation_prompt(src, exemplars, target, StageSettings{}, TemplateSet::defaults());
  ASSERT_EQ(r.messages.size(), 8u);
  EXPECT_EQ(r.messages[0].role, ChatRole::system);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(r.messages[1 + 2 * i].role, ChatRole::user);
    EXPECT_NE(r.messages[1 + 2 * i].content.find(exemplars[i].input), std::string::npos);
    EXPECT_EQ(r.messages[2 + 2 * i].role, ChatRole::assistant);
    EXPECT_EQ(r.messages[2 + 2 * i].content, exemplars[i].output);
  }
  EXPECT_TRUE(r.messages[7].content.starts_with(stage_marker(LlmStage::translate)));
  EXPECT_EQ(*extract_tagged(r.messages[7].content, kInputOpen, kInputClose), "The image shows azure fur.");
  EXPECT_NE(r.messages[0].content.find("image"), std::string::npos);
  EXPECT_NE(r.messages[0].content.find("tabular"), std::string::npos);
  EXPECT_DOUBLE_EQ(r.temperature, kStageSampling.temperature);
  EXPECT_THROW(build_translation_prompt(src, pool(4), target, StageSettings{}, TemplateSet::defaults()), ContractError);
}

TEST(Translation, ExemplarSelectionIsSeededPerRecord) {
  const auto a = select_exemplars(16, 7, "r1");
  EXPECT_EQ(a, select_exemplars(16, 7, "r1"));
  EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 3u);
  for (const auto i : a) EXPECT_LT(i, 16u);
  bool differs = false;
  for (int i = 0; i < 20 && !differs; ++i) differs = select_exemplars(16, 7, "r" + std::to_string(i)) != a;
  EXPECT_TRUE(differs);
  EXPECT_THROW(select_exemplars(2, 7, "r1"), ContractError);
}

TEST(Translation, StageRewritesInferenceRecordsOnly) {
  Harness h(MockKnowledge({{"azure fur", "Color", "Blue"}}));
  const StagedCorpus corpus{staged("r1", {{ModalityKind::image(), "The image shows azure fur."}})};
  TranslateOptions opts;
  opts.target = {{ModalityKind::image()}, {ModalityKind::tabular()}};
  const auto out = translate_stage(corpus, pool(5), opts, h.ctx);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].stage, TextStage::translated);
  EXPECT_EQ(*out[0].find(kTranslatedSlot), "The Color is Blue.");
  EXPECT_EQ(out[0].provenance.back().stage, TextStage::translated);

  opts.side = CorpusSide::training;
  EXPECT_THROW(translate_stage(corpus, pool(5), opts, h.ctx), ContractError);
  opts.side = CorpusSide::inference;
  const auto calls = h.mock->seen.size();
  EXPECT_THROW(translate_stage(corpus, pool(2), opts, h.ctx), ContractError);
  EXPECT_EQ(h.mock->seen.size(), calls);
  StagedCorpus wrong = corpus;
  wrong[0].stage = TextStage::final;
  EXPECT_THROW(translate_stage(wrong, pool(5), opts, h.ctx), ContractError);
}

TEST(Summarization, OneShotPromptAndOutputSlot) {
  Harness h;
  const auto sample = staged("d", {{ModalityKind::text(), "A calm dog. A calm dog."}});
  const auto demo = build_summary_demonstration(sample, h.ctx);
  EXPECT_EQ(demo.output, "A calm dog.");
  const StagedCorpus corpus{
      staged("r1", {{ModalityKind::text(), "Shy at first."}, {ModalityKind::tabular(), "The Type is Dog."}})};
  const auto out = summarize_stage(corpus, demo, h.ctx);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].stage, TextStage::summarized);
  EXPECT_EQ(out[0].per_modality.size(), 1u);
  EXPECT_EQ(out[0].per_modality[0].modality, kSummarySlot);
  const auto& last = h.mock->seen.back();
  ASSERT_EQ(last.messages.size(), 4u);
  EXPECT_EQ(last.messages[2].content, demo.output);
  EXPECT_NE(last.messages[3].content.find("Shy at first.\nThe Type is Dog."), std::string::npos);
}

TEST(Augmentation, AppendsRationaleAndStripsTerms) {
  Harness h;
  const StagedCorpus corpus{staged("r1", {{ModalityKind::text(), "Fast adoption of a young dog."}})};
  AugmentOptions off{false, {}};
  EXPECT_EQ(augment_stage(corpus, "Predict the adoption speed.", off, h.ctx), corpus);

  const auto out = augment_stage(corpus, "Predict the adoption speed.", {}, h.ctx);
  ASSERT_TRUE(out[0].appendix);
  EXPECT_FALSE(out[0].appendix->empty());
  EXPECT_EQ(out[0].per_modality[0].text, "Fast adoption of a young dog.\n" + *out[0].appendix);
  EXPECT_NE(h.mock->seen.back().messages.back().content.find("Predict the adoption speed."), std::string::npos);

  const auto stripped = augment_stage(corpus, "Predict the adoption speed.", {true, {"ADOPTION"}}, h.ctx);
  EXPECT_EQ(util::to_lower_ascii(*stripped[0].appendix).find("adoption"), std::string::npos);
  EXPECT_THROW(augment_stage(corpus, "  ", {}, h.ctx), ContractError);
}

TEST(Augmentation, MergeJoinsSummaryAndAppendix) {
  auto s = staged("r1", {{kSummarySlot, "Summary."}}, TextStage::summarized);
  auto a = staged("r1", {{kAugmentedSlot, "x\nWhy."}}, TextStage::augmented);
  a.appendix = "Why.";
  a.provenance = {{TextStage::augmented, "llm", "mock", "d1"}};
  const auto m = merge_parallel({s}, {a});
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].per_modality[0].text, "Summary.\nWhy.");
  EXPECT_EQ(m[0].provenance.back().request_digest, "d1");
  a.appendix.reset();
  EXPECT_THROW(merge_parallel({s}, {a}), ContractError);
}

/// Refuses any request whose final turn mentions "BOOM".
class RefusingMock : public Provider {
 public:
  ProviderReply invoke(const ChatRequest& r) override {
    if (r.messages.back().content.find("BOOM") != std::string::npos) throw ProviderError(400, "refused");
    return inner_.invoke(r);
  }

 private:
  MockLlmProvider inner_;
};

TEST(Stages, SkipAndLogDropsFailingRecords) {
  Gateway gateway;
  BackendOptions o;
  o.mode = RunMode::mock;
  gateway.register_backend("llm", std::make_shared<RefusingMock>(), o);
  struct {
    StageContext ctx;
  } h{{gateway, StageSettings{}, TemplateSet::defaults(), ErrorPolicy::skip_and_log, 1}};
  StagedCorpus corpus{staged("ok", {{ModalityKind::text(), "Fine."}}), staged("bad", {{ModalityKind::text(), "BOOM."}})};
  const Demonstration demo{"a", "b", LlmStage::summarize};
  const auto out = summarize_stage(corpus, demo, h.ctx);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].record_id, "ok");
  h.ctx.policy = ErrorPolicy::fail_fast;
  try {
    summarize_stage(corpus, demo, h.ctx);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.record_id(), "bad");
  }
}

TEST(Stages, WorkersDoNotChangeResults) {
  Harness h;
  StagedCorpus corpus;
  for (int i = 0; i < 30; ++i) corpus.push_back(staged("r" + std::to_string(i), {{ModalityKind::text(), "T " + std::to_string(i % 7) + "."}}));
  const Demonstration demo{"a", "b", LlmStage::summarize};
  const auto serial = summarize_stage(corpus, demo, h.ctx);
  h.ctx.workers = 6;
  EXPECT_EQ(summarize_stage(corpus, demo, h.ctx), serial);
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

struct PipelineFixture : ::testing::Test {
  TempDir dir{"pipe"};
  synthetic::StyleGapFiles files = synthetic::write_style_gap_fixture(dir.path(), {60, 3});
  std::shared_ptr<const Dataset> dataset = std::make_shared<const Dataset>(synthetic::load_style_gap(files));
  Harness h{MockKnowledge::load(files.knowledge)};
  SidecarCaptioner captioner;

  PipelineOutput run(const MismatchScenario& s, PipelineConfig config) {
    const auto [train, test] = scenario_views(dataset, s, {});
    config.llm.backend_id = "llm";
    return run_pipeline({train, test, std::string(synthetic::kStyleGapTask), h.gateway, captioner}, config);
  }
};

const std::vector<ModalityKind> kU{ModalityKind::text(), ModalityKind::image(), ModalityKind::tabular()};

std::vector<std::string> stage_names(const StagedSide& side) {
  std::vector<std::string> out;
  for (const auto& [name, _] : side.stages) out.push_back(name);
  return out;
}

}  // namespace

TEST_F(PipelineFixture, FullPresetProducesEveryStage) {
  const MismatchScenario s{kU, {ModalityKind::tabular()}, {ModalityKind::image()}, ScenarioMode::strict_mismatch};
  const auto out = run(s, make_preset("full"));
  EXPECT_TRUE(out.translated);
  EXPECT_EQ(stage_names(out.train), (std::vector<std::string>{"transformed", "summarized", "augmented", "final"}));
  EXPECT_EQ(stage_names(out.test),
            (std::vector<std::string>{"transformed", "translated", "summarized", "augmented", "final"}));
  for (const auto& r : out.test.final_corpus()) {
    EXPECT_EQ(r.stage, TextStage::final);
    ASSERT_TRUE(r.concat);
    EXPECT_NE(r.concat->find("The Color is"), std::string::npos) << *r.concat;
  }
  EXPECT_EQ(out.train.final_corpus().size(), 48u);
  EXPECT_EQ(out.test.final_corpus().size(), 12u);
}

TEST_F(PipelineFixture, TransformOnlyFinalEqualsConcatenation) {
  const MismatchScenario s{kU, {ModalityKind::tabular(), ModalityKind::text()}, {ModalityKind::image()},
                           ScenarioMode::strict_mismatch};
  const auto out = run(s, make_preset("transform-only"));
  EXPECT_FALSE(out.translated);
  EXPECT_EQ(stage_names(out.train), (std::vector<std::string>{"transformed", "final"}));
  const auto& transformed = *out.train.find("transformed");
  const auto& fin = out.train.final_corpus();
  ASSERT_EQ(transformed.size(), fin.size());
  for (std::size_t i = 0; i < fin.size(); ++i) EXPECT_EQ(*fin[i].concat, concat_in_order(transformed[i]).concat.value());
  EXPECT_TRUE(h.mock->seen.empty());
}

TEST_F(PipelineFixture, PresetsAndDeterminism) {
  EXPECT_EQ(preset_names().size(), 4u);
  EXPECT_THROW(make_preset("nope"), ConfigError);
  const auto p = make_preset("transform+summarize");
  EXPECT_TRUE(p.summarization);
  EXPECT_FALSE(p.translation);
  EXPECT_FALSE(p.augmentation);
  const MismatchScenario s{kU, {ModalityKind::tabular()}, {ModalityKind::image()}, ScenarioMode::strict_mismatch};
  const auto a = run(s, make_preset("full"));
  const auto b = run(s, make_preset("full"));
  EXPECT_EQ(a.test.final_corpus(), b.test.final_corpus());
  EXPECT_EQ(a.train.final_corpus(), b.train.final_corpus());
}

TEST_F(PipelineFixture, ExemplarsPairTestStyleWithTrainStyle) {
  const auto [train, test] =
      scenario_views(dataset, {kU, {ModalityKind::tabular()}, {ModalityKind::image()}, ScenarioMode::strict_mismatch}, {});
  const auto ex = exemplar_pool(train, {ModalityKind::image()}, captioner, 5, 7);
  ASSERT_EQ(ex.size(), 5u);
  for (const auto& e : ex) {
    EXPECT_TRUE(e.input.starts_with("The image shows")) << e.input;
    EXPECT_TRUE(e.output.starts_with("The Color is")) << e.output;
  }
  EXPECT_EQ(ex, exemplar_pool(train, {ModalityKind::image()}, captioner, 5, 7));
}
