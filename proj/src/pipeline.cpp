#include "modalign/pipeline.hpp"

#include <algorithm>
#include <functional>
#include <iostream>
#include <numeric>

#include "modalign/util/rng.hpp"

namespace modalign {
namespace {

constexpr std::uint64_t kSampleSalt = 0x5A3D1E;

std::vector<std::size_t> seeded_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  util::Rng rng(util::mix_seed(seed, kSampleSalt));
  rng.shuffle(order);
  return order;
}

bool is_subset(const ModalitySet& a, const ModalitySet& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

StagedCorpus finalize(const StagedCorpus& corpus, const ModalityOrder& order) {
  StagedCorpus out;
  out.reserve(corpus.size());
  for (const auto& s : corpus) out.push_back(concat_in_order(s, order));
  return out;
}

}  // namespace

void PipelineConfig::validate() const {
  if (exemplar_pool_size < kTranslationShots) {
    throw ConfigError("pipeline: exemplar_pool_size must be at least " + std::to_string(kTranslationShots));
  }
  if (workers == 0) throw ConfigError("pipeline: workers must be positive");
  if (llm.backend_id.empty()) throw ConfigError("pipeline: llm backend id is empty");
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"transform-only", "transform+summarize", "transform+summarize+augment",
                                              "full"};
  return names;
}

PipelineConfig make_preset(std::string_view name, PipelineConfig base) {
  base.preset = std::string(name);
  if (name == "transform-only") {
    base.translation = base.summarization = base.augmentation = false;
  } else if (name == "transform+summarize") {
    base.translation = base.augmentation = false;
    base.summarization = true;
  } else if (name == "transform+summarize+augment") {
    base.translation = false;
    base.summarization = base.augmentation = true;
  } else if (name == "full") {
    base.translation = base.summarization = base.augmentation = true;
  } else {
    throw ConfigError("unknown pipeline preset '" + std::string(name) + "'");
  }
  return base;
}

const StagedCorpus* StagedSide::find(std::string_view stage) const {
  for (const auto& [name, corpus] : stages)
    if (name == stage) return &corpus;
  return nullptr;
}

StagedCorpus transform_view(const DatasetView& view, Captioner& captioner, const ModalityOrder& order,
                            ErrorPolicy policy) {
  StagedCorpus out;
  out.reserve(view.size());
  for (std::size_t i = 0; i < view.size(); ++i) {
    try {
      out.push_back(transform_record(view[i], captioner, order));
    } catch (const std::exception& e) {
      if (policy == ErrorPolicy::fail_fast) throw StageError(view[i].id(), e.what());
      std::cerr << "warning: skipping record '" << view[i].id() << "': " << e.what() << "\n";
    }
  }
  return out;
}

std::vector<Demonstration> exemplar_pool(const DatasetView& train_view, const ModalitySet& test_modalities,
                                         Captioner& captioner, std::size_t pool_size, std::uint64_t seed,
                                         const ModalityOrder& order) {
  const DatasetView source_view = train_view.with_modalities(test_modalities);
  std::vector<Demonstration> pool;
  for (const std::size_t i : seeded_order(train_view.size(), seed)) {
    if (pool.size() == pool_size) break;
    std::string input;
    try {
      input = transform_record(source_view[i], captioner, order).merged_text();
    } catch (const ContractError&) {
      continue;
    }
    pool.push_back({std::move(input), transform_record(train_view[i], captioner, order).merged_text(), LlmStage::translate});
  }
  return pool;
}

PipelineOutput run_pipeline(const PipelineInputs& in, const PipelineConfig& config) {
  config.validate();
  if (in.train_view.empty()) throw ContractError("pipeline: empty training view");
  StageContext ctx{in.gateway, config.llm, config.templates, config.policy, config.workers};
  PipelineOutput out;

  const StagedCorpus train_transformed = transform_view(in.train_view, in.captioner, in.order, config.policy);
  out.train.stages.emplace_back("transformed", train_transformed);

  std::optional<Demonstration> demo;
  if (config.summarization) {
    const auto first = seeded_order(in.train_view.size(), config.seed).front();
    const auto id = in.train_view[first].id();
    const auto it = std::find_if(train_transformed.begin(), train_transformed.end(),
                                 [&](const StagedText& s) { return s.record_id == id; });
    demo = build_summary_demonstration(
        it != train_transformed.end() ? *it : transform_record(in.train_view[first], in.captioner, in.order), ctx);
  }

  // Summarization and augmentation read the same input and are merged.
  const auto align_side = [&](StagedSide& side, const StagedCorpus& input,
                              const std::function<StagedCorpus(const StagedCorpus&)>& after_summary) {
    StagedCorpus current = input;
    if (config.summarization) {
      current = after_summary(summarize_stage(input, *demo, ctx));
      side.stages.emplace_back("summarized", current);
    }
    if (config.augmentation) {
      AugmentOptions options{true, config.strip_terms};
      StagedCorpus augmented = augment_stage(input, in.task_description, options, ctx);
      current = config.summarization ? merge_parallel(current, augmented) : std::move(augmented);
      side.stages.emplace_back("augmented", current);
    }
    side.stages.emplace_back("final", finalize(current, in.order));
  };
  const auto identity = [](const StagedCorpus& c) { return c; };

  align_side(out.train, train_transformed, identity);

  const StagedCorpus test_transformed = transform_view(in.test_view, in.captioner, in.order, config.policy);
  out.test.stages.emplace_back("transformed", test_transformed);
  out.translated = config.translation && !is_subset(in.test_view.modalities(), in.train_view.modalities());
  if (!out.translated) {
    align_side(out.test, test_transformed, identity);
    return out;
  }

  const auto pool = exemplar_pool(in.train_view, in.test_view.modalities(), in.captioner, config.exemplar_pool_size,
                                  config.seed, in.order);
  TranslateOptions topt;
  topt.target = {in.test_view.modalities(), in.train_view.modalities()};
  topt.seed = config.seed;
  topt.side = CorpusSide::inference;
  const auto translate = [&](const StagedCorpus& c) { return translate_stage(c, pool, topt, ctx); };

  if (config.summarize_before_translate && config.summarization) {
    align_side(out.test, test_transformed, [&](const StagedCorpus& summarized) {
      StagedCorpus t = translate(summarized);
      out.test.stages.emplace_back("translated", t);
      return t;
    });
  } else {
    const StagedCorpus translated = translate(test_transformed);
    out.test.stages.emplace_back("translated", translated);
    align_side(out.test, translated, identity);
  }
  return out;
}

}  // namespace modalign
