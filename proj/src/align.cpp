#include "modalign/align.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <functional>
#include <iostream>
#include <optional>
#include <thread>

#include "modalign/util/rng.hpp"
#include "modalign/util/strings.hpp"

namespace modalign {
namespace {

constexpr std::string_view kTranslateSystem =
    "You rewrite descriptions of a data sample from the style produced for {{source_modalities}} data into the "
    "style used for {{target_modalities}} data. Follow the format of the example outputs exactly. Every fact in the "
    "original description must survive the rewrite: do not drop, add or alter information.";
constexpr std::string_view kTranslateUser =
    "{{marker}}\nRewrite the description below in the {{target_modalities}} style.\n<input>\n{{input}}\n</input>";

constexpr std::string_view kSummarizeSystem =
    "You merge the descriptions of one data sample, which come from different sources, into a single concise "
    "paragraph of plain declarative sentences. State shared facts once, keep every distinct fact, and make the "
    "relations between the pieces of information explicit.";
constexpr std::string_view kSummarizeUser =
    "{{marker}}\nSummarize the descriptions below into one paragraph.\n<input>\n{{input}}\n</input>";

constexpr std::string_view kAugmentSystem =
    "You are an assistant for this prediction task: {{task}}\nDraw on your background knowledge about the domain. "
    "Analyse the sample you are given, state your prediction, and explain the reasoning behind it.";
constexpr std::string_view kAugmentUser =
    "{{marker}}\n<task>\n{{task}}\n</task>\nAnalyse the sample below, give your prediction and explain "
    "it.\n<input>\n{{input}}\n</input>";

std::string_view stage_file_stem(LlmStage stage) {
  switch (stage) {
    case LlmStage::translate: return "translate";
    case LlmStage::summarize: return "summarize";
    case LlmStage::augment: return "augment";
  }
  return "translate";
}

ChatRequest base_request(const StageSettings& settings) {
  ChatRequest request;
  request.backend_id = settings.backend_id;
  request.model = settings.model;
  request.temperature = settings.sampling.temperature;
  request.max_tokens = settings.sampling.max_tokens;
  return request;
}

std::string describe(const ModalitySet& set) {
  std::vector<std::string> tags;
  for (const auto& m : set) tags.push_back(m.tag());
  return tags.empty() ? std::string("unspecified") : util::join(tags, " and ");
}

/// Applies `fn` to every record, `ctx.workers` at a time, keeping corpus order.
StagedCorpus for_each_record(const StagedCorpus& corpus, StageContext& ctx,
                             const std::function<StagedText(const StagedText&)>& fn) {
  const std::size_t n = corpus.size();
  std::vector<std::optional<StagedText>> results(n);
  std::vector<std::string> errors(n);
  std::vector<bool> failed(n, false);
  std::atomic<std::size_t> next{0};
  const auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        results[i] = fn(corpus[i]);
      } catch (const std::exception& e) {
        failed[i] = true;
        errors[i] = e.what();
      }
    }
  };
  const std::size_t workers = std::min<std::size_t>(std::max<std::size_t>(ctx.workers, 1), std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work);
  }
  StagedCorpus out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (failed[i]) {
      if (ctx.policy == ErrorPolicy::fail_fast) throw StageError(corpus[i].record_id, errors[i]);
      std::cerr << "warning: skipping record '" << corpus[i].record_id << "': " << errors[i] << "\n";
      continue;
    }
    out.push_back(std::move(*results[i]));
  }
  return out;
}

void require_stage(const StagedText& s, std::initializer_list<TextStage> allowed, std::string_view op) {
  if (std::find(allowed.begin(), allowed.end(), s.stage) == allowed.end()) {
    throw ContractError(std::string(op) + ": record '" + s.record_id + "' is at stage '" +
                        std::string(text_stage_name(s.stage)) + "'");
  }
}

std::vector<std::string> sentences_of(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (std::size_t i = 0; i < text.size(); ++i) {
    current.push_back(text[i]);
    const bool end = (text[i] == '.' || text[i] == '!' || text[i] == '?') &&
                     (i + 1 == text.size() || text[i + 1] == ' ' || text[i + 1] == '\n');
    if (end || text[i] == '\n') {
      if (!util::trim(current).empty()) out.emplace_back(util::trim(current));
      current.clear();
    }
  }
  if (!util::trim(current).empty()) out.emplace_back(util::trim(current));
  return out;
}

bool mentions_term(std::string_view sentence, const std::vector<std::string>& terms) {
  const auto lower = util::to_lower_ascii(sentence);
  for (const auto& term : terms) {
    const auto t = util::to_lower_ascii(term);
    for (auto pos = lower.find(t); pos != std::string::npos; pos = lower.find(t, pos + 1)) {
      const bool left = pos == 0 || !std::isalnum(static_cast<unsigned char>(lower[pos - 1]));
      const auto end = pos + t.size();
      const bool right = end >= lower.size() || !std::isalnum(static_cast<unsigned char>(lower[end]));
      if (left && right) return true;
    }
  }
  return false;
}

}  // namespace

std::string render_placeholders(std::string_view text, const std::map<std::string, std::string>& bindings) {
  std::string out;
  out.reserve(text.size());
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto open = text.find("{{", pos);
    if (open == std::string_view::npos) {
      out.append(text.substr(pos));
      break;
    }
    const auto close = text.find("}}", open + 2);
    if (close == std::string_view::npos) throw ContractError("template: unterminated placeholder");
    out.append(text.substr(pos, open - pos));
    const std::string name(util::trim(text.substr(open + 2, close - open - 2)));
    const auto it = bindings.find(name);
    if (it == bindings.end()) throw ContractError("template: unbound placeholder {{" + name + "}}");
    out.append(it->second);
    pos = close + 2;
  }
  return out;
}

std::string PromptTemplate::render_system(std::map<std::string, std::string> bindings) const {
  bindings.emplace("marker", stage_marker(stage));
  return render_placeholders(system, bindings);
}

std::string PromptTemplate::render_instruction(std::map<std::string, std::string> bindings) const {
  bindings.emplace("marker", stage_marker(stage));
  return render_placeholders(instruction, bindings);
}

TemplateSet TemplateSet::defaults() {
  return TemplateSet{
      PromptTemplate{LlmStage::translate, std::string(kTranslateSystem), std::string(kTranslateUser)},
      PromptTemplate{LlmStage::summarize, std::string(kSummarizeSystem), std::string(kSummarizeUser)},
      PromptTemplate{LlmStage::augment, std::string(kAugmentSystem), std::string(kAugmentUser)},
  };
}

TemplateSet TemplateSet::load(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError("templates directory not found: " + dir.string());
  TemplateSet set = defaults();
  for (auto* t : {&set.translate, &set.summarize, &set.augment}) {
    const auto stem = std::string(stage_file_stem(t->stage));
    if (const auto p = dir / (stem + ".system.txt"); std::filesystem::exists(p)) t->system = util::read_file(p.string());
    if (const auto p = dir / (stem + ".user.txt"); std::filesystem::exists(p)) t->instruction = util::read_file(p.string());
  }
  return set;
}

void TemplateSet::save(const std::filesystem::path& dir) const {
  for (const auto* t : {&translate, &summarize, &augment}) {
    const auto stem = std::string(stage_file_stem(t->stage));
    util::write_file((dir / (stem + ".system.txt")).string(), t->system);
    util::write_file((dir / (stem + ".user.txt")).string(), t->instruction);
  }
}

const PromptTemplate& TemplateSet::get(LlmStage stage) const {
  switch (stage) {
    case LlmStage::translate: return translate;
    case LlmStage::summarize: return summarize;
    case LlmStage::augment: return augment;
  }
  return translate;
}

ChatRequest build_translation_prompt(const StagedText& source, std::span<const Demonstration> exemplars,
                                     const TranslationTarget& target, const StageSettings& settings,
                                     const TemplateSet& templates) {
  if (exemplars.size() != kTranslationShots) {
    throw ContractError("expected " + std::to_string(kTranslationShots) + " exemplars, got " +
                        std::to_string(exemplars.size()));
  }
  for (const auto& ex : exemplars) {
    if (ex.input.empty() || ex.output.empty()) throw ContractError("translation exemplar with empty text");
  }
  const auto& tpl = templates.translate;
  const std::map<std::string, std::string> names{{"source_modalities", describe(target.source_modalities)},
                                                 {"target_modalities", describe(target.target_modalities)}};
  ChatRequest request = base_request(settings);
  request.messages.push_back({ChatRole::system, tpl.render_system(names), std::nullopt});
  for (const auto& ex : exemplars) {
    auto bindings = names;
    bindings["input"] = ex.input;
    request.messages.push_back({ChatRole::user, tpl.render_instruction(bindings), std::nullopt});
    request.messages.push_back({ChatRole::assistant, ex.output, std::nullopt});
  }
  auto bindings = names;
  bindings["input"] = source.merged_text();
  request.messages.push_back({ChatRole::user, tpl.render_instruction(bindings), std::nullopt});
  return request;
}

std::vector<std::size_t> select_exemplars(std::size_t pool_size, std::uint64_t seed, std::string_view record_id) {
  if (pool_size < kTranslationShots) {
    throw ContractError("translation needs at least " + std::to_string(kTranslationShots) +
                        " exemplars in the pool, got " + std::to_string(pool_size));
  }
  util::Rng rng(util::mix_seed(seed, util::fnv1a64(record_id)));
  std::vector<std::size_t> order(pool_size);
  for (std::size_t i = 0; i < pool_size; ++i) order[i] = i;
  for (std::size_t i = 0; i < kTranslationShots; ++i) {
    std::swap(order[i], order[i + rng.index(pool_size - i)]);
  }
  order.resize(kTranslationShots);
  return order;
}

StagedCorpus translate_stage(const StagedCorpus& corpus, std::span<const Demonstration> exemplar_pool,
                             const TranslateOptions& options, StageContext& ctx) {
  if (options.inference_only_guard && options.side == CorpusSide::training) {
    throw ContractError("translation applies only to inference-side corpora");
  }
  if (exemplar_pool.size() < kTranslationShots) {
    throw ContractError("translation needs at least " + std::to_string(kTranslationShots) +
                        " exemplars in the pool, got " + std::to_string(exemplar_pool.size()));
  }
  for (const auto& s : corpus) require_stage(s, {TextStage::transformed, TextStage::summarized}, "translate_stage");
  return for_each_record(corpus, ctx, [&](const StagedText& s) {
    std::vector<Demonstration> picked;
    for (const auto i : select_exemplars(exemplar_pool.size(), options.seed, s.record_id)) {
      picked.push_back(exemplar_pool[i]);
    }
    const auto request = build_translation_prompt(s, picked, options.target, ctx.settings, ctx.templates);
    const auto completion = ctx.gateway.complete(request);
    StagedText out = s;
    out.per_modality = {{kTranslatedSlot, completion.text}};
    out.stage = TextStage::translated;
    out.provenance.push_back({TextStage::translated, completion.provenance.backend_id, completion.provenance.model,
                              completion.provenance.request_digest});
    return out;
  });
}

ChatRequest build_summary_request(const std::string& input, const Demonstration* demonstration,
                                  const StageSettings& settings, const TemplateSet& templates) {
  const auto& tpl = templates.summarize;
  ChatRequest request = base_request(settings);
  request.messages.push_back({ChatRole::system, tpl.render_system({}), std::nullopt});
  if (demonstration) {
    request.messages.push_back({ChatRole::user, tpl.render_instruction({{"input", demonstration->input}}), std::nullopt});
    request.messages.push_back({ChatRole::assistant, demonstration->output, std::nullopt});
  }
  request.messages.push_back({ChatRole::user, tpl.render_instruction({{"input", input}}), std::nullopt});
  return request;
}

Demonstration build_summary_demonstration(const StagedText& sample, StageContext& ctx) {
  require_stage(sample, {TextStage::transformed, TextStage::translated}, "build_summary_demonstration");
  const auto input = sample.merged_text();
  const auto completion = ctx.gateway.complete(build_summary_request(input, nullptr, ctx.settings, ctx.templates));
  if (completion.text.empty()) throw ContractError("summary demonstration: empty completion");
  return Demonstration{input, completion.text, LlmStage::summarize};
}

StagedCorpus summarize_stage(const StagedCorpus& corpus, const Demonstration& demonstration, StageContext& ctx) {
  for (const auto& s : corpus) require_stage(s, {TextStage::transformed, TextStage::translated}, "summarize_stage");
  return for_each_record(corpus, ctx, [&](const StagedText& s) {
    const auto completion =
        ctx.gateway.complete(build_summary_request(s.merged_text(), &demonstration, ctx.settings, ctx.templates));
    StagedText out = s;
    out.per_modality = {{kSummarySlot, completion.text}};
    out.stage = TextStage::summarized;
    out.provenance.push_back({TextStage::summarized, completion.provenance.backend_id, completion.provenance.model,
                              completion.provenance.request_digest});
    return out;
  });
}

ChatRequest build_augment_request(const std::string& input, const std::string& task_description,
                                  const StageSettings& settings, const TemplateSet& templates) {
  const auto& tpl = templates.augment;
  const std::map<std::string, std::string> bindings{{"task", task_description}, {"input", input}};
  ChatRequest request = base_request(settings);
  request.messages.push_back({ChatRole::system, tpl.render_system(bindings), std::nullopt});
  request.messages.push_back({ChatRole::user, tpl.render_instruction(bindings), std::nullopt});
  return request;
}

StagedCorpus augment_stage(const StagedCorpus& corpus, const std::string& task_description,
                           const AugmentOptions& options, StageContext& ctx) {
  if (!options.enabled) return corpus;
  if (util::trim(task_description).empty()) throw ContractError("augment_stage: task description is empty");
  for (const auto& s : corpus) {
    require_stage(s, {TextStage::transformed, TextStage::translated, TextStage::summarized}, "augment_stage");
  }
  return for_each_record(corpus, ctx, [&](const StagedText& s) {
    const auto merged = s.merged_text();
    const auto completion =
        ctx.gateway.complete(build_augment_request(merged, task_description, ctx.settings, ctx.templates));
    std::string appendix = completion.text;
    if (!options.strip_terms.empty()) {
      std::vector<std::string> kept;
      for (auto& sentence : sentences_of(appendix)) {
        if (!mentions_term(sentence, options.strip_terms)) kept.push_back(std::move(sentence));
      }
      appendix = util::join(kept, " ");
    }
    StagedText out = s;
    out.per_modality = {{kAugmentedSlot, appendix.empty() ? merged : merged + "\n" + appendix}};
    out.appendix = appendix;
    out.stage = TextStage::augmented;
    out.provenance.push_back({TextStage::augmented, completion.provenance.backend_id, completion.provenance.model,
                              completion.provenance.request_digest});
    return out;
  });
}

StagedCorpus merge_parallel(const StagedCorpus& summarized, const StagedCorpus& augmented) {
  std::map<std::string, const StagedText*> by_id;
  for (const auto& a : augmented) by_id.emplace(a.record_id, &a);
  StagedCorpus out;
  out.reserve(summarized.size());
  for (const auto& s : summarized) {
    const auto it = by_id.find(s.record_id);
    if (it == by_id.end()) continue;
    const StagedText& a = *it->second;
    if (a.stage != TextStage::augmented || !a.appendix) {
      throw ContractError("merge_parallel: record '" + s.record_id + "' was not augmented");
    }
    StagedText m = s;
    const auto summary = s.merged_text();
    m.per_modality = {{kSummarySlot, a.appendix->empty() ? summary : summary + "\n" + *a.appendix}};
    m.appendix = a.appendix;
    m.stage = TextStage::augmented;
    if (!a.provenance.empty()) m.provenance.push_back(a.provenance.back());
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace modalign
