#include "modalign/mock_llm.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "modalign/prompt_protocol.hpp"
#include "modalign/util/strings.hpp"

namespace modalign {
namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || (c & 0x80); }

const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> words{
      "a",    "an",   "the",   "is",    "are",  "was",   "were", "be",    "been", "of",   "in",    "on",
      "at",   "to",   "for",   "with",  "and",  "or",    "but",  "by",    "as",   "it",   "its",   "this",
      "that", "these", "those", "there", "has", "have",  "had",  "from",  "into", "than", "then",  "so",
      "very", "also", "which", "who",   "whom", "what",  "some", "any",   "no",   "not",  "i",     "we",
      "you",  "he",   "she",   "they",  "them", "his",   "her",  "their", "our",  "my",   "me",    "been",
      "can",  "will", "would", "should", "may", "might", "do",   "does",  "did",  "such", "shows", "show"};
  return words;
}

/// Case-insensitive whole-word search; returns npos when absent.
std::size_t find_word(std::string_view haystack_lower, std::string_view needle_lower, std::size_t from = 0) {
  if (needle_lower.empty()) return std::string_view::npos;
  for (auto pos = haystack_lower.find(needle_lower, from); pos != std::string_view::npos;
       pos = haystack_lower.find(needle_lower, pos + 1)) {
    const bool left_ok = pos == 0 || !is_word_char(haystack_lower[pos - 1]);
    const auto end = pos + needle_lower.size();
    const bool right_ok = end >= haystack_lower.size() || !is_word_char(haystack_lower[end]);
    if (left_ok && right_ok) return pos;
  }
  return std::string_view::npos;
}

std::string capitalize(std::string_view s) {
  std::string out(s);
  if (!out.empty() && out[0] >= 'a' && out[0] <= 'z') out[0] = static_cast<char>(out[0] - 'a' + 'A');
  return out;
}

std::string strip_terminal_period(std::string_view s) {
  s = util::trim(s);
  while (!s.empty() && (s.back() == '.' || s.back() == '!' || s.back() == '?')) s.remove_suffix(1);
  return std::string(util::trim(s));
}

std::string clause(std::string_view key, std::string_view value) {
  return "The " + std::string(key) + " is " + std::string(value) + ".";
}

std::vector<std::string> split_segments(std::string_view text) {
  std::vector<std::string> pieces;
  std::string current;
  const auto flush = [&] {
    const auto t = util::trim(current);
    if (!t.empty()) pieces.emplace_back(t);
    current.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    const bool at_boundary = i + 1 >= text.size() || std::isspace(static_cast<unsigned char>(text[i + 1]));
    if (c == '\n' || c == ';' || c == ',' || ((c == '.' || c == '!' || c == '?') && at_boundary)) {
      flush();
    } else {
      current.push_back(c);
    }
  }
  flush();
  // Split on the standalone word "and".
  std::vector<std::string> segments;
  for (const auto& piece : pieces) {
    const auto lower = util::to_lower_ascii(piece);
    std::size_t start = 0;
    for (auto pos = find_word(lower, "and"); pos != std::string::npos; pos = find_word(lower, "and", pos + 3)) {
      const auto part = util::trim(std::string_view(piece).substr(start, pos - start));
      if (!part.empty()) segments.emplace_back(part);
      start = pos + 3;
    }
    const auto rest = util::trim(std::string_view(piece).substr(start));
    if (!rest.empty()) segments.emplace_back(rest);
  }
  return segments;
}

/// "The K is V." sentences of an exemplar output.
std::vector<std::pair<std::string, std::string>> parse_clauses(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& sentence : split_segments(text)) {
    std::string_view s = sentence;
    if (util::starts_with_icase(s, "the ")) s.remove_prefix(4);
    const auto lower = util::to_lower_ascii(s);
    const auto pos = lower.find(" is ");
    if (pos == std::string::npos) continue;
    auto key = util::trim(s.substr(0, pos));
    auto value = util::trim(s.substr(pos + 4));
    if (!key.empty() && !value.empty()) out.emplace_back(std::string(key), strip_terminal_period(value));
  }
  return out;
}

std::optional<std::pair<std::string, std::string>> key_value_pattern(std::string_view segment) {
  std::string_view s = util::trim(segment);
  if (const auto colon = s.find(':'); colon != std::string_view::npos) {
    auto key = util::trim(s.substr(0, colon));
    auto value = util::trim(s.substr(colon + 1));
    if (!key.empty() && !value.empty()) return std::make_pair(std::string(key), std::string(value));
  }
  const auto lower = util::to_lower_ascii(s);
  for (const std::string_view verb : {" is ", " are "}) {
    const auto pos = lower.find(verb);
    if (pos == std::string::npos) continue;
    auto key = util::trim(s.substr(0, pos));
    if (util::starts_with_icase(key, "the ")) key.remove_prefix(4);
    auto value = util::trim(s.substr(pos + verb.size()));
    if (!key.empty() && !value.empty()) return std::make_pair(std::string(key), std::string(value));
  }
  return std::nullopt;
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  const auto flush = [&] {
    auto t = util::trim(current);
    if (!t.empty()) {
      std::string s(t);
      if (s.back() != '.' && s.back() != '!' && s.back() != '?') s.push_back('.');
      out.push_back(std::move(s));
    }
    current.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') {
      flush();
      continue;
    }
    current.push_back(c);
    const bool at_boundary = i + 1 >= text.size() || std::isspace(static_cast<unsigned char>(text[i + 1]));
    if ((c == '.' || c == '!' || c == '?') && at_boundary) flush();
  }
  flush();
  return out;
}

std::string join_list(const std::vector<std::string>& items) {
  if (items.size() == 1) return items.front();
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += i + 1 == items.size() ? " and " : ", ";
    out += items[i];
  }
  return out;
}

}  // namespace

MockKnowledge MockKnowledge::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = util::read_file(path.string());
  } catch (const std::exception& e) {
    throw ConfigError(std::string("mock knowledge: ") + e.what());
  }
  try {
    const auto j = nlohmann::json::parse(text);
    std::vector<KnowledgeEntry> entries;
    for (const auto& e : j) {
      entries.push_back({e.at("phrase").get<std::string>(), e.at("key").get<std::string>(),
                         e.at("value").get<std::string>()});
    }
    return MockKnowledge(std::move(entries));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("mock knowledge " + path.string() + ": " + e.what());
  }
}

namespace mock_rules {

std::vector<std::string> content_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  const auto flush = [&] {
    if (!current.empty() && !stopwords().contains(current)) words.push_back(current);
    current.clear();
  };
  for (const char c : text) {
    if (is_word_char(c)) {
      current.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : c);
    } else {
      flush();
    }
  }
  flush();
  return words;
}

std::string translate(std::string_view source, const std::vector<std::string>& exemplar_outputs,
                      const MockKnowledge& knowledge) {
  std::vector<KnowledgeEntry> lexicon = knowledge.entries();
  for (const auto& output : exemplar_outputs) {
    for (auto& [key, value] : parse_clauses(output)) lexicon.push_back({value, key, value});
  }
  // Prefer longer phrases where matches overlap.
  std::stable_sort(lexicon.begin(), lexicon.end(),
                   [](const KnowledgeEntry& a, const KnowledgeEntry& b) { return a.phrase.size() > b.phrase.size(); });

  std::vector<std::string> clauses;
  std::set<std::string> seen;
  const auto emit = [&](std::string c) {
    if (seen.insert(util::to_lower_ascii(c)).second) clauses.push_back(std::move(c));
  };
  for (const auto& segment : split_segments(source)) {
    const auto lower = util::to_lower_ascii(segment);
    struct Match {
      std::size_t begin, end;
      const KnowledgeEntry* entry;
    };
    std::vector<Match> matches;
    for (const auto& entry : lexicon) {
      const auto needle = util::to_lower_ascii(util::trim(entry.phrase));
      for (auto pos = find_word(lower, needle); pos != std::string::npos; pos = find_word(lower, needle, pos + 1)) {
        const Match m{pos, pos + needle.size(), &entry};
        const bool overlaps = std::any_of(matches.begin(), matches.end(),
                                          [&](const Match& o) { return m.begin < o.end && o.begin < m.end; });
        if (!overlaps) matches.push_back(m);
      }
    }
    if (!matches.empty()) {
      std::sort(matches.begin(), matches.end(), [](const Match& a, const Match& b) { return a.begin < b.begin; });
      for (const auto& m : matches) emit(clause(m.entry->key, m.entry->value));
    } else if (const auto kv = key_value_pattern(segment)) {
      emit(clause(capitalize(kv->first), strip_terminal_period(kv->second)));
    } else {
      emit(clause("Detail", strip_terminal_period(segment)));
    }
  }
  if (clauses.empty()) return std::string(util::trim(source));
  return util::join(clauses, " ");
}

std::string summarize(std::string_view text) {
  std::vector<std::string> kept;
  std::set<std::string> covered;
  for (const auto& sentence : split_sentences(text)) {
    const auto words = content_words(sentence);
    const bool adds = std::any_of(words.begin(), words.end(), [&](const std::string& w) { return !covered.contains(w); });
    if (!adds) continue;
    covered.insert(words.begin(), words.end());
    kept.push_back(sentence);
  }
  if (kept.empty()) return std::string(util::trim(text));
  return util::join(kept, " ");
}

std::string augment(std::string_view text, std::string_view task_description) {
  std::set<std::string> task_words;
  for (auto& w : content_words(task_description)) {
    if (w.size() >= 4) task_words.insert(std::move(w));
  }
  std::vector<std::string> keywords;
  for (const auto& w : content_words(text)) {
    if (task_words.contains(w) && std::find(keywords.begin(), keywords.end(), w) == keywords.end()) {
      keywords.push_back(w);
      if (keywords.size() == 5) break;
    }
  }
  if (keywords.empty()) return std::string(kNeutralRationale);
  return "Reasoning: the description mentions " + join_list(keywords) +
         ", which bears directly on the task, so these indicators should weigh on the prediction.";
}

}  // namespace mock_rules

Completion mock_rulebased(const ChatRequest& request, const MockKnowledge& knowledge) {
  request.validate();
  const auto last_user = std::find_if(request.messages.rbegin(), request.messages.rend(),
                                      [](const ChatMessage& m) { return m.role == ChatRole::user; });
  if (last_user == request.messages.rend()) throw UnknownStageMarker("mock llm: request has no user turn");
  const std::string_view content = last_user->content;
  const auto first_line = util::trim(content.substr(0, content.find('\n')));

  std::optional<LlmStage> stage;
  if (first_line.size() > 4 && first_line.starts_with("[[") && first_line.ends_with("]]")) {
    stage = parse_stage_name(first_line.substr(2, first_line.size() - 4));
  }
  if (!stage) throw UnknownStageMarker("mock llm: unknown stage marker '" + std::string(first_line) + "'");

  const auto input_of = [](std::string_view text) {
    if (auto tagged = extract_tagged(text, kInputOpen, kInputClose)) return *tagged;
    const auto nl = text.find('\n');
    return nl == std::string_view::npos ? std::string{} : std::string(util::trim(text.substr(nl + 1)));
  };
  const std::string input = input_of(content);

  std::string text;
  switch (*stage) {
    case LlmStage::translate: {
      std::vector<std::string> exemplar_outputs;
      for (const auto& m : request.messages) {
        if (m.role == ChatRole::assistant) exemplar_outputs.push_back(m.content);
      }
      text = mock_rules::translate(input, exemplar_outputs, knowledge);
      break;
    }
    case LlmStage::summarize:
      text = mock_rules::summarize(input);
      break;
    case LlmStage::augment:
      text = mock_rules::augment(input, extract_tagged(content, kTaskOpen, kTaskClose).value_or(""));
      break;
  }
  return Completion{std::move(text), FinishReason::stop, std::nullopt,
                    Provenance{request.backend_id, request.model, false, cache_key(request)}};
}

ProviderReply MockLlmProvider::invoke(const ChatRequest& request) {
  auto completion = mock_rulebased(request, knowledge_);
  return ProviderReply{std::move(completion.text), completion.finish_reason, std::nullopt};
}

}  // namespace modalign
