#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "modalign/textualize.hpp"
#include "modalign/util/strings.hpp"

namespace modalign {

using ojson = nlohmann::ordered_json;

std::string corpus_line(const StagedText& staged) {
  ojson j;
  j["id"] = staged.record_id;
  j["stage"] = text_stage_name(staged.stage);
  ojson slots = ojson::array();
  for (const auto& s : staged.per_modality) slots.push_back({{"modality", s.modality.tag()}, {"text", s.text}});
  j["per_modality"] = std::move(slots);
  j["concat"] = staged.concat ? ojson(*staged.concat) : ojson(nullptr);
  if (staged.appendix) j["appendix"] = *staged.appendix;
  if (staged.label) {
    if (is_class_label(*staged.label)) {
      j["label"] = {{"class", std::get<std::size_t>(*staged.label)}};
    } else {
      j["label"] = {{"value", std::get<double>(*staged.label)}};
    }
  }
  ojson prov = ojson::array();
  for (const auto& p : staged.provenance) {
    prov.push_back({{"stage", text_stage_name(p.stage)},
                    {"backend_id", p.backend_id},
                    {"model", p.model},
                    {"request_digest", p.request_digest}});
  }
  j["provenance"] = std::move(prov);
  return j.dump();
}

StagedText parse_corpus_line(std::string_view line) {
  try {
    const auto j = ojson::parse(line);
    StagedText s;
    s.record_id = j.at("id").get<std::string>();
    const auto stage = parse_text_stage(j.at("stage").get<std::string>());
    if (!stage) throw ContractError("stage file: unknown stage '" + j.at("stage").get<std::string>() + "'");
    s.stage = *stage;
    for (const auto& slot : j.at("per_modality")) {
      s.per_modality.push_back({ModalityKind(slot.at("modality").get<std::string>()), slot.at("text").get<std::string>()});
    }
    if (j.contains("concat") && !j.at("concat").is_null()) s.concat = j.at("concat").get<std::string>();
    if (j.contains("appendix")) s.appendix = j.at("appendix").get<std::string>();
    if (j.contains("label")) {
      const auto& l = j.at("label");
      if (l.contains("class")) {
        s.label = l.at("class").get<std::size_t>();
      } else {
        s.label = l.at("value").get<double>();
      }
    }
    for (const auto& p : j.at("provenance")) {
      const auto ps = parse_text_stage(p.at("stage").get<std::string>());
      if (!ps) throw ContractError("stage file: unknown provenance stage");
      s.provenance.push_back({*ps, p.at("backend_id").get<std::string>(), p.at("model").get<std::string>(),
                              p.at("request_digest").get<std::string>()});
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("stage file: malformed line: ") + e.what());
  }
}

void write_corpus(const std::filesystem::path& path, const StagedCorpus& corpus) {
  std::string out;
  for (const auto& s : corpus) {
    out += corpus_line(s);
    out += '\n';
  }
  util::write_file(path.string(), out);
}

StagedCorpus read_corpus(const std::filesystem::path& path) {
  std::string text;
  try {
    text = util::read_file(path.string());
  } catch (const std::exception& e) {
    throw ContractError(e.what());
  }
  StagedCorpus corpus;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (util::trim(line).empty()) continue;
    corpus.push_back(parse_corpus_line(line));
  }
  return corpus;
}

}  // namespace modalign
