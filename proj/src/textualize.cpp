#include "modalign/textualize.hpp"

#include <algorithm>

#include "modalign/prompt_protocol.hpp"
#include "modalign/util/sha256.hpp"
#include "modalign/util/strings.hpp"

namespace modalign {

std::string_view text_stage_name(TextStage stage) {
  switch (stage) {
    case TextStage::transformed: return "transformed";
    case TextStage::translated: return "translated";
    case TextStage::summarized: return "summarized";
    case TextStage::augmented: return "augmented";
    case TextStage::final: return "final";
  }
  return "transformed";
}

std::optional<TextStage> parse_text_stage(std::string_view name) {
  for (const auto s : {TextStage::transformed, TextStage::translated, TextStage::summarized, TextStage::augmented,
                       TextStage::final}) {
    if (text_stage_name(s) == name) return s;
  }
  return std::nullopt;
}

const std::string* StagedText::find(const ModalityKind& kind) const {
  for (const auto& slot : per_modality) {
    if (slot.modality == kind) return &slot.text;
  }
  return nullptr;
}

std::string StagedText::merged_text() const {
  std::vector<std::string> parts;
  parts.reserve(per_modality.size());
  for (const auto& slot : per_modality) parts.push_back(slot.text);
  return util::join(parts, "\n");
}

std::string serialize_tabular(const TabularPayload& payload) {
  if (payload.cells.empty()) throw ContractError("empty tabular payload");
  std::vector<std::string> clauses;
  for (const auto& cell : payload.cells) {
    if (cell.kind == ValueKind::missing) continue;
    std::string value = cell.kind == ValueKind::numeric && cell.number ? util::format_number(*cell.number)
                                                                       : std::string(util::trim(cell.raw));
    if (cell.unit && !cell.unit->empty()) value += " " + *cell.unit;
    clauses.push_back("The " + cell.column + " is " + value + ".");
  }
  if (clauses.empty()) throw ContractError("empty tabular payload");
  return util::join(clauses, " ");
}

std::vector<std::pair<std::string, std::string>> parse_tabular_clauses(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  text = util::trim(text);
  if (text.empty()) return out;
  std::vector<std::string_view> clauses;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(". The ", start);
    if (pos == std::string_view::npos) {
      clauses.push_back(text.substr(start));
      break;
    }
    clauses.push_back(text.substr(start, pos + 1 - start));
    start = pos + 2;
  }
  for (auto c : clauses) {
    if (!c.starts_with("The ") || !c.ends_with(".")) {
      throw ContractError("not a tabular clause: '" + std::string(c) + "'");
    }
    c.remove_prefix(4);
    c.remove_suffix(1);
    const auto is = c.find(" is ");
    if (is == std::string_view::npos) throw ContractError("tabular clause lacks ' is ': '" + std::string(c) + "'");
    out.emplace_back(std::string(c.substr(0, is)), std::string(c.substr(is + 4)));
  }
  return out;
}

std::filesystem::path SidecarCaptioner::sidecar_path(const ImagePayload& image) {
  auto p = image.resolved.empty() ? std::filesystem::path(image.reference) : image.resolved;
  p += ".txt";
  return p;
}

CaptionResult SidecarCaptioner::caption(const ImagePayload& image) {
  const auto path = sidecar_path(image);
  std::string content;
  try {
    content = util::read_file(path.string());
  } catch (const std::exception&) {
    throw CaptionError("no sidecar annotation for image '" + image.reference + "' (expected " + path.string() + ")");
  }
  std::string text;
  const auto trimmed = util::trim(content);
  if (trimmed.starts_with("caption:")) {
    text = std::string(util::trim(trimmed.substr(8)));
  } else {
    std::vector<std::string> phrases;
    for (const auto& line : util::split(content, '\n')) {
      const auto t = util::trim(line);
      if (!t.empty()) phrases.emplace_back(t);
    }
    if (phrases.empty()) throw CaptionError("empty sidecar annotation: " + path.string());
    std::string list;
    for (std::size_t i = 0; i < phrases.size(); ++i) {
      if (i) list += i + 1 == phrases.size() ? " and " : ", ";
      list += phrases[i];
    }
    text = "The image shows " + list + ".";
  }
  return {text, ProvenanceEntry{TextStage::transformed, "sidecar", "", util::sha256_hex(content)}};
}

GatewayCaptioner::GatewayCaptioner(Gateway& gateway, std::string backend_id, std::string model,
                                   SamplingDefaults sampling)
    : gateway_(gateway), backend_id_(std::move(backend_id)), model_(std::move(model)), sampling_(sampling) {}

ChatRequest GatewayCaptioner::build_request(const ImagePayload& image) const {
  ChatRequest request;
  request.backend_id = backend_id_;
  request.model = model_;
  request.temperature = sampling_.temperature;
  request.max_tokens = sampling_.max_tokens;
  request.messages.push_back(
      {ChatRole::system,
       "You write factual, detailed descriptions of images for a text-only prediction model. Describe every visible "
       "object, attribute and relation; do not speculate beyond what is shown.",
       std::nullopt});
  request.messages.push_back({ChatRole::user, std::string(kCaptionMarker) + "\nDescribe this image in detail.",
                              image.reference});
  return request;
}

CaptionResult GatewayCaptioner::caption(const ImagePayload& image) {
  const auto completion = gateway_.complete(build_request(image));
  return {completion.text, ProvenanceEntry{TextStage::transformed, completion.provenance.backend_id,
                                           completion.provenance.model, completion.provenance.request_digest}};
}

namespace {

void sort_slots(std::vector<TextSlot>& slots, const ModalityOrder& order) {
  std::stable_sort(slots.begin(), slots.end(), [&](const TextSlot& a, const TextSlot& b) {
    const auto ra = order.rank(a.modality);
    const auto rb = order.rank(b.modality);
    if (ra != rb) return ra < rb;
    return a.modality < b.modality;
  });
}

}  // namespace

StagedText transform_record(const RecordView& view, Captioner& captioner, const ModalityOrder& order) {
  StagedText staged;
  staged.record_id = view.id();
  staged.stage = TextStage::transformed;
  staged.label = view.label();
  for (const auto& modality : view.modalities()) {
    const Payload& payload = view.payload(modality);
    std::string text;
    if (const auto* t = std::get_if<TextPayload>(&payload)) {
      text = t->text;
    } else if (const auto* tab = std::get_if<TabularPayload>(&payload)) {
      text = serialize_tabular(*tab);
    } else {
      auto result = captioner.caption(std::get<ImagePayload>(payload));
      text = std::move(result.text);
      if (result.provenance) staged.provenance.push_back(std::move(*result.provenance));
    }
    staged.per_modality.push_back({modality, std::move(text)});
  }
  sort_slots(staged.per_modality, order);
  return staged;
}

StagedText concat_in_order(const StagedText& staged, const ModalityOrder& order) {
  if (staged.stage == TextStage::final) return staged;
  StagedText out = staged;
  sort_slots(out.per_modality, order);
  out.concat = out.merged_text();
  out.stage = TextStage::final;
  return out;
}

}  // namespace modalign
