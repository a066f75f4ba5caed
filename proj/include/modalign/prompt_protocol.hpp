#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace modalign {

/// The three LLM-backed pipeline stages.
enum class LlmStage { translate, summarize, augment };

std::string_view stage_name(LlmStage stage);
std::optional<LlmStage> parse_stage_name(std::string_view name);

/// Marker line that opens every stage user turn, e.g. "[[TRANSLATE]]".
/// The rule-based mock dispatches on it.
std::string stage_marker(LlmStage stage);

/// Caption requests carry this marker; the mock LLM rejects it.
inline constexpr std::string_view kCaptionMarker = "[[CAPTION]]";

/// Record text inside a stage turn is wrapped in these tags so the mock can
/// locate it regardless of the surrounding instruction wording.
inline constexpr std::string_view kInputOpen = "<input>";
inline constexpr std::string_view kInputClose = "</input>";
inline constexpr std::string_view kTaskOpen = "<task>";
inline constexpr std::string_view kTaskClose = "</task>";

/// Text between the first `open` and the following `close`, if both exist.
std::optional<std::string> extract_tagged(std::string_view text, std::string_view open, std::string_view close);

}  // namespace modalign
