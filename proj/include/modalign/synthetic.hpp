#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "modalign/domain.hpp"
#include "modalign/nn/train.hpp"

namespace modalign::synthetic {

/// Three-class pet corpus whose label is carried by the fur colour. The
/// table names the colour directly; the photo annotation only describes it
/// with synonyms ("crimson fur"), so the two styles share no informative
/// token until translated. The free-text column is uninformative.
struct StyleGapOptions {
  std::size_t records = 300;
  std::uint64_t seed = 7;
};

struct StyleGapFiles {
  std::filesystem::path manifest;
  std::filesystem::path schema;
  std::filesystem::path knowledge;
  std::string task_description;
};

inline constexpr std::string_view kStyleGapTask = "Predict the adoption speed class of the pet.";

StyleGapFiles write_style_gap_fixture(const std::filesystem::path& directory, const StyleGapOptions& options = {});

/// Loads a fixture written by write_style_gap_fixture.
Dataset load_style_gap(const StyleGapFiles& files);

/// Filler-word texts with the class token ("alpha", "beta", "gamma", ...)
/// inserted at a random position.
std::vector<nn::LabeledText> label_token_corpus(std::size_t count, std::uint64_t seed, std::size_t num_classes = 3);

}  // namespace modalign::synthetic
