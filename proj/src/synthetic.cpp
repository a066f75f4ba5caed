#include "modalign/synthetic.hpp"

#include <array>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "modalign/util/rng.hpp"
#include "modalign/util/strings.hpp"

namespace modalign::synthetic {
namespace {

struct Trait {
  std::string value;
  std::vector<std::string> phrases;
};

const std::array<Trait, 3> kColors{{
    {"Red", {"crimson fur", "scarlet coat", "ruby fur", "cherry coat"}},
    {"Green", {"emerald fur", "jade coat", "olive fur", "mossy coat"}},
    {"Blue", {"azure fur", "cobalt coat", "sapphire fur", "navy coat"}},
}};

const std::array<Trait, 2> kGenders{{
    {"Male", {"boyish face", "broad muzzle"}},
    {"Female", {"girlish face", "narrow muzzle"}},
}};

const std::array<Trait, 3> kSizes{{
    {"Small", {"tiny frame", "petite build"}},
    {"Medium", {"average frame", "moderate build"}},
    {"Large", {"huge frame", "bulky build"}},
}};

const std::array<std::string_view, 12> kDescriptions{
    "Loves long walks and naps in the sun.",
    "Enjoys belly rubs and quiet evenings.",
    "Gets along with children and other pets.",
    "Was found near the market last spring.",
    "Likes to chase toys around the yard.",
    "Sleeps most of the afternoon on the sofa.",
    "Vaccinated and dewormed by the shelter.",
    "Very curious and always exploring corners.",
    "Shy at first but warms up quickly.",
    "Responds well to simple commands.",
    "Needs a home with a big garden.",
    "Friendly with visitors and neighbours.",
};

const std::array<std::string_view, 24> kFiller{
    "river", "stone", "cloud", "paper", "window", "garden", "silver", "lamp",  "forest", "bridge", "candle", "mirror",
    "violin", "harbor", "meadow", "copper", "ladder", "pepper", "saddle", "tunnel", "marble", "orchid", "anchor", "velvet"};

const std::array<std::string_view, 6> kClassTokens{"alpha", "beta", "gamma", "delta", "epsilon", "zeta"};

// A valid 1×1 greyscale PNG; the content is never decoded.
constexpr unsigned char kPlaceholderPng[] = {
    0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A, 0x00, 0x00, 0x00, 0x0D, 0x49, 0x48, 0x44, 0x52, 0x00, 0x00,
    0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x00, 0x00, 0x00, 0x00, 0x3A, 0x7E, 0x9B, 0x55, 0x00, 0x00, 0x00,
    0x0A, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9C, 0x63, 0x60, 0x00, 0x00, 0x00, 0x02, 0x00, 0x01, 0xE5, 0x27, 0xDE,
    0xFC, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4E, 0x44, 0xAE, 0x42, 0x60, 0x82};

std::string csv_cell(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

StyleGapFiles write_style_gap_fixture(const std::filesystem::path& directory, const StyleGapOptions& options) {
  namespace fs = std::filesystem;
  fs::create_directories(directory / "images");
  util::Rng rng(options.seed);

  std::string manifest = "id,Color,Gender,Size,Age,Description,Photo,AdoptionSpeed\n";
  const std::string png(reinterpret_cast<const char*>(kPlaceholderPng), sizeof kPlaceholderPng);
  for (std::size_t i = 0; i < options.records; ++i) {
    const std::size_t color = rng.index(kColors.size());
    const std::size_t gender = rng.index(kGenders.size());
    const std::size_t size = rng.index(kSizes.size());
    const std::size_t age = 1 + rng.index(60);
    const auto& color_phrase = kColors[color].phrases[rng.index(kColors[color].phrases.size())];
    const auto& gender_phrase = kGenders[gender].phrases[rng.index(kGenders[gender].phrases.size())];
    const auto& size_phrase = kSizes[size].phrases[rng.index(kSizes[size].phrases.size())];
    const std::string description = std::string(kDescriptions[rng.index(kDescriptions.size())]) + " " +
                                    std::string(kDescriptions[rng.index(kDescriptions.size())]);
    const std::string id = fmt::format("pet-{:04}", i + 1);
    const std::string image = "images/" + id + ".png";
    util::write_file((directory / image).string(), png);
    util::write_file((directory / (image + ".txt")).string(), color_phrase + "\n" + gender_phrase + "\n" + size_phrase + "\n");
    manifest += fmt::format("{},{},{},{},{},{},{},{}\n", id, kColors[color].value, kGenders[gender].value,
                            kSizes[size].value, age, csv_cell(description), image, color);
  }

  StyleGapFiles files{directory / "manifest.csv", directory / "schema.json", directory / "knowledge.json",
                      std::string(kStyleGapTask)};
  util::write_file(files.manifest.string(), manifest);

  const nlohmann::ordered_json schema{
      {"columns",
       {{{"name", "id"}},
        {{"name", "Color"}},
        {{"name", "Gender"}},
        {{"name", "Size"}},
        {{"name", "Age"}, {"kind", "numeric"}, {"unit", "months"}},
        {{"name", "Description"}},
        {{"name", "Photo"}},
        {{"name", "AdoptionSpeed"}}}},
      {"label_column", "AdoptionSpeed"},
      {"id_column", "id"},
      {"modalities", {{"tabular", {"Color", "Gender", "Size", "Age"}}, {"text", "Description"}, {"image", "Photo"}}}};
  util::write_file(files.schema.string(), schema.dump(2) + "\n");

  nlohmann::ordered_json knowledge = nlohmann::ordered_json::array();
  const auto add = [&](const auto& traits, std::string_view key) {
    for (const auto& t : traits)
      for (const auto& p : t.phrases) knowledge.push_back({{"phrase", p}, {"key", key}, {"value", t.value}});
  };
  add(kColors, "Color");
  add(kGenders, "Gender");
  add(kSizes, "Size");
  util::write_file(files.knowledge.string(), knowledge.dump(2) + "\n");
  util::write_file((directory / "task.txt").string(), files.task_description + "\n");
  return files;
}

Dataset load_style_gap(const StyleGapFiles& files) {
  IngestOptions options;
  options.task = Task::classification(3);
  options.name = "style-gap";
  Dataset d = load_dataset(files.manifest, load_schema(files.schema), options);
  d.validate();
  return d;
}

std::vector<nn::LabeledText> label_token_corpus(std::size_t count, std::uint64_t seed, std::size_t num_classes) {
  if (num_classes < 2 || num_classes > kClassTokens.size()) throw ContractError("label_token_corpus: unsupported class count");
  util::Rng rng(seed);
  std::vector<nn::LabeledText> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t label = rng.index(num_classes);
    const std::size_t length = 8 + rng.index(9);
    std::vector<std::string> words;
    for (std::size_t w = 0; w < length; ++w) words.emplace_back(kFiller[rng.index(kFiller.size())]);
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.index(length + 1)), std::string(kClassTokens[label]));
    out.push_back({fmt::format("doc-{:04}", i + 1), util::join(words, " "), Label{label}});
  }
  return out;
}

}  // namespace modalign::synthetic
