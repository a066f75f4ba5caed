// Writes the style-gap fixture and a mock-backed config next to it.
#include <cstdio>
#include <filesystem>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "modalign/synthetic.hpp"
#include "modalign/util/strings.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write the style-gap fixture"};
  std::string dir = "fixture";
  modalign::synthetic::StyleGapOptions options;
  app.add_option("dir", dir, "Output directory");
  app.add_option("--records", options.records);
  app.add_option("--seed", options.seed);
  CLI11_PARSE(app, argc, argv);

  try {
    const auto files = modalign::synthetic::write_style_gap_fixture(dir, options);
    const nlohmann::ordered_json config{
        {"dataset",
         {{"manifest", "manifest.csv"},
          {"schema", "schema.json"},
          {"task", {{"kind", "classification"}, {"num_classes", 3}}},
          {"metric", "accuracy"},
          {"name", "style-gap"},
          {"task_description_file", "task.txt"}}},
        {"backends", {{"mock", {{"kind", "mock"}, {"knowledge", "knowledge.json"}}}}},
        {"pipeline", {{"preset", "full"}, {"llm_backend", "mock"}}},
        {"training",
         {{"epochs", 30},
          {"batch_size", 32},
          {"learning_rate", 0.003},
          {"model", {{"d_model", 32}, {"layers", 1}, {"heads", 2}, {"ff_width", 64}, {"head_hidden", 32}}},
          {"tokenizer", {{"mode", "learned"}}}}},
        {"scenarios", {{"universe", {"text", "image", "tabular"}}, {"mode", "strict_mismatch"}, {"pairs", "all"}}},
        {"output_dir", "out"}};
    modalign::util::write_file((std::filesystem::path(dir) / "config.json").string(), config.dump(2) + "\n");
    fmt::print("wrote {} records to {}\n", options.records, files.manifest.parent_path().string());
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
