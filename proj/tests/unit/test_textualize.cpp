#include <gtest/gtest.h>

#include "modalign/textualize.hpp"
#include "modalign/util/strings.hpp"
#include "support.hpp"

using namespace modalign;
using modalign::testing::TempDir;

namespace {

TabularCell cat(std::string column, std::string value) {
  TabularCell c;
  c.column = std::move(column);
  c.raw = std::move(value);
  return c;
}

TabularCell num(std::string column, double value, std::optional<std::string> unit = std::nullopt) {
  TabularCell c;
  c.column = std::move(column);
  c.kind = ValueKind::numeric;
  c.number = value;
  c.raw = util::format_number(value);
  c.unit = std::move(unit);
  return c;
}

Dataset golden_dataset() {
  const auto dir = modalign::testing::fixture_dir() / "tabular_golden";
  IngestOptions o;
  o.task = Task::classification(2);
  return load_dataset(dir / "manifest.csv", load_schema(dir / "schema.json"), o);
}

}  // namespace

TEST(Serialize, HistologyExample) {
  const TabularPayload p{{cat("Histologic Type", "Adenocarcinoma"), cat("Histologic Grade", "Moderately differentiated")}};
  EXPECT_EQ(serialize_tabular(p),
            "The Histologic Type is Adenocarcinoma. The Histologic Grade is Moderately differentiated.");
}

TEST(Serialize, NumbersUnitsAndMissingCells) {
  TabularCell missing = cat("Stage", "");
  missing.kind = ValueKind::missing;
  const TabularPayload p{{num("Age", 36.0, "months"), missing, num("Score", 0.1), num("Big", 1e21)}};
  EXPECT_EQ(serialize_tabular(p), "The Age is 36 months. The Score is 0.1. The Big is 1e+21.");
  EXPECT_THROW(serialize_tabular(TabularPayload{{missing}}), ContractError);
  EXPECT_THROW(serialize_tabular(TabularPayload{}), ContractError);
}

TEST(Serialize, GoldenRowsMatchOracle) {
  const Dataset d = golden_dataset();
  const auto expected = util::split(util::read_file((modalign::testing::fixture_dir() / "tabular_golden" / "expected.txt").string()), '\n');
  ASSERT_EQ(d.records.size(), 20u);
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    const auto& tab = std::get<TabularPayload>(d.records[i].payloads.at(ModalityKind::tabular()));
    EXPECT_EQ(serialize_tabular(tab), expected[i]) << d.records[i].id;
  }
}

TEST(Serialize, ParseRecoversEveryPair) {
  const Dataset d = golden_dataset();
  for (const auto& r : d.records) {
    const auto& tab = std::get<TabularPayload>(r.payloads.at(ModalityKind::tabular()));
    const auto pairs = parse_tabular_clauses(serialize_tabular(tab));
    std::vector<std::pair<std::string, std::string>> want;
    for (const auto& c : tab.cells) {
      if (c.kind == ValueKind::missing) continue;
      std::string v = c.kind == ValueKind::numeric ? util::format_number(*c.number) : std::string(util::trim(c.raw));
      if (c.unit) v += " " + *c.unit;
      want.emplace_back(c.column, v);
    }
    EXPECT_EQ(pairs, want) << r.id;
  }
  EXPECT_TRUE(parse_tabular_clauses("").empty());
  EXPECT_THROW(parse_tabular_clauses("Colour: red"), ContractError);
}

TEST(Caption, SidecarListsPhrases) {
  TempDir dir;
  util::write_file((dir / "a.png.txt").string(), "red collar\n\nfloppy ears\nsleepy eyes\n");
  util::write_file((dir / "b.png.txt").string(), "caption: A dog on a sofa.\n");
  SidecarCaptioner c;
  ImagePayload a{"a.png", dir / "a.png", false};
  const auto r = c.caption(a);
  EXPECT_EQ(r.text, "The image shows red collar, floppy ears and sleepy eyes.");
  ASSERT_TRUE(r.provenance);
  EXPECT_EQ(r.provenance->backend_id, "sidecar");
  EXPECT_EQ(c.caption(ImagePayload{"b.png", dir / "b.png", false}).text, "A dog on a sofa.");
  EXPECT_THROW(c.caption(ImagePayload{"c.png", dir / "c.png", false}), CaptionError);
}

TEST(Transform, CopiesTextSerializesTablesCaptionsImages) {
  TempDir dir;
  util::write_file((dir / "m.csv").string(),
                   "id,Type,Description,Photo,label\nr1,Dog,  Keeps its  spacing ,r1.png,1\n");
  util::write_file((dir / "r1.png.txt").string(), "red collar\n");
  const auto schema = parse_schema(R"({"columns": [{"name": "id"}, {"name": "Type"}, {"name": "Description"},
      {"name": "Photo"}, {"name": "label"}], "label_column": "label", "id_column": "id",
      "modalities": {"tabular": ["Type"], "text": ["Description"], "image": "Photo"}})");
  IngestOptions o;
  o.task = Task::classification(2);
  auto d = std::make_shared<const Dataset>(load_dataset(dir / "m.csv", schema, o));
  SidecarCaptioner captioner;
  const DatasetView all(d, {0}, {ModalityKind::text(), ModalityKind::image(), ModalityKind::tabular()});
  const auto staged = transform_record(all[0], captioner);
  ASSERT_EQ(staged.per_modality.size(), 3u);
  EXPECT_EQ(staged.per_modality[0].text, "  Keeps its  spacing ");
  EXPECT_EQ(staged.per_modality[1].text, "The image shows red collar.");
  EXPECT_EQ(staged.per_modality[2].text, "The Type is Dog.");
  EXPECT_EQ(class_of(*staged.label), 1u);

  const auto fin = concat_in_order(staged, ModalityOrder({ModalityKind::tabular(), ModalityKind::text()}));
  EXPECT_EQ(fin.stage, TextStage::final);
  EXPECT_EQ(*fin.concat, "The Type is Dog.\n  Keeps its  spacing \nThe image shows red collar.");

  const DatasetView tab_only(d, {0}, {ModalityKind::tabular()});
  EXPECT_EQ(transform_record(tab_only[0], captioner).per_modality.size(), 1u);
}

TEST(CorpusIo, LinesRoundTrip) {
  TempDir dir;
  StagedText a;
  a.record_id = "a";
  a.per_modality = {{ModalityKind::text(), "line one\nline \"two\""}, {ModalityKind::tabular(), "The X is 1."}};
  a.label = Label{std::size_t{2}};
  a.provenance = {{TextStage::transformed, "sidecar", "", "abc"}, {TextStage::summarized, "llm", "m", "def"}};
  StagedText b = a;
  b.record_id = "b";
  b.stage = TextStage::final;
  b.concat = "joined";
  b.appendix = "Reasoning: x.";
  b.label = Label{2.5};
  write_corpus(dir / "c.jsonl", {a, b});
  const auto back = read_corpus(dir / "c.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0], a);
  EXPECT_EQ(back[1], b);
  EXPECT_THROW(parse_corpus_line("{\"id\": 3}"), Error);
}
