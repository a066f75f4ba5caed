#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "modalign/config.hpp"
#include "modalign/util/sha256.hpp"
#include "modalign/util/strings.hpp"

namespace fs = std::filesystem;
using namespace modalign;
using ojson = nlohmann::ordered_json;

namespace {

struct GlobalOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::string mode;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string scenario;
};

struct Loaded {
  RunConfig config;
  Runtime runtime;
  fs::path out;
};

Loaded load(const GlobalOptions& g) {
  if (g.config.empty()) throw ConfigError("--config is required");
  auto overrides = g.overrides;
  if (g.seed) {
    overrides.push_back(fmt::format("pipeline.seed={}", *g.seed));
    overrides.push_back(fmt::format("training.seed={}", *g.seed));
    overrides.push_back(fmt::format("dataset.split.seed={}", *g.seed));
  }
  RunConfig rc = load_run_config(g.config, overrides);
  std::optional<RunMode> mode;
  if (!g.mode.empty()) {
    mode = parse_run_mode(g.mode);
    if (!mode) throw ConfigError("--mode must be live, replay or mock");
  }
  fs::path out = g.out.empty() ? rc.output_dir : fs::path(g.out);
  Runtime rt = build_runtime(rc, mode);
  return {std::move(rc), std::move(rt), std::move(out)};
}

MismatchScenario pick_scenario(const RunConfig& rc, const std::string& flag) {
  if (flag.empty()) {
    if (rc.scenarios.empty()) throw ConfigError("no scenario configured; pass --scenario train:test");
    return rc.scenarios.front();
  }
  const auto colon = flag.find(':');
  if (colon == std::string::npos) throw ConfigError("--scenario expects train:test, e.g. tabular:image");
  MismatchScenario s;
  s.universe = rc.scenarios.empty() ? std::vector<ModalityKind>{ModalityKind::text(), ModalityKind::image(),
                                                                  ModalityKind::tabular()}
                                    : rc.scenarios.front().universe;
  s.train_set = parse_modality_set(flag.substr(0, colon));
  s.test_set = parse_modality_set(flag.substr(colon + 1));
  if (!rc.scenarios.empty()) s.mode = rc.scenarios.front().mode;
  if (const auto r = validate_scenario(s); !r.ok()) {
    throw ConfigError("scenario " + scenario_label(s) + ": " + util::join(r.violations, "; "));
  }
  return s;
}

ojson file_entry(const fs::path& root, const fs::path& file, const StagedCorpus& corpus) {
  std::set<std::string> digests;
  for (const auto& r : corpus)
    for (const auto& p : r.provenance)
      if (!p.request_digest.empty()) digests.insert(p.request_digest);
  std::string joined;
  for (const auto& d : digests) joined += d + "\n";
  return {{"path", fs::relative(file, root).generic_string()},
          {"records", corpus.size()},
          {"sha256", util::sha256_hex(util::read_file(file.string()))},
          {"request_digests", digests.size()},
          {"provenance_sha256", util::sha256_hex(joined)}};
}

int cmd_validate(const GlobalOptions& g) {
  const RunConfig rc = load_run_config(g.config, g.overrides);
  const Runtime rt = build_runtime(rc, g.mode.empty() ? std::nullopt : parse_run_mode(g.mode));
  fmt::print("config ok: {} records, {} backends, {} scenarios, preset {}\n", rt.experiment.dataset->records.size(),
             rc.backends.size(), rc.scenarios.size(), rc.pipeline.preset);
  return 0;
}

int cmd_transform(const GlobalOptions& g, const std::string& split) {
  auto l = load(g);
  const auto scenario = pick_scenario(l.config, g.scenario);
  const auto [train_view, test_view] = scenario_views(l.runtime.experiment.dataset, scenario, l.config.dataset.split);
  const auto& view = split == "train" ? train_view : test_view;
  const auto corpus = transform_view(view, *l.runtime.captioner, l.runtime.experiment.order, l.config.pipeline.policy);
  fs::create_directories(l.out);
  const auto path = l.out / (split + ".transformed.jsonl");
  write_corpus(path, corpus);
  fmt::print("wrote {} ({} records)\n", path.string(), corpus.size());
  return 0;
}

int cmd_pipeline(const GlobalOptions& g) {
  auto l = load(g);
  const auto scenario = pick_scenario(l.config, g.scenario);
  const auto [train_view, test_view] = scenario_views(l.runtime.experiment.dataset, scenario, l.config.dataset.split);
  const auto output = run_pipeline({train_view, test_view, l.config.dataset.task_description, *l.runtime.gateway,
                                    *l.runtime.captioner, l.runtime.experiment.order},
                                   l.config.pipeline);
  ojson manifest{{"scenario", scenario_label(scenario)}, {"preset", l.config.pipeline.preset},
                 {"translated", output.translated}};
  for (const auto& [side_name, side] : {std::pair{"train", &output.train}, std::pair{"test", &output.test}}) {
    const fs::path dir = l.out / side_name;
    fs::create_directories(dir);
    ojson files = ojson::array();
    for (std::size_t i = 0; i < side->stages.size(); ++i) {
      const auto& [stage, corpus] = side->stages[i];
      const auto path = dir / fmt::format("{:02}-{}.jsonl", i + 1, stage);
      write_corpus(path, corpus);
      files.push_back(file_entry(l.out, path, corpus));
    }
    manifest[side_name] = std::move(files);
  }
  util::write_file((l.out / "manifest.json").string(), manifest.dump(2) + "\n");
  fmt::print("wrote {} stage files per side under {}\n", output.train.stages.size(), l.out.string());
  return 0;
}

void write_predictions(const fs::path& path, const std::vector<nn::LabeledText>& items,
                       const std::vector<nn::Prediction>& predictions) {
  std::string csv = "id,label,prediction\n";
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& p = predictions[i];
    const std::string truth = is_class_label(items[i].label) ? std::to_string(class_of(items[i].label))
                                                             : util::format_number(value_of(items[i].label));
    const std::string predicted = p.label ? std::to_string(*p.label) : util::format_number(p.output.front());
    csv += p.id + "," + truth + "," + predicted + "\n";
  }
  util::write_file(path.string(), csv);
}

int cmd_train(const GlobalOptions& g, bool evaluate_too, const std::string& checkpoint) {
  auto l = load(g);
  const auto scenario = pick_scenario(l.config, g.scenario);
  fs::create_directories(l.out);
  const auto env = l.runtime.environment();

  if (!checkpoint.empty()) {
    const auto trained = nn::load_checkpoint(checkpoint);
    const auto [train_view, test_view] =
        scenario_views(l.runtime.experiment.dataset, scenario, l.config.dataset.split);
    const auto output = run_pipeline({train_view, test_view, l.config.dataset.task_description, env.gateway,
                                      env.captioner, l.runtime.experiment.order},
                                     l.config.pipeline);
    const auto items = labeled_corpus(output.test.final_corpus());
    const auto predictions = nn::predict(trained, items);
    const auto stats = nn::evaluate(trained, items);
    write_predictions(l.out / "predictions.csv", items, predictions);
    const Metric metric = l.runtime.experiment.metric;
    const double value = metric == Metric::mse ? stats.val_metric * stats.val_metric : stats.val_metric;
    const ojson metrics{{"scenario", scenario_label(scenario)},
                        {"checkpoint", checkpoint},
                        {"metric", metric_name(metric)},
                        {"value", value},
                        {"loss", stats.val_loss}};
    util::write_file((l.out / "metrics.json").string(), metrics.dump(2) + "\n");
    fmt::print("{}: {} = {}\n", scenario_label(scenario), metric_name(metric), util::format_number(value));
    return 0;
  }

  const auto outcome = run_scenario(l.runtime.experiment, scenario, l.config.pipeline, env);
  nn::save_checkpoint(l.out / "model.ckpt", *outcome.trained);
  util::write_file((l.out / "history.csv").string(), outcome.history.to_csv());
  const ojson metrics{{"scenario", scenario_label(scenario)},
                      {"preset", l.config.pipeline.preset},
                      {"metric", outcome.metric},
                      {"value", outcome.value},
                      {"best_epoch", outcome.history.best_epoch},
                      {"epochs_run", outcome.history.epochs.size()}};
  util::write_file((l.out / "metrics.json").string(), metrics.dump(2) + "\n");
  if (evaluate_too) {
    write_predictions(l.out / "predictions.csv", labeled_corpus(outcome.pipeline.test.final_corpus()),
                      outcome.predictions);
  }
  fmt::print("{} [{}]: {} = {}\n", scenario_label(scenario), l.config.pipeline.preset, outcome.metric,
             util::format_number(outcome.value));
  return 0;
}

int cmd_matrix(const GlobalOptions& g, bool keep_going) {
  auto l = load(g);
  if (l.config.scenarios.empty()) throw ConfigError("matrix needs a scenarios section");
  std::vector<std::string> names = l.config.matrix_presets.empty() ? preset_names() : l.config.matrix_presets;
  std::vector<PipelineConfig> presets;
  for (const auto& n : names) presets.push_back(make_preset(n, l.config.pipeline));
  MatrixOptions options;
  options.threads = l.config.matrix_threads;
  options.fail_fast = !keep_going;
  const auto report = run_matrix(l.runtime.experiment, l.config.scenarios, presets, l.runtime.environment(), options);
  fs::create_directories(l.out);
  util::write_file((l.out / "report.csv").string(), report.to_csv());
  util::write_file((l.out / "report.json").string(), report.to_json().dump(2) + "\n");
  util::write_file((l.out / "timings.csv").string(), report.timings_csv());
  std::size_t failed = 0;
  for (const auto& r : report.rows) failed += r.failed ? 1 : 0;
  for (const auto& s : report.summaries()) {
    fmt::print("{:<30} n={:<3} mean={} var={}\n", s.preset, s.rows, util::format_number(s.mean),
               util::format_number(s.variance));
  }
  if (failed > 0) {
    fmt::print(stderr, "{} scenario runs failed\n", failed);
    return 1;
  }
  return 0;
}

int cmd_diagnose(const GlobalOptions& g) {
  auto l = load(g);
  const auto scenario = pick_scenario(l.config, g.scenario);
  const auto d = diagnose_distance(l.runtime.experiment, scenario, l.config.pipeline, l.runtime.environment(),
                                   l.config.training.seed);
  fs::create_directories(l.out);
  export_points(l.out / "points_before.csv", d.ids_before, d.groups_before, d.points_before);
  export_points(l.out / "points_after.csv", d.ids_after, d.groups_after, d.points_after);
  const ojson summary{{"scenario", scenario_label(scenario)},
                      {"before", d.before},
                      {"after", d.after},
                      {"ratio", d.before > 0.0 ? d.after / d.before : 0.0}};
  util::write_file((l.out / "distances.json").string(), summary.dump(2) + "\n");
  fmt::print("mean cross-group distance: before {} after {}\n", util::format_number(d.before),
             util::format_number(d.after));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"modalign: text-centric alignment for modality-mismatched learning"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config, "Experiment config (JSON)");
  app.add_option("--set", g.overrides, "Override a config key: section.key=value")->take_all();
  app.add_option("--mode", g.mode, "Force every backend into live, replay or mock")
      ->check(CLI::IsMember({"live", "replay", "mock"}));
  app.add_option("--seed", g.seed, "Seed for split, pipeline and training");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--scenario", g.scenario, "train:test subsets, e.g. tabular:image");

  std::string split = "train";
  std::string checkpoint;
  bool keep_going = false;
  auto* transform = app.add_subcommand("transform", "Write the transformed corpus of one split");
  transform->add_option("--split", split)->check(CLI::IsMember({"train", "test"}));
  auto* pipeline = app.add_subcommand("pipeline", "Run every enabled stage on both sides");
  auto* train = app.add_subcommand("train", "Run the pipeline and train the downstream model");
  auto* eval = app.add_subcommand("eval", "Train and score, or score a saved checkpoint");
  eval->add_option("--checkpoint", checkpoint, "Score this checkpoint instead of training");
  auto* matrix = app.add_subcommand("matrix", "Scenario x preset report");
  matrix->add_flag("--keep-going", keep_going, "Record failed runs instead of stopping");
  auto* diagnose = app.add_subcommand("diagnose", "Cross-group embedding distance before and after alignment");
  auto* validate = app.add_subcommand("validate-config", "Parse the config and load the dataset");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*transform) return cmd_transform(g, split);
    if (*pipeline) return cmd_pipeline(g);
    if (*train) return cmd_train(g, false, "");
    if (*eval) return cmd_train(g, true, checkpoint);
    if (*matrix) return cmd_matrix(g, keep_going);
    if (*diagnose) return cmd_diagnose(g);
    if (*validate) return cmd_validate(g);
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 1;
}
