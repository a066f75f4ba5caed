#include "modalign/eval.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <thread>

#include <fmt/format.h>

#include "modalign/util/strings.hpp"

namespace modalign {
namespace {

class ScenarioError : public Error {
 public:
  using Error::Error;
};

std::vector<std::string> texts_of(const StagedCorpus& corpus) {
  std::vector<std::string> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus) out.push_back(s.concat ? *s.concat : s.merged_text());
  return out;
}

std::string fmt_num(double v) { return util::format_number(v); }

}  // namespace

std::vector<nn::LabeledText> labeled_corpus(const StagedCorpus& corpus) {
  std::vector<nn::LabeledText> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus) {
    if (!s.label) throw ContractError("record '" + s.record_id + "' has no label");
    out.push_back({s.record_id, s.concat ? *s.concat : s.merged_text(), *s.label});
  }
  return out;
}

double relative_gain(double measured, double baseline) {
  if (baseline == 0.0) throw ContractError("relative_gain: baseline is zero");
  return (measured - baseline) / baseline;
}

double metric_accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels) {
  if (predictions.size() != labels.size()) throw ContractError("accuracy: length mismatch");
  if (labels.empty()) throw ContractError("accuracy: empty input");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double metric_mse(std::span<const double> predictions, std::span<const double> labels) {
  if (predictions.size() != labels.size()) throw ContractError("mse: length mismatch");
  if (labels.empty()) throw ContractError("mse: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) total += (predictions[i] - labels[i]) * (predictions[i] - labels[i]);
  return total / static_cast<double>(labels.size());
}

double metric_rmse(std::span<const double> predictions, std::span<const double> labels) {
  return std::sqrt(metric_mse(predictions, labels));
}

std::string_view metric_name(Metric metric) {
  switch (metric) {
    case Metric::accuracy: return "accuracy";
    case Metric::mse: return "mse";
    case Metric::rmse: return "rmse";
  }
  return "accuracy";
}

Metric parse_metric(std::string_view name) {
  if (name == "accuracy") return Metric::accuracy;
  if (name == "mse") return Metric::mse;
  if (name == "rmse") return Metric::rmse;
  throw ConfigError("unknown metric '" + std::string(name) + "'");
}

bool higher_is_better(Metric metric) { return metric == Metric::accuracy; }

Eigen::MatrixXd embedding_features(const nn::Tokenizer& tokenizer, const nn::DownstreamModel<float>& model,
                                   std::span<const std::string> texts) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(texts.size()), model.embedding.value.cols());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = nn::embedding_mean(model, tokenizer.encode(texts[i], false)).cast<double>();
  }
  return out;
}

std::string points_csv(std::span<const std::string> ids, std::span<const std::string> groups,
                       const Eigen::MatrixXd& points) {
  if (ids.size() != groups.size() || static_cast<Eigen::Index>(ids.size()) != points.rows()) {
    throw ShapeError("export_points: ids, groups and points disagree in length");
  }
  std::string out = "id,group";
  for (Eigen::Index j = 0; j < points.cols(); ++j) out += fmt::format(",v{}", j);
  out += "\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out += ids[i] + "," + groups[i];
    for (Eigen::Index j = 0; j < points.cols(); ++j) out += "," + fmt_num(points(static_cast<Eigen::Index>(i), j));
    out += "\n";
  }
  return out;
}

void export_points(const std::filesystem::path& path, std::span<const std::string> ids,
                   std::span<const std::string> groups, const Eigen::MatrixXd& points) {
  util::write_file(path.string(), points_csv(ids, groups, points));
}

std::string scenario_label(const MismatchScenario& scenario) {
  return to_string(scenario.train_set) + " -> " + to_string(scenario.test_set);
}

ScenarioOutcome run_scenario(const Experiment& experiment, const MismatchScenario& scenario,
                             const PipelineConfig& pipeline, const RunEnvironment& env) {
  const auto where = [&] { return "scenario " + scenario_label(scenario) + " [" + pipeline.preset + "]: "; };
  if (const auto report = validate_scenario(scenario); !report.ok()) {
    throw ContractError(where() + util::join(report.violations, "; "));
  }
  const bool classify = experiment.dataset->task.kind == TaskKind::classification;
  if (classify != (experiment.metric == Metric::accuracy)) {
    throw ConfigError(where() + "metric " + std::string(metric_name(experiment.metric)) + " does not fit the task");
  }
  try {
    const auto [train_view, test_view] = scenario_views(experiment.dataset, scenario, experiment.split);
    ScenarioOutcome outcome;
    outcome.pipeline = run_pipeline({train_view, test_view, experiment.task_description, env.gateway, env.captioner,
                                     experiment.order},
                                    pipeline);
    auto train_all = labeled_corpus(outcome.pipeline.train.final_corpus());
    const auto test_items = labeled_corpus(outcome.pipeline.test.final_corpus());
    if (train_all.size() < 2) throw ContractError("training side has fewer than two records");
    if (test_items.empty()) throw ContractError("test side is empty");
    auto n_val = static_cast<std::size_t>(std::llround(experiment.validation_fraction * static_cast<double>(train_all.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, train_all.size() - 1);
    const std::vector<nn::LabeledText> validation(train_all.end() - static_cast<std::ptrdiff_t>(n_val), train_all.end());
    train_all.resize(train_all.size() - n_val);

    nn::ModelConfig model_config = experiment.model;
    model_config.task = experiment.dataset->task;
    auto trained = std::make_shared<const nn::TrainedModel>(
        nn::train(model_config, experiment.tokenizer, experiment.training, train_all, validation));
    outcome.history = trained->history;
    outcome.predictions = nn::predict(*trained, test_items);
    outcome.trained = std::move(trained);
    outcome.metric = std::string(metric_name(experiment.metric));
    if (classify) {
      std::vector<std::size_t> predicted, truth;
      for (std::size_t i = 0; i < test_items.size(); ++i) {
        predicted.push_back(*outcome.predictions[i].label);
        truth.push_back(class_of(test_items[i].label));
      }
      outcome.value = metric_accuracy(predicted, truth);
    } else {
      std::vector<double> predicted, truth;
      for (std::size_t i = 0; i < test_items.size(); ++i) {
        predicted.push_back(outcome.predictions[i].output.front());
        truth.push_back(value_of(test_items[i].label));
      }
      outcome.value = experiment.metric == Metric::mse ? metric_mse(predicted, truth) : metric_rmse(predicted, truth);
    }
    return outcome;
  } catch (const ConfigError& e) {
    throw ConfigError(where() + e.what());
  } catch (const std::exception& e) {
    throw ScenarioError(where() + e.what());
  }
}

std::vector<PresetSummary> MatrixReport::summaries() const {
  std::vector<PresetSummary> out;
  for (const auto& preset : presets) {
    PresetSummary s{preset, 0, 0.0, 0.0};
    double sum = 0.0;
    for (const auto& r : rows) {
      if (r.preset != preset || r.failed) continue;
      sum += r.value;
      ++s.rows;
    }
    if (s.rows > 0) {
      s.mean = sum / static_cast<double>(s.rows);
      double sq = 0.0;
      for (const auto& r : rows)
        if (r.preset == preset && !r.failed) sq += (r.value - s.mean) * (r.value - s.mean);
      s.variance = sq / static_cast<double>(s.rows);
    }
    out.push_back(s);
  }
  return out;
}

std::optional<double> MatrixReport::gain_over_best_other(std::size_t i) const {
  const MatrixRow& row = rows.at(i);
  if (row.failed) return std::nullopt;
  std::optional<double> best;
  const bool higher = higher_is_better(metric);
  for (const auto& r : rows) {
    if (r.failed || r.preset == row.preset || r.train_set != row.train_set || r.test_set != row.test_set) continue;
    if (!best || (higher ? r.value > *best : r.value < *best)) best = r.value;
  }
  if (!best || *best == 0.0) return std::nullopt;
  return relative_gain(row.value, *best);
}

std::string MatrixReport::to_csv() const {
  std::string out = "row_type,train_set,test_set,preset,metric,value,variance,seed,status,gain_over_best_other\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const auto gain = gain_over_best_other(i);
    out += fmt::format("scenario,{},{},{},{},{},,{},{},{}\n", r.train_set, r.test_set, r.preset, r.metric,
                       r.failed ? std::string() : fmt_num(r.value), r.seed, r.failed ? "failed" : "ok",
                       gain ? fmt_num(*gain) : std::string());
  }
  for (const auto& s : summaries()) {
    out += fmt::format("average,,,{},{},{},{},,{},\n", s.preset, metric_name(metric), fmt_num(s.mean),
                       fmt_num(s.variance), s.rows);
  }
  return out;
}

std::string MatrixReport::timings_csv() const {
  std::string out = "train_set,test_set,preset,wall_seconds\n";
  for (const auto& r : rows) out += fmt::format("{},{},{},{:.3f}\n", r.train_set, r.test_set, r.preset, r.wall_seconds);
  return out;
}

nlohmann::json MatrixReport::to_json() const {
  nlohmann::ordered_json j;
  j["metric"] = metric_name(metric);
  j["rows"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    nlohmann::ordered_json row{{"train_set", r.train_set}, {"test_set", r.test_set}, {"preset", r.preset},
                               {"metric", r.metric},       {"seed", r.seed},         {"failed", r.failed}};
    if (r.failed) row["error"] = r.error;
    else row["value"] = r.value;
    if (const auto gain = gain_over_best_other(i)) row["gain_over_best_other"] = *gain;
    j["rows"].push_back(row);
  }
  j["averages"] = nlohmann::ordered_json::array();
  for (const auto& s : summaries()) {
    j["averages"].push_back({{"preset", s.preset}, {"rows", s.rows}, {"mean", s.mean}, {"variance", s.variance}});
  }
  return nlohmann::json::parse(j.dump());
}

MatrixReport run_matrix(const Experiment& experiment, const std::vector<MismatchScenario>& scenarios,
                        const std::vector<PipelineConfig>& presets, const RunEnvironment& env,
                        const MatrixOptions& options) {
  MatrixReport report;
  report.metric = experiment.metric;
  for (const auto& p : presets) report.presets.push_back(p.preset);
  for (const auto& s : scenarios) {
    if (const auto r = validate_scenario(s); !r.ok()) {
      throw ContractError("scenario " + scenario_label(s) + ": " + util::join(r.violations, "; "));
    }
  }
  const std::size_t total = scenarios.size() * presets.size();
  report.rows.resize(total);
  std::vector<std::exception_ptr> errors(total);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};

  const auto work = [&] {
    for (std::size_t i = next++; i < total && !stop; i = next++) {
      const auto& scenario = scenarios[i / presets.size()];
      const auto& preset = presets[i % presets.size()];
      MatrixRow& row = report.rows[i];
      row.train_set = to_string(scenario.train_set);
      row.test_set = to_string(scenario.test_set);
      row.preset = preset.preset;
      row.metric = std::string(metric_name(experiment.metric));
      row.seed = experiment.training.seed;
      const auto start = std::chrono::steady_clock::now();
      try {
        row.value = run_scenario(experiment, scenario, preset, env).value;
      } catch (const std::exception& e) {
        row.failed = true;
        row.error = e.what();
        errors[i] = std::current_exception();
        if (options.fail_fast) stop = true;
      }
      row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, std::max<std::size_t>(total, 1));
  if (threads == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
  }
  if (options.fail_fast) {
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return report;
}

DistanceDiagnostic diagnose_distance(const Experiment& experiment, const MismatchScenario& scenario,
                                     const PipelineConfig& pipeline, const RunEnvironment& env,
                                     std::uint64_t feature_seed) {
  if (!pipeline.summarization) throw ConfigError("diagnose: the pipeline must include summarization");
  if (const auto report = validate_scenario(scenario); !report.ok()) {
    throw ContractError("scenario " + scenario_label(scenario) + ": " + util::join(report.violations, "; "));
  }
  const auto [train_view, test_view] = scenario_views(experiment.dataset, scenario, experiment.split);
  const auto out =
      run_pipeline({train_view, test_view, experiment.task_description, env.gateway, env.captioner, experiment.order},
                   pipeline);
  const StagedCorpus* train_before = out.train.find("transformed");
  const StagedCorpus* test_before = out.test.find("transformed");
  const StagedCorpus* train_after = out.train.find("summarized");
  const StagedCorpus* test_after = out.test.find("summarized");

  const auto train_b = texts_of(*train_before), test_b = texts_of(*test_before);
  const auto train_a = texts_of(*train_after), test_a = texts_of(*test_after);

  nn::Tokenizer tokenizer(experiment.tokenizer);
  if (experiment.tokenizer.mode == nn::VocabMode::learned) {
    std::vector<std::string> all;
    for (const auto* v : {&train_b, &test_b, &train_a, &test_a}) all.insert(all.end(), v->begin(), v->end());
    tokenizer = nn::Tokenizer::learn(experiment.tokenizer, all);
  }
  nn::ModelConfig config = experiment.model;
  config.task = experiment.dataset->task;
  config.vocab_size = tokenizer.vocab_size();
  config.max_sequence_length = experiment.tokenizer.max_sequence_length;
  const nn::DownstreamModel<float> model(config, feature_seed);

  DistanceDiagnostic d;
  const Eigen::MatrixXd fb_test = embedding_features(tokenizer, model, test_b);
  const Eigen::MatrixXd fb_train = embedding_features(tokenizer, model, train_b);
  const Eigen::MatrixXd fa_test = embedding_features(tokenizer, model, test_a);
  const Eigen::MatrixXd fa_train = embedding_features(tokenizer, model, train_a);
  d.before = mean_pairwise_distance(fb_test, fb_train);
  d.after = mean_pairwise_distance(fa_test, fa_train);

  const auto stack = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd m(a.rows() + b.rows(), a.cols());
    m << a, b;
    return m;
  };
  const auto label_groups = [](const StagedCorpus& test, const StagedCorpus& train, std::vector<std::string>& ids,
                               std::vector<std::string>& groups) {
    for (const auto& s : test) {
      ids.push_back(s.record_id);
      groups.emplace_back("inference");
    }
    for (const auto& s : train) {
      ids.push_back(s.record_id);
      groups.emplace_back("training");
    }
  };
  d.points_before = stack(fb_test, fb_train);
  d.points_after = stack(fa_test, fa_train);
  label_groups(*test_before, *train_before, d.ids_before, d.groups_before);
  label_groups(*test_after, *train_after, d.ids_after, d.groups_after);
  return d;
}

}  // namespace modalign
