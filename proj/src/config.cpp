#include "modalign/config.hpp"

#include <set>

#include "modalign/mock_llm.hpp"
#include "modalign/util/strings.hpp"

namespace modalign {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    if (!has(key)) throw ConfigError(name_ + ": missing required key '" + key + "'");
    used_.insert(key);
    return j_.at(key);
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    used_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(name_ + "." + key + ": wrong type");
    }
  }

  template <typename T>
  T require(const std::string& key) {
    if (!has(key)) throw ConfigError(name_ + ": missing required key '" + key + "'");
    T out{};
    get(key, out);
    return out;
  }

  /// Rejects keys nobody read.
  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!used_.contains(key)) throw ConfigError(name_ + ": unknown key '" + key + "'");
    }
  }

  const std::string& name() const { return name_; }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> used_;
};

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

fs::path existing(const fs::path& base, const std::string& p, const std::string& what) {
  const auto path = resolve(base, p);
  if (!fs::exists(path)) throw ConfigError(what + " not found: " + path.string());
  return path;
}

BackendKind parse_backend_kind(const std::string& s, const std::string& where) {
  if (s == "http") return BackendKind::http;
  if (s == "replay") return BackendKind::replay;
  if (s == "mock") return BackendKind::mock;
  throw ConfigError(where + ": unknown backend kind '" + s + "'");
}

Task parse_task(const json& j) {
  Section s(j, "dataset.task");
  const auto kind = s.require<std::string>("kind");
  std::size_t classes = 0;
  s.get("num_classes", classes);
  s.finish();
  if (kind == "classification") {
    if (classes < 2) throw ConfigError("dataset.task: classification needs num_classes >= 2");
    return Task::classification(classes);
  }
  if (kind == "regression") return Task::regression();
  throw ConfigError("dataset.task: unknown kind '" + kind + "'");
}

std::vector<ModalityKind> parse_universe(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected a list of modality names");
  std::vector<ModalityKind> out;
  for (const auto& e : j) {
    if (!e.is_string()) throw ConfigError(where + ": modality names must be strings");
    out.emplace_back(e.get<std::string>());
  }
  return out;
}

DatasetConfig parse_dataset(const json& j, const fs::path& base) {
  Section s(j, "dataset");
  DatasetConfig d;
  d.manifest = existing(base, s.require<std::string>("manifest"), "dataset manifest");
  d.schema = existing(base, s.require<std::string>("schema"), "dataset schema");
  d.task = parse_task(s.raw("task"));
  if (s.has("metric")) d.metric = parse_metric(s.require<std::string>("metric"));
  else d.metric = d.task.kind == TaskKind::classification ? Metric::accuracy : Metric::rmse;
  s.get("name", d.name);
  s.get("task_description", d.task_description);
  if (s.has("task_description_file")) {
    d.task_description = std::string(util::trim(
        util::read_file(existing(base, s.require<std::string>("task_description_file"), "task description").string())));
  }
  if (s.has("delimiter")) {
    const auto delim = s.require<std::string>("delimiter");
    if (delim.size() != 1) throw ConfigError("dataset.delimiter must be a single character");
    d.delimiter = delim[0];
  }
  if (s.has("format")) {
    const auto f = s.require<std::string>("format");
    if (f == "auto") d.format = ManifestFormat::automatic;
    else if (f == "csv" || f == "delimited") d.format = ManifestFormat::delimited;
    else if (f == "jsonl") d.format = ManifestFormat::json_lines;
    else throw ConfigError("dataset.format: unknown value '" + f + "'");
  }
  if (s.has("image_policy")) {
    const auto p = s.require<std::string>("image_policy");
    if (p == "warn") d.image_policy = ImagePolicy::warn_and_keep;
    else if (p == "fail") d.image_policy = ImagePolicy::fail;
    else throw ConfigError("dataset.image_policy: unknown value '" + p + "'");
  }
  if (s.has("split")) {
    Section sp(s.raw("split"), "dataset.split");
    sp.get("train_fraction", d.split.train_fraction);
    sp.get("seed", d.split.seed);
    sp.finish();
    if (!(d.split.train_fraction > 0.0 && d.split.train_fraction < 1.0)) {
      throw ConfigError("dataset.split.train_fraction must lie in (0, 1)");
    }
  }
  if (s.has("order")) d.order = parse_universe(s.raw("order"), "dataset.order");
  s.finish();
  if (d.task_description.empty()) throw ConfigError("dataset: task_description is required");
  return d;
}

BackendConfig parse_backend(const std::string& id, const json& j, const fs::path& base) {
  Section s(j, "backends." + id);
  BackendConfig b;
  b.id = id;
  b.kind = parse_backend_kind(s.require<std::string>("kind"), s.name());
  s.get("endpoint", b.endpoint);
  s.get("path", b.path);
  s.get("model", b.model);
  s.get("auth_env", b.auth_env);
  s.get("concurrency", b.concurrency);
  s.get("record", b.record);
  s.get("timeout_seconds", b.timeout_seconds);
  if (s.has("cache_dir") && !j.at("cache_dir").is_null()) b.cache_dir = resolve(base, s.require<std::string>("cache_dir"));
  else if (s.has("cache_dir")) s.raw("cache_dir");
  if (s.has("knowledge")) b.knowledge = existing(base, s.require<std::string>("knowledge"), "mock knowledge file");
  s.finish();
  if (b.concurrency == 0) throw ConfigError(s.name() + ".concurrency must be positive");
  if (b.kind == BackendKind::http && b.endpoint.empty()) throw ConfigError(s.name() + ": http backends need an endpoint");
  if (b.kind == BackendKind::replay) {
    if (!b.cache_dir) throw ConfigError(s.name() + ": replay backends need cache_dir");
    if (!fs::is_directory(*b.cache_dir)) throw ConfigError(s.name() + ": cache_dir not found: " + b.cache_dir->string());
  }
  return b;
}

void parse_pipeline(const json& j, const fs::path& base, RunConfig& rc) {
  Section s(j, "pipeline");
  PipelineConfig p;
  if (s.has("preset")) p = make_preset(s.require<std::string>("preset"));
  s.get("translation", p.translation);
  s.get("summarization", p.summarization);
  s.get("augmentation", p.augmentation);
  s.get("summarize_before_translate", p.summarize_before_translate);
  s.get("llm_backend", p.llm.backend_id);
  s.get("model", p.llm.model);
  s.get("seed", p.seed);
  s.get("exemplar_pool_size", p.exemplar_pool_size);
  s.get("strip_terms", p.strip_terms);
  s.get("workers", p.workers);
  if (s.has("error_policy")) {
    const auto e = s.require<std::string>("error_policy");
    if (e == "fail_fast") p.policy = ErrorPolicy::fail_fast;
    else if (e == "skip_and_log") p.policy = ErrorPolicy::skip_and_log;
    else throw ConfigError("pipeline.error_policy: unknown value '" + e + "'");
  }
  if (s.has("templates_dir")) {
    p.templates = TemplateSet::load(existing(base, s.require<std::string>("templates_dir"), "templates directory"));
  }
  s.get("caption_backend", rc.caption_backend);
  s.get("caption_model", rc.caption_model);
  s.get("matrix_presets", rc.matrix_presets);
  s.get("matrix_threads", rc.matrix_threads);
  s.finish();
  p.validate();
  for (const auto& name : rc.matrix_presets) make_preset(name);
  if (rc.matrix_threads == 0) throw ConfigError("pipeline.matrix_threads must be positive");
  rc.pipeline = p;
}

void parse_training(const json& j, RunConfig& rc) {
  if (!j.is_object()) throw ConfigError("training: expected an object");
  json train_fields = json::object();
  for (const auto& [key, value] : j.items()) {
    if (key == "model") rc.model = nn::model_config_from_json(value);
    else if (key == "tokenizer") rc.tokenizer = nn::tokenizer_config_from_json(value);
    else if (key == "validation_fraction") {
      if (!value.is_number()) throw ConfigError("training.validation_fraction: wrong type");
      rc.validation_fraction = value.get<double>();
      if (!(rc.validation_fraction > 0.0 && rc.validation_fraction < 1.0)) {
        throw ConfigError("training.validation_fraction must lie in (0, 1)");
      }
    } else {
      train_fields[key] = value;
    }
  }
  try {
    rc.training = nn::train_config_from_json(train_fields);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("training: ") + e.what());
  }
}

std::vector<MismatchScenario> parse_scenarios(const json& j) {
  Section s(j, "scenarios");
  std::vector<ModalityKind> universe{ModalityKind::text(), ModalityKind::image(), ModalityKind::tabular()};
  if (s.has("universe")) universe = parse_universe(s.raw("universe"), "scenarios.universe");
  ScenarioMode mode = ScenarioMode::strict_mismatch;
  if (s.has("mode")) {
    const auto m = s.require<std::string>("mode");
    if (m == "strict_mismatch") mode = ScenarioMode::strict_mismatch;
    else if (m == "overlap_allowed") mode = ScenarioMode::overlap_allowed;
    else throw ConfigError("scenarios.mode: unknown value '" + m + "'");
  }
  std::vector<MismatchScenario> out;
  const json& pairs = s.has("pairs") ? s.raw("pairs") : json("all");
  if (pairs.is_string() && pairs.get<std::string>() == "all") {
    out = all_mismatch_scenarios(universe);
    for (auto& sc : out) sc.mode = mode;
  } else if (pairs.is_array()) {
    for (const auto& p : pairs) {
      Section ps(p, "scenarios.pairs[]");
      MismatchScenario sc{universe, parse_modality_set(ps.require<std::string>("train")),
                          parse_modality_set(ps.require<std::string>("test")), mode};
      ps.finish();
      out.push_back(std::move(sc));
    }
  } else {
    throw ConfigError("scenarios.pairs: expected \"all\" or a list of {train, test}");
  }
  s.finish();
  for (const auto& sc : out) {
    if (const auto r = validate_scenario(sc); !r.ok()) {
      throw ConfigError("scenario " + scenario_label(sc) + ": " + util::join(r.violations, "; "));
    }
  }
  return out;
}

std::shared_ptr<Provider> make_provider(const BackendConfig& b, const fs::path& image_root) {
  if (b.kind == BackendKind::mock) {
    return std::make_shared<MockLlmProvider>(b.knowledge ? MockKnowledge::load(*b.knowledge) : MockKnowledge{});
  }
  if (b.kind == BackendKind::http) {
    HttpProviderOptions o;
    o.base_url = b.endpoint;
    o.path = b.path;
    o.auth_env = b.auth_env;
    o.timeout = std::chrono::seconds(b.timeout_seconds);
    o.image_root = image_root;
    return std::make_shared<HttpProvider>(o);
  }
  return nullptr;
}

}  // namespace

void apply_override(json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string value_text = assignment.substr(eq + 1);
  json value = json::parse(value_text, nullptr, false);
  if (value.is_discarded()) value = value_text;
  json* node = &root;
  const auto parts = util::split(key, '.');
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].empty()) throw ConfigError("--set: malformed key '" + key + "'");
    if (!node->is_object()) throw ConfigError("--set: '" + key + "' descends into a non-object");
    if (i + 1 == parts.size()) (*node)[parts[i]] = value;
    else node = &(*node)[parts[i]];
  }
}

RunConfig parse_run_config(const json& root, const fs::path& base_dir) {
  Section s(root, "config");
  RunConfig rc;
  rc.base_dir = base_dir;
  rc.dataset = parse_dataset(s.raw("dataset"), base_dir);
  if (s.has("backends")) {
    const json& backends = s.raw("backends");
    if (!backends.is_object()) throw ConfigError("backends: expected an object");
    for (const auto& [id, b] : backends.items()) rc.backends.emplace(id, parse_backend(id, b, base_dir));
  }
  if (s.has("pipeline")) parse_pipeline(s.raw("pipeline"), base_dir, rc);
  if (s.has("training")) parse_training(s.raw("training"), rc);
  if (s.has("scenarios")) rc.scenarios = parse_scenarios(s.raw("scenarios"));
  std::string out = "out";
  s.get("output_dir", out);
  rc.output_dir = resolve(base_dir, out);
  s.finish();

  if (!rc.backends.contains(rc.pipeline.llm.backend_id)) {
    throw ConfigError("pipeline.llm_backend '" + rc.pipeline.llm.backend_id + "' is not a configured backend");
  }
  if (rc.caption_backend != "sidecar" && !rc.backends.contains(rc.caption_backend)) {
    throw ConfigError("pipeline.caption_backend '" + rc.caption_backend + "' is not a configured backend");
  }
  return rc;
}

RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides) {
  std::string text;
  try {
    text = util::read_file(path.string());
  } catch (const std::exception& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  json root = json::parse(text, nullptr, false);
  if (root.is_discarded()) throw ConfigError("config " + path.string() + ": not valid JSON");
  for (const auto& o : overrides) apply_override(root, o);
  return parse_run_config(root, fs::absolute(path).parent_path());
}

Runtime build_runtime(const RunConfig& config, std::optional<RunMode> mode) {
  Runtime rt;
  rt.gateway = std::make_unique<Gateway>();
  const fs::path image_root = config.dataset.manifest.parent_path();
  for (const auto& [id, original] : config.backends) {
    BackendConfig b = original;
    if (mode == RunMode::mock) b.kind = BackendKind::mock;
    else if (mode == RunMode::replay) b.kind = BackendKind::replay;
    else if (mode == RunMode::live) b.kind = BackendKind::http;
    if (b.kind == BackendKind::http && b.endpoint.empty()) {
      throw ConfigError("backend '" + id + "': live mode needs an endpoint");
    }
    if (b.kind == BackendKind::replay && (!b.cache_dir || !fs::is_directory(*b.cache_dir))) {
      throw ConfigError("backend '" + id + "': replay mode needs an existing cache_dir");
    }
    BackendOptions options;
    options.mode = b.kind == BackendKind::http ? RunMode::live : b.kind == BackendKind::replay ? RunMode::replay : RunMode::mock;
    options.concurrency = b.concurrency;
    options.cache_dir = b.cache_dir;
    options.record = b.record;
    rt.gateway->register_backend(id, make_provider(b, image_root), options);
  }
  const bool sidecar = config.caption_backend == "sidecar" || mode == RunMode::mock ||
                       config.backends.at(config.caption_backend).kind == BackendKind::mock;
  if (sidecar) {
    rt.captioner = std::make_unique<SidecarCaptioner>();
  } else {
    rt.captioner = std::make_unique<GatewayCaptioner>(*rt.gateway, config.caption_backend, config.caption_model);
  }

  IngestOptions ingest;
  ingest.task = config.dataset.task;
  ingest.name = config.dataset.name;
  ingest.delimiter = config.dataset.delimiter;
  ingest.format = config.dataset.format;
  ingest.image_policy = config.dataset.image_policy;
  auto dataset = std::make_shared<Dataset>(load_dataset(config.dataset.manifest, load_schema(config.dataset.schema), ingest));
  dataset->validate();

  Experiment& e = rt.experiment;
  e.dataset = std::move(dataset);
  e.task_description = config.dataset.task_description;
  e.metric = config.dataset.metric;
  e.split = config.dataset.split;
  e.validation_fraction = config.validation_fraction;
  e.model = config.model;
  e.tokenizer = config.tokenizer;
  e.training = config.training;
  if (config.dataset.order) e.order = ModalityOrder(*config.dataset.order);
  return rt;
}

}  // namespace modalign
