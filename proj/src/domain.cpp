#include "modalign/domain.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "modalign/util/rng.hpp"
#include "modalign/util/strings.hpp"

namespace modalign {

ModalityKind::ModalityKind(std::string tag) : tag_(std::move(tag)) {
  if (tag_.empty()) throw ContractError("modality tag must not be empty");
}

int ModalityKind::builtin_rank() const {
  if (tag_ == "text") return 0;
  if (tag_ == "image") return 1;
  if (tag_ == "tabular") return 2;
  return 3;
}

std::strong_ordering operator<=>(const ModalityKind& a, const ModalityKind& b) {
  if (const auto c = a.builtin_rank() <=> b.builtin_rank(); c != 0) return c;
  return a.tag_ <=> b.tag_;
}

ModalitySet parse_modality_set(const std::string& spec) {
  ModalitySet set;
  std::string token;
  const auto flush = [&] {
    const auto t = util::trim(token);
    if (!t.empty()) set.insert(ModalityKind(std::string(t)));
    token.clear();
  };
  for (const char c : spec) {
    if (c == '+' || c == ',') {
      flush();
    } else {
      token.push_back(c);
    }
  }
  flush();
  return set;
}

std::string to_string(const ModalitySet& set) {
  std::vector<std::string> tags;
  for (const auto& m : set) tags.push_back(m.tag());
  return util::join(tags, "+");
}

ModalityOrder::ModalityOrder() : order_{ModalityKind::text(), ModalityKind::image(), ModalityKind::tabular()} {}

ModalityOrder::ModalityOrder(std::vector<ModalityKind> order) : order_(std::move(order)) {}

std::size_t ModalityOrder::rank(const ModalityKind& kind) const {
  const auto it = std::find(order_.begin(), order_.end(), kind);
  return it == order_.end() ? order_.size() : static_cast<std::size_t>(it - order_.begin());
}

ScenarioReport validate_scenario(const MismatchScenario& scenario) {
  ScenarioReport report;
  const ModalitySet universe(scenario.universe.begin(), scenario.universe.end());
  if (universe.size() != scenario.universe.size()) report.violations.emplace_back("universe lists a modality twice");
  if (scenario.train_set.empty()) report.violations.emplace_back("train set is empty");
  if (scenario.test_set.empty()) report.violations.emplace_back("test set is empty");
  for (const auto& m : scenario.train_set) {
    if (!universe.contains(m)) report.violations.push_back("train modality not in universe: " + m.tag());
  }
  for (const auto& m : scenario.test_set) {
    if (!universe.contains(m)) report.violations.push_back("test modality not in universe: " + m.tag());
  }
  if (scenario.mode == ScenarioMode::strict_mismatch) {
    std::vector<std::string> shared;
    for (const auto& m : scenario.train_set) {
      if (scenario.test_set.contains(m)) shared.push_back(m.tag());
    }
    if (!shared.empty()) report.violations.push_back("train/test overlap: " + util::join(shared, ", "));
  }
  return report;
}

std::vector<MismatchScenario> all_mismatch_scenarios(const std::vector<ModalityKind>& universe) {
  const std::size_t p = universe.size();
  std::vector<ModalitySet> subsets;
  for (std::size_t mask = 1; mask < (std::size_t{1} << p); ++mask) {
    ModalitySet s;
    for (std::size_t i = 0; i < p; ++i) {
      if (mask & (std::size_t{1} << i)) s.insert(universe[i]);
    }
    subsets.push_back(std::move(s));
  }
  // Larger training subsets first, then by canonical order.
  std::stable_sort(subsets.begin(), subsets.end(),
                   [](const ModalitySet& a, const ModalitySet& b) { return a.size() > b.size(); });
  std::vector<MismatchScenario> out;
  for (const auto& train : subsets) {
    for (const auto& test : subsets) {
      MismatchScenario s{universe, train, test, ScenarioMode::strict_mismatch};
      if (validate_scenario(s).ok()) out.push_back(std::move(s));
    }
  }
  return out;
}

std::size_t class_of(const Label& label) {
  if (const auto* c = std::get_if<std::size_t>(&label)) return *c;
  throw ContractError("expected a class label, found a regression target");
}

double value_of(const Label& label) {
  if (const auto* v = std::get_if<double>(&label)) return *v;
  return static_cast<double>(std::get<std::size_t>(label));
}

const ColumnSpec* TableSchema::find_column(const std::string& name) const {
  for (const auto& c : columns) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

void TableSchema::validate() const {
  std::unordered_set<std::string> seen;
  for (const auto& c : columns) {
    if (c.name.empty()) throw ConfigError("schema: column with empty name");
    if (!seen.insert(c.name).second) throw ConfigError("schema: duplicate column '" + c.name + "'");
  }
  if (label_column.empty()) throw ConfigError("schema: label_column is required");
  if (!seen.contains(label_column)) throw ConfigError("schema: label_column '" + label_column + "' is not a column");
  if (id_column && !seen.contains(*id_column)) throw ConfigError("schema: id_column '" + *id_column + "' is not a column");
  for (const auto& [modality, selectors] : modality_columns) {
    if (selectors.empty()) throw ConfigError("schema: modality '" + modality.tag() + "' selects no columns");
    for (const auto& s : selectors) {
      if (!seen.contains(s)) {
        throw ConfigError("schema: modality '" + modality.tag() + "' selects unknown column '" + s + "'");
      }
    }
    if (modality == ModalityKind::image() && selectors.size() != 1) {
      throw ConfigError("schema: image modality must select exactly one path column");
    }
  }
}

void Dataset::validate() const {
  std::unordered_set<std::string> ids;
  for (const auto& r : records) {
    if (!ids.insert(r.id).second) throw ContractError("dataset: duplicate record id '" + r.id + "'");
    if (task.kind == TaskKind::classification) {
      if (!is_class_label(r.label)) throw ContractError("dataset: record '" + r.id + "' has a non-class label");
      if (class_of(r.label) >= task.num_classes) {
        throw ContractError("dataset: record '" + r.id + "' label out of range [0, " +
                            std::to_string(task.num_classes) + ")");
      }
    } else if (is_class_label(r.label)) {
      throw ContractError("dataset: record '" + r.id + "' has a class label in a regression task");
    }
  }
}

bool RecordView::has_payload(const ModalityKind& kind) const {
  return allowed_->contains(kind) && record_->payloads.contains(kind);
}

const Payload& RecordView::payload(const ModalityKind& kind) const {
  if (!allowed_->contains(kind)) {
    throw ModalityMasked("modality masked: '" + kind.tag() + "' is not visible in this view of record '" +
                         record_->id + "'");
  }
  const auto it = record_->payloads.find(kind);
  if (it == record_->payloads.end()) {
    throw ContractError("payload absent: record '" + record_->id + "' has no '" + kind.tag() + "' payload");
  }
  return it->second;
}

DatasetView::DatasetView(std::shared_ptr<const Dataset> dataset, std::vector<std::size_t> indices,
                         ModalitySet allowed)
    : dataset_(std::move(dataset)),
      indices_(std::move(indices)),
      allowed_(std::make_shared<const ModalitySet>(std::move(allowed))) {}

RecordView DatasetView::operator[](std::size_t i) const {
  return RecordView(dataset_->records.at(indices_.at(i)), *allowed_);
}

std::vector<std::string> DatasetView::ids() const {
  std::vector<std::string> out;
  out.reserve(indices_.size());
  for (const auto i : indices_) out.push_back(dataset_->records[i].id);
  return out;
}

DatasetView DatasetView::with_modalities(ModalitySet allowed) const {
  return DatasetView(dataset_, indices_, std::move(allowed));
}

DatasetView DatasetView::slice(std::size_t begin, std::size_t end) const {
  end = std::min(end, indices_.size());
  begin = std::min(begin, end);
  return DatasetView(dataset_, std::vector<std::size_t>(indices_.begin() + begin, indices_.begin() + end), *allowed_);
}

std::pair<DatasetView, DatasetView> scenario_views(std::shared_ptr<const Dataset> dataset,
                                                   const MismatchScenario& scenario, const SplitSpec& split) {
  if (const auto report = validate_scenario(scenario); !report.ok()) {
    throw ContractError("invalid scenario: " + util::join(report.violations, "; "));
  }
  if (!(split.train_fraction > 0.0 && split.train_fraction < 1.0)) {
    throw ContractError("train fraction must lie strictly between 0 and 1");
  }
  const std::size_t n = dataset->records.size();
  const auto n_train = static_cast<std::size_t>(std::llround(split.train_fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train >= n) {
    throw ContractError("dataset too small for a non-empty split: " + std::to_string(n) + " records at fraction " +
                        util::format_number(split.train_fraction));
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  util::Rng rng(split.seed);
  rng.shuffle(order);
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return {DatasetView(dataset, std::move(train), scenario.train_set),
          DatasetView(std::move(dataset), std::move(test), scenario.test_set)};
}

}  // namespace modalign
