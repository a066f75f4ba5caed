#include <charconv>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "modalign/domain.hpp"
#include "modalign/util/strings.hpp"

namespace modalign {
namespace {

using Row = std::vector<std::string>;

// RFC 4180 style: quoted fields may contain delimiters, doubled quotes and
// newlines. Returns rows in file order; blank lines are skipped.
std::vector<Row> parse_delimited(const std::string& text, char delimiter) {
  std::vector<Row> rows;
  Row row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t line = 1;
  const auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  const auto end_row = [&] {
    if (!(row.empty() && field.empty() && !field_started)) {
      end_field();
      rows.push_back(std::move(row));
    }
    row.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && field.empty()) {
      in_quotes = true;
      field_started = true;
    } else if (c == delimiter) {
      end_field();
      field_started = true;
    } else if (c == '\r') {
      // tolerated before \n
    } else if (c == '\n') {
      ++line;
      end_row();
    } else {
      field.push_back(c);
    }
  }
  if (in_quotes) throw IngestError("unterminated quoted field near line " + std::to_string(line));
  end_row();
  return rows;
}

std::optional<double> parse_double(std::string_view s) {
  s = util::trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

std::string quote_field(const std::string& value, char delimiter) {
  const bool needs = value.find_first_of(std::string{delimiter, '"', '\n', '\r'}) != std::string::npos ||
                     (!value.empty() && (value.front() == ' ' || value.back() == ' '));
  if (!needs) return value;
  std::string out = "\"";
  for (const char c : value) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

struct RawTable {
  std::vector<std::string> header;
  // One map per data row; nullopt marks JSON null.
  std::vector<std::vector<std::optional<std::string>>> rows;
};

RawTable read_delimited(const std::string& text, char delimiter) {
  auto rows = parse_delimited(text, delimiter);
  if (rows.empty()) throw IngestError("manifest is empty (no header row)");
  RawTable table;
  table.header = std::move(rows.front());
  for (auto& h : table.header) h = std::string(util::trim(h));
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != table.header.size()) {
      throw IngestError("malformed row " + std::to_string(r) + ": expected " + std::to_string(table.header.size()) +
                        " fields, found " + std::to_string(rows[r].size()));
    }
    std::vector<std::optional<std::string>> cells;
    cells.reserve(rows[r].size());
    for (auto& f : rows[r]) cells.emplace_back(std::move(f));
    table.rows.push_back(std::move(cells));
  }
  return table;
}

RawTable read_json_lines(const std::string& text, const TableSchema& schema) {
  RawTable table;
  for (const auto& c : schema.columns) table.header.push_back(c.name);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < table.header.size(); ++i) index[table.header[i]] = i;
  std::istringstream in(text);
  std::string line;
  std::size_t row_number = 0;
  while (std::getline(in, line)) {
    if (util::trim(line).empty()) continue;
    ++row_number;
    nlohmann::json object;
    try {
      object = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw IngestError("malformed row " + std::to_string(row_number) + ": " + e.what());
    }
    if (!object.is_object()) throw IngestError("malformed row " + std::to_string(row_number) + ": not an object");
    std::vector<std::optional<std::string>> cells(table.header.size(), std::string{});
    for (const auto& [key, value] : object.items()) {
      const auto it = index.find(key);
      if (it == index.end()) {
        throw IngestError("unknown column '" + key + "' in row " + std::to_string(row_number));
      }
      if (value.is_null()) {
        cells[it->second] = std::nullopt;
      } else if (value.is_string()) {
        cells[it->second] = value.get<std::string>();
      } else if (value.is_number() || value.is_boolean()) {
        cells[it->second] = value.dump();
      } else {
        throw IngestError("malformed row " + std::to_string(row_number) + ", column '" + key +
                          "': nested values are not supported");
      }
    }
    table.rows.push_back(std::move(cells));
  }
  return table;
}

std::string row_context(std::size_t row, const std::string& column) {
  return "row " + std::to_string(row) + ", column '" + column + "'";
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& manifest_path, const TableSchema& schema,
                     const IngestOptions& options) {
  schema.validate();
  std::string text;
  try {
    text = util::read_file(manifest_path.string());
  } catch (const std::exception& e) {
    throw IngestError(e.what());
  }
  ManifestFormat format = options.format;
  if (format == ManifestFormat::automatic) {
    const auto ext = manifest_path.extension().string();
    format = (ext == ".jsonl" || ext == ".ndjson") ? ManifestFormat::json_lines : ManifestFormat::delimited;
  }
  RawTable table = format == ManifestFormat::json_lines ? read_json_lines(text, schema)
                                                        : read_delimited(text, options.delimiter);

  std::unordered_map<std::string, std::size_t> column_index;
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    if (!column_index.emplace(table.header[i], i).second) {
      throw IngestError("manifest header repeats column '" + table.header[i] + "'");
    }
    if (!schema.find_column(table.header[i])) {
      throw IngestError("unknown column '" + table.header[i] + "' in manifest header");
    }
  }
  if (!column_index.contains(schema.label_column)) {
    throw IngestError("manifest header lacks label column '" + schema.label_column + "'");
  }
  for (const auto& c : schema.columns) {
    if (!column_index.contains(c.name)) throw IngestError("manifest header lacks column '" + c.name + "'");
  }

  const auto base_dir = manifest_path.parent_path();
  Dataset dataset;
  dataset.name = options.name.empty() ? manifest_path.stem().string() : options.name;
  dataset.task = options.task;
  dataset.schema = schema;
  dataset.manifest_path = manifest_path;
  dataset.records.reserve(table.rows.size());

  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const std::size_t row_number = r + 1;
    const auto& cells = table.rows[r];
    const auto cell = [&](const std::string& name) -> std::optional<std::string> {
      const auto& v = cells[column_index.at(name)];
      if (!v) return std::nullopt;
      return *v;
    };
    const auto present = [&](const std::optional<std::string>& v) {
      return v && !util::trim(*v).empty();
    };

    Record record;
    if (schema.id_column) {
      const auto id = cell(*schema.id_column);
      if (!present(id)) throw IngestError("malformed " + row_context(row_number, *schema.id_column) + ": empty id");
      record.id = std::string(util::trim(*id));
    } else {
      record.id = "row-" + std::to_string(row_number);
    }

    const auto label_text = cell(schema.label_column);
    if (!present(label_text)) {
      throw IngestError("rejected " + row_context(row_number, schema.label_column) + ": missing label");
    }
    const auto label_trimmed = util::trim(*label_text);
    if (options.task.kind == TaskKind::classification) {
      std::size_t k = 0;
      const auto [ptr, ec] = std::from_chars(label_trimmed.data(), label_trimmed.data() + label_trimmed.size(), k);
      if (ec != std::errc() || ptr != label_trimmed.data() + label_trimmed.size()) {
        throw IngestError("malformed " + row_context(row_number, schema.label_column) +
                          ": class label must be a non-negative integer, got '" + std::string(label_trimmed) + "'");
      }
      if (k >= options.task.num_classes) {
        throw IngestError("malformed " + row_context(row_number, schema.label_column) + ": class " +
                          std::to_string(k) + " outside [0, " + std::to_string(options.task.num_classes) + ")");
      }
      record.label = k;
    } else {
      const auto v = parse_double(label_trimmed);
      if (!v) {
        throw IngestError("malformed " + row_context(row_number, schema.label_column) + ": not a number '" +
                          std::string(label_trimmed) + "'");
      }
      record.label = *v;
    }

    for (const auto& [modality, selectors] : schema.modality_columns) {
      if (modality == ModalityKind::tabular()) {
        TabularPayload payload;
        for (const auto& name : selectors) {
          const ColumnSpec& spec = *schema.find_column(name);
          const auto v = cell(name);
          TabularCell tc;
          tc.column = name;
          tc.unit = spec.unit;
          tc.raw = v.value_or("");
          if (!present(v)) {
            tc.kind = ValueKind::missing;
          } else if (spec.kind == ColumnKind::numeric) {
            const auto number = parse_double(*v);
            if (!number) {
              throw IngestError("malformed " + row_context(row_number, name) + ": not a number '" + *v + "'");
            }
            tc.kind = ValueKind::numeric;
            tc.number = number;
          } else {
            tc.kind = ValueKind::categorical;
          }
          payload.cells.push_back(std::move(tc));
        }
        record.payloads.emplace(modality, std::move(payload));
      } else if (modality == ModalityKind::image()) {
        const auto v = cell(selectors.front());
        if (!present(v)) continue;
        ImagePayload image;
        image.reference = std::string(util::trim(*v));
        const std::filesystem::path ref(image.reference);
        image.resolved = ref.is_absolute() ? ref : base_dir / ref;
        image.exists = std::filesystem::exists(image.resolved);
        if (!image.exists) {
          if (options.image_policy == ImagePolicy::fail) {
            throw IngestError("unresolvable image path at " + row_context(row_number, selectors.front()) + ": " +
                              image.resolved.string());
          }
          std::cerr << "warning: " << row_context(row_number, selectors.front())
                    << ": image not found, keeping reference " << image.reference << "\n";
        }
        record.payloads.emplace(modality, std::move(image));
      } else {
        std::vector<std::string> parts;
        for (const auto& name : selectors) {
          const auto v = cell(name);
          if (present(v)) parts.push_back(*v);
        }
        if (parts.empty()) continue;
        record.payloads.emplace(modality, TextPayload{util::join(parts, " ")});
      }
    }
    dataset.records.push_back(std::move(record));
  }
  try {
    dataset.validate();
  } catch (const ContractError& e) {
    throw IngestError(e.what());
  }
  return dataset;
}

void write_manifest(const Dataset& dataset, const std::filesystem::path& path, char delimiter) {
  const auto& schema = dataset.schema;
  std::unordered_map<std::string, ModalityKind> owner;
  for (const auto& [modality, selectors] : schema.modality_columns) {
    for (const auto& s : selectors) owner.emplace(s, modality);
  }
  std::ostringstream out;
  for (std::size_t i = 0; i < schema.columns.size(); ++i) {
    if (i) out << delimiter;
    out << quote_field(schema.columns[i].name, delimiter);
  }
  out << "\n";
  for (const auto& record : dataset.records) {
    for (std::size_t i = 0; i < schema.columns.size(); ++i) {
      const auto& name = schema.columns[i].name;
      std::string value;
      if (schema.id_column && name == *schema.id_column) {
        value = record.id;
      } else if (name == schema.label_column) {
        value = std::holds_alternative<std::size_t>(record.label) ? std::to_string(std::get<std::size_t>(record.label))
                                                                : util::format_number(std::get<double>(record.label));
      } else if (const auto it = owner.find(name); it != owner.end()) {
        const auto p = record.payloads.find(it->second);
        if (p != record.payloads.end()) {
          if (const auto* tab = std::get_if<TabularPayload>(&p->second)) {
            for (const auto& c : tab->cells) {
              if (c.column == name) value = c.raw;
            }
          } else if (const auto* img = std::get_if<ImagePayload>(&p->second)) {
            value = img->reference;
          } else if (const auto* txt = std::get_if<TextPayload>(&p->second)) {
            // Multi-column text payloads are stored joined; write them into the first column.
            if (schema.modality_columns.at(it->second).front() == name) value = txt->text;
          }
        }
      }
      if (i) out << delimiter;
      out << quote_field(value, delimiter);
    }
    out << "\n";
  }
  util::write_file(path.string(), out.str());
}

TableSchema parse_schema(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("schema: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("schema: expected an object");
  static const std::unordered_set<std::string> kKeys{"columns", "label_column", "id_column", "modalities"};
  for (const auto& [key, _] : j.items()) {
    if (!kKeys.contains(key)) throw ConfigError("schema: unknown key '" + key + "'");
  }
  TableSchema schema;
  try {
    for (const auto& c : j.at("columns")) {
      ColumnSpec spec;
      if (c.is_string()) {
        spec.name = c.get<std::string>();
      } else {
        for (const auto& [key, _] : c.items()) {
          if (key != "name" && key != "kind" && key != "unit") {
            throw ConfigError("schema: unknown column key '" + key + "'");
          }
        }
        spec.name = c.at("name").get<std::string>();
        const auto kind = c.value("kind", std::string("categorical"));
        if (kind == "numeric") {
          spec.kind = ColumnKind::numeric;
        } else if (kind == "categorical") {
          spec.kind = ColumnKind::categorical;
        } else {
          throw ConfigError("schema: column '" + spec.name + "' has unknown kind '" + kind + "'");
        }
        if (c.contains("unit") && !c.at("unit").is_null()) spec.unit = c.at("unit").get<std::string>();
      }
      schema.columns.push_back(std::move(spec));
    }
    schema.label_column = j.at("label_column").get<std::string>();
    if (j.contains("id_column") && !j.at("id_column").is_null()) schema.id_column = j.at("id_column").get<std::string>();
    if (j.contains("modalities")) {
      for (const auto& [tag, selectors] : j.at("modalities").items()) {
        std::vector<std::string> cols;
        if (selectors.is_string()) {
          cols.push_back(selectors.get<std::string>());
        } else {
          cols = selectors.get<std::vector<std::string>>();
        }
        schema.modality_columns.emplace(ModalityKind(tag), std::move(cols));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("schema: ") + e.what());
  }
  schema.validate();
  return schema;
}

TableSchema load_schema(const std::filesystem::path& path) {
  std::string text;
  try {
    text = util::read_file(path.string());
  } catch (const std::exception& e) {
    throw ConfigError(std::string("schema: ") + e.what());
  }
  return parse_schema(text);
}

}  // namespace modalign
