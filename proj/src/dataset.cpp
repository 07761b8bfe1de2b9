#include "gql/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace gql {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Malformed: return "malformed";
    case ErrorCode::PriorSum: return "prior-sum";
    case ErrorCode::DuplicateRows: return "duplicate-rows";
    case ErrorCode::UnknownGroupLabel: return "unknown-group-label";
    case ErrorCode::InseparableGroups: return "inseparable-groups";
    case ErrorCode::GroupExhausted: return "group-exhausted";
    case ErrorCode::StuckNode: return "stuck-node";
    case ErrorCode::TreeMismatch: return "tree-mismatch";
    case ErrorCode::MaterializationCap: return "materialization-cap";
    case ErrorCode::InconsistentResponse: return "inconsistent-response";
    case ErrorCode::ProtocolViolation: return "protocol-violation";
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::NotFound: return "not-found";
  }
  return "unknown";
}

namespace {

constexpr double kPriorTolerance = 1e-9;

[[noreturn]] void malformed(const std::string& what) {
  throw Error(ErrorCode::Malformed, "malformed problem document: " + what);
}

int dense_label_count(const std::vector<int>& labels) {
  return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
}

// 1-based document labels to dense 0-based labels; every label in 1..m must
// be used.
std::vector<int> normalize_labels(const std::vector<int>& raw, const char* what) {
  if (raw.empty()) return {};
  const int m = *std::max_element(raw.begin(), raw.end());
  std::vector<bool> used(std::max(m, 0), false);
  std::vector<int> out;
  out.reserve(raw.size());
  for (int label : raw) {
    if (label < 1) {
      throw Error(ErrorCode::UnknownGroupLabel,
                  std::string(what) + " label " + std::to_string(label) + " is not in 1..m");
    }
    used[label - 1] = true;
    out.push_back(label - 1);
  }
  for (int g = 0; g < m; ++g) {
    if (!used[g]) {
      throw Error(ErrorCode::UnknownGroupLabel, std::string(what) + " label " +
                                                    std::to_string(g + 1) +
                                                    " is never used (labels must be 1..m)");
    }
  }
  return out;
}

std::vector<int> to_document_labels(const std::vector<int>& labels) {
  std::vector<int> out(labels);
  for (int& l : out) ++l;
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    cells.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_double(const std::string& s, const std::string& ctx) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) malformed("bad number '" + s + "' in " + ctx);
    return v;
  } catch (const std::logic_error&) {
    malformed("bad number '" + s + "' in " + ctx);
  }
}

}  // namespace

int Dataset::num_object_groups() const {
  return object_groups ? dense_label_count(*object_groups) : 0;
}

int Dataset::num_query_groups() const {
  return query_groups ? dense_label_count(*query_groups) : 0;
}

std::vector<std::vector<int>> Dataset::query_group_members() const {
  std::vector<std::vector<int>> members(num_query_groups());
  if (query_groups) {
    for (int q = 0; q < num_queries(); ++q) members[(*query_groups)[q]].push_back(q);
  }
  return members;
}

int Dataset::query_index(const std::string& id) const {
  auto it = std::find(queries.begin(), queries.end(), id);
  if (it == queries.end()) throw Error(ErrorCode::NotFound, "unknown query id '" + id + "'");
  return static_cast<int>(it - queries.begin());
}

int Dataset::object_index(const std::string& id) const {
  auto it = std::find(objects.begin(), objects.end(), id);
  if (it == objects.end()) throw Error(ErrorCode::NotFound, "unknown object id '" + id + "'");
  return static_cast<int>(it - objects.begin());
}

bool Dataset::operator==(const Dataset& other) const {
  return objects == other.objects && queries == other.queries &&
         matrix.rows() == other.matrix.rows() && matrix.cols() == other.matrix.cols() &&
         matrix == other.matrix && priors.size() == other.priors.size() &&
         priors == other.priors && object_groups == other.object_groups &&
         query_groups == other.query_groups &&
         selection_weights.has_value() == other.selection_weights.has_value() &&
         (!selection_weights || *selection_weights == *other.selection_weights) &&
         identification == other.identification && noise == other.noise;
}

bool rows_distinct(const Dataset& ds) {
  std::set<std::vector<std::uint8_t>> seen;
  for (int i = 0; i < ds.num_objects(); ++i) {
    std::vector<std::uint8_t> row(ds.matrix.cols());
    for (int j = 0; j < ds.num_queries(); ++j) row[j] = ds.matrix(i, j);
    if (!seen.insert(std::move(row)).second) return false;
  }
  return true;
}

std::optional<std::pair<int, int>> inseparable_pair(const Dataset& ds) {
  std::map<std::vector<std::uint8_t>, int> first;
  for (int i = 0; i < ds.num_objects(); ++i) {
    std::vector<std::uint8_t> row(ds.matrix.cols());
    for (int j = 0; j < ds.num_queries(); ++j) row[j] = ds.matrix(i, j);
    auto [it, inserted] = first.emplace(std::move(row), i);
    if (!inserted && ds.group_of(it->second) != ds.group_of(i)) {
      return std::make_pair(it->second, i);
    }
  }
  return std::nullopt;
}

void validate(const Dataset& ds, Identification target) {
  const int m = ds.num_objects();
  const int n = ds.num_queries();
  if (m == 0) malformed("no objects");
  if (ds.matrix.rows() != m || ds.matrix.cols() != n) malformed("matrix shape mismatch");
  if ((ds.matrix.array() > 1).any()) malformed("matrix entries must be 0 or 1");
  if (ds.priors.size() != m) malformed("priors length mismatch");
  if ((ds.priors.array() < 0.0).any() || !ds.priors.allFinite()) {
    throw Error(ErrorCode::PriorSum, "priors must be finite and non-negative");
  }
  if (std::abs(ds.priors.sum() - 1.0) > kPriorTolerance) {
    throw Error(ErrorCode::PriorSum,
                "priors sum to " + std::to_string(ds.priors.sum()) + ", expected 1");
  }
  if (std::set<std::string>(ds.objects.begin(), ds.objects.end()).size() != ds.objects.size())
    malformed("duplicate object ids");
  if (std::set<std::string>(ds.queries.begin(), ds.queries.end()).size() != ds.queries.size())
    malformed("duplicate query ids");
  if (ds.object_groups) {
    if (static_cast<int>(ds.object_groups->size()) != m) malformed("object_groups length");
    normalize_labels(to_document_labels(*ds.object_groups), "object group");
  }
  if (ds.query_groups) {
    if (static_cast<int>(ds.query_groups->size()) != n) malformed("query_groups length");
    normalize_labels(to_document_labels(*ds.query_groups), "query group");
  }
  if (ds.selection_weights) {
    const auto& w = *ds.selection_weights;
    if (w.size() != n) malformed("selection_weights length");
    if ((w.array() < 0.0).any() || !w.allFinite()) malformed("negative selection weight");
  }
  if (ds.noise) {
    for (int q : ds.noise->error_prone) {
      if (q < 0 || q >= n) malformed("noise.error_prone references unknown query");
    }
    if (ds.noise->model != 1 && ds.noise->model != 2) malformed("noise.model must be 1 or 2");
    if (ds.noise->p < 0.0 || ds.noise->p > 0.5) malformed("noise.p must lie in [0, 0.5]");
  }

  if (target == Identification::Unspecified) target = ds.identification;
  if (target == Identification::Object && !rows_distinct(ds)) {
    throw Error(ErrorCode::DuplicateRows,
                "duplicate rows: objects cannot be told apart by any query");
  }
  if (target == Identification::Group) {
    if (!ds.object_groups) {
      throw Error(ErrorCode::InvalidArgument, "group identification requires object_groups");
    }
    if (auto pair = inseparable_pair(ds)) {
      throw Error(ErrorCode::InseparableGroups,
                  "objects '" + ds.objects[pair->first] + "' and '" + ds.objects[pair->second] +
                      "' have identical rows but different groups");
    }
  }
}

Dataset dataset_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) malformed("top level must be an object");
  Dataset ds;
  try {
    ds.objects = doc.at("objects").get<std::vector<std::string>>();
    ds.queries = doc.at("queries").get<std::vector<std::string>>();
    const auto& rows = doc.at("matrix");
    if (!rows.is_array() || rows.size() != ds.objects.size()) malformed("matrix row count");
    ds.matrix.resize(ds.num_objects(), ds.num_queries());
    for (int i = 0; i < ds.num_objects(); ++i) {
      const auto& row = rows[i];
      if (!row.is_array() || static_cast<int>(row.size()) != ds.num_queries())
        malformed("matrix row " + std::to_string(i + 1) + " has wrong length");
      for (int j = 0; j < ds.num_queries(); ++j) {
        const int v = row[j].get<int>();
        if (v != 0 && v != 1) malformed("matrix entries must be 0 or 1");
        ds.matrix(i, j) = static_cast<std::uint8_t>(v);
      }
    }
    if (doc.contains("priors")) {
      auto p = doc.at("priors").get<std::vector<double>>();
      if (static_cast<int>(p.size()) != ds.num_objects()) malformed("priors length");
      ds.priors = Eigen::Map<const Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
    } else {
      ds.priors = Eigen::VectorXd::Constant(ds.num_objects(), 1.0 / ds.num_objects());
    }
    if (doc.contains("object_groups")) {
      auto raw = doc.at("object_groups").get<std::vector<int>>();
      if (static_cast<int>(raw.size()) != ds.num_objects()) malformed("object_groups length");
      ds.object_groups = normalize_labels(raw, "object group");
    }
    if (doc.contains("query_groups")) {
      auto raw = doc.at("query_groups").get<std::vector<int>>();
      if (static_cast<int>(raw.size()) != ds.num_queries()) malformed("query_groups length");
      ds.query_groups = normalize_labels(raw, "query group");
    }
    if (doc.contains("selection_weights")) {
      const auto& sw = doc.at("selection_weights");
      Eigen::VectorXd w = Eigen::VectorXd::Ones(ds.num_queries());
      if (sw.is_object()) {
        for (const auto& [id, value] : sw.items()) w[ds.query_index(id)] = value.get<double>();
      } else {
        auto v = sw.get<std::vector<double>>();
        if (static_cast<int>(v.size()) != ds.num_queries()) malformed("selection_weights length");
        w = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
      }
      ds.selection_weights = w;
    }
    if (doc.contains("identification")) {
      const auto kind = doc.at("identification").get<std::string>();
      if (kind == "object") ds.identification = Identification::Object;
      else if (kind == "group") ds.identification = Identification::Group;
      else malformed("identification must be 'object' or 'group'");
    }
    if (doc.contains("noise")) {
      const auto& nb = doc.at("noise");
      NoiseBlock block;
      for (const auto& id : nb.at("error_prone").get<std::vector<std::string>>())
        block.error_prone.push_back(ds.query_index(id));
      std::sort(block.error_prone.begin(), block.error_prone.end());
      block.model = nb.value("model", 1);
      block.p = nb.value("p", 0.5);
      if (nb.contains("epsilon_prime")) block.epsilon_prime = nb.at("epsilon_prime").get<int>();
      ds.noise = block;
    }
  } catch (const nlohmann::json::exception& e) {
    malformed(e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::NotFound) malformed(e.what());
    throw;
  }
  validate(ds);
  return ds;
}

nlohmann::json dataset_to_json(const Dataset& ds) {
  nlohmann::json doc;
  doc["objects"] = ds.objects;
  doc["queries"] = ds.queries;
  auto rows = nlohmann::json::array();
  for (int i = 0; i < ds.num_objects(); ++i) {
    std::vector<int> row(ds.num_queries());
    for (int j = 0; j < ds.num_queries(); ++j) row[j] = ds.matrix(i, j);
    rows.push_back(row);
  }
  doc["matrix"] = std::move(rows);
  doc["priors"] = std::vector<double>(ds.priors.data(), ds.priors.data() + ds.priors.size());
  if (ds.object_groups) doc["object_groups"] = to_document_labels(*ds.object_groups);
  if (ds.query_groups) doc["query_groups"] = to_document_labels(*ds.query_groups);
  if (ds.selection_weights) {
    nlohmann::json w = nlohmann::json::object();
    for (int q = 0; q < ds.num_queries(); ++q) w[ds.queries[q]] = (*ds.selection_weights)[q];
    doc["selection_weights"] = std::move(w);
  }
  if (ds.identification == Identification::Object) doc["identification"] = "object";
  if (ds.identification == Identification::Group) doc["identification"] = "group";
  if (ds.noise) {
    nlohmann::json nb;
    std::vector<std::string> ids;
    for (int q : ds.noise->error_prone) ids.push_back(ds.queries[q]);
    nb["error_prone"] = ids;
    nb["model"] = ds.noise->model;
    nb["p"] = ds.noise->p;
    if (ds.noise->epsilon_prime) nb["epsilon_prime"] = *ds.noise->epsilon_prime;
    doc["noise"] = std::move(nb);
  }
  return doc;
}

Dataset load_dataset_string(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    malformed(e.what());
  }
  return dataset_from_json(doc);
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::NotFound, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return load_dataset_string(buf.str());
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + path.string());
  out << dataset_to_json(ds).dump(2) << '\n';
}

Dataset load_dataset_csv(const std::filesystem::path& matrix_csv,
                         const std::optional<std::filesystem::path>& metadata_csv) {
  std::ifstream in(matrix_csv);
  if (!in) throw Error(ErrorCode::NotFound, "cannot open " + matrix_csv.string());
  std::string line;
  if (!std::getline(in, line)) malformed("empty matrix csv");
  auto header = split_csv_line(line);
  if (header.size() < 2) malformed("matrix csv header needs at least one query column");

  nlohmann::json doc;
  doc["queries"] = std::vector<std::string>(header.begin() + 1, header.end());
  std::vector<std::string> objects;
  auto rows = nlohmann::json::array();
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      malformed("matrix csv row for '" + cells.front() + "' has wrong length");
    objects.push_back(cells[0]);
    std::vector<int> row;
    for (std::size_t j = 1; j < cells.size(); ++j) {
      if (cells[j] != "0" && cells[j] != "1") malformed("matrix entries must be 0 or 1");
      row.push_back(cells[j] == "1");
    }
    rows.push_back(row);
  }
  doc["objects"] = objects;
  doc["matrix"] = rows;

  if (metadata_csv) {
    std::ifstream meta(*metadata_csv);
    if (!meta) throw Error(ErrorCode::NotFound, "cannot open " + metadata_csv->string());
    if (!std::getline(meta, line)) malformed("empty metadata csv");
    auto cols = split_csv_line(line);
    auto col = [&](const std::string& name) -> int {
      auto it = std::find(cols.begin(), cols.end(), name);
      return it == cols.end() ? -1 : static_cast<int>(it - cols.begin());
    };
    const int c_entity = col("entity"), c_id = col("id"), c_prior = col("prior"),
              c_group = col("group"), c_weight = col("weight");
    if (c_entity < 0 || c_id < 0) malformed("metadata csv needs entity and id columns");

    std::map<std::string, double> priors, weights;
    std::map<std::string, int> ogroups, qgroups;
    auto cell = [](const std::vector<std::string>& c, int k) {
      return k >= 0 && k < static_cast<int>(c.size()) ? c[k] : std::string();
    };
    while (std::getline(meta, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      auto c = split_csv_line(line);
      const auto entity = cell(c, c_entity);
      const auto id = cell(c, c_id);
      if (entity == "object") {
        if (!cell(c, c_prior).empty()) priors[id] = parse_double(cell(c, c_prior), "prior");
        if (!cell(c, c_group).empty())
          ogroups[id] = static_cast<int>(parse_double(cell(c, c_group), "group"));
      } else if (entity == "query") {
        if (!cell(c, c_group).empty())
          qgroups[id] = static_cast<int>(parse_double(cell(c, c_group), "group"));
        if (!cell(c, c_weight).empty()) weights[id] = parse_double(cell(c, c_weight), "weight");
      } else {
        malformed("metadata entity must be 'object' or 'query'");
      }
    }
    auto gather = [&](const auto& map, const std::vector<std::string>& ids, const char* what) {
      using V = typename std::decay_t<decltype(map)>::mapped_type;
      std::vector<V> out;
      for (const auto& id : ids) {
        auto it = map.find(id);
        if (it == map.end()) malformed(std::string("metadata missing ") + what + " for '" + id + "'");
        out.push_back(it->second);
      }
      return out;
    };
    const auto query_ids = doc["queries"].get<std::vector<std::string>>();
    if (!priors.empty()) doc["priors"] = gather(priors, objects, "prior");
    if (!ogroups.empty()) doc["object_groups"] = gather(ogroups, objects, "object group");
    if (!qgroups.empty()) doc["query_groups"] = gather(qgroups, query_ids, "query group");
    if (!weights.empty()) {
      nlohmann::json w = nlohmann::json::object();
      for (const auto& [id, v] : weights) w[id] = v;
      doc["selection_weights"] = w;
    }
  }
  return dataset_from_json(doc);
}

std::vector<std::pair<int, double>> selection_probabilities(const Dataset& ds, int group,
                                                            const QueryMask& answered) {
  if (!ds.query_groups) throw Error(ErrorCode::InvalidArgument, "dataset has no query groups");
  if (group < 0 || group >= ds.num_query_groups())
    throw Error(ErrorCode::InvalidArgument, "unknown query group " + std::to_string(group + 1));
  std::vector<std::pair<int, double>> out;
  double total = 0.0;
  for (int q = 0; q < ds.num_queries(); ++q) {
    if ((*ds.query_groups)[q] != group || answered[q]) continue;
    const double w = ds.selection_weights ? (*ds.selection_weights)[q] : 1.0;
    out.emplace_back(q, w);
    total += w;
  }
  if (out.empty() || total <= 0.0) {
    throw Error(ErrorCode::GroupExhausted,
                "query group " + std::to_string(group + 1) + " has no selectable query left");
  }
  std::erase_if(out, [](const auto& e) { return e.second <= 0.0; });
  for (auto& [q, w] : out) w /= total;
  return out;
}

}  // namespace gql
