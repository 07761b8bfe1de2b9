#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "gql/error.hpp"

namespace gql {

/// Row i, column j is 1 iff object i belongs to query j.
using BinaryMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Answered-query flags, indexed by query.
using QueryMask = std::vector<bool>;

enum class Identification { Unspecified, Object, Group };

/// Raw `noise:` block of a problem document. Query indices are 0-based.
struct NoiseBlock {
  std::vector<int> error_prone;
  int model = 1;
  double p = 0.5;
  std::optional<int> epsilon_prime;

  bool operator==(const NoiseBlock&) const = default;
};

/// A query-learning problem: binary relation between objects and queries,
/// object priors, and optional object/query groupings.
///
/// Group labels are stored 0-based and dense; documents use 1-based labels.
struct Dataset {
  std::vector<std::string> objects;
  std::vector<std::string> queries;
  BinaryMatrix matrix;
  Eigen::VectorXd priors;
  std::optional<std::vector<int>> object_groups;
  std::optional<std::vector<int>> query_groups;
  /// Base weight per query; p_i(q) is this weight renormalized over the
  /// unanswered queries of the group.
  std::optional<Eigen::VectorXd> selection_weights;
  Identification identification = Identification::Unspecified;
  std::optional<NoiseBlock> noise;

  int num_objects() const { return static_cast<int>(objects.size()); }
  int num_queries() const { return static_cast<int>(queries.size()); }
  int num_object_groups() const;
  int num_query_groups() const;

  std::uint8_t response(int object, int query) const { return matrix(object, query); }

  /// Group label of an object; the object itself when no groups are given.
  int group_of(int object) const {
    return object_groups ? (*object_groups)[object] : object;
  }

  /// Members of each query group, ascending.
  std::vector<std::vector<int>> query_group_members() const;

  int query_index(const std::string& id) const;
  int object_index(const std::string& id) const;

  bool operator==(const Dataset& other) const;
};

/// Checks structural invariants and, if requested, solvability for a target.
void validate(const Dataset& ds, Identification target = Identification::Unspecified);

/// True when all rows are pairwise distinct.
bool rows_distinct(const Dataset& ds);

/// First pair of rows that are identical but carry different group labels.
std::optional<std::pair<int, int>> inseparable_pair(const Dataset& ds);

Dataset dataset_from_json(const nlohmann::json& doc);
nlohmann::json dataset_to_json(const Dataset& ds);

/// Reads a JSON problem document and validates it.
Dataset load_dataset(const std::filesystem::path& path);
Dataset load_dataset_string(const std::string& text);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);

/// Two-file CSV form. The matrix file has a header `id,<query ids...>` and
/// one row per object. The metadata file has header
/// `entity,id,prior,group,weight`, entity being `object` or `query`; empty
/// cells are omitted values.
Dataset load_dataset_csv(const std::filesystem::path& matrix_csv,
                         const std::optional<std::filesystem::path>& metadata_csv);

/// p_i(q) over the unanswered queries of a query group.
std::vector<std::pair<int, double>> selection_probabilities(const Dataset& ds, int group,
                                                            const QueryMask& answered);

}  // namespace gql
