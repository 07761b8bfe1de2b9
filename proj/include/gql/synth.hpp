#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "gql/dataset.hpp"

namespace gql {

/// Within-group (w) and between-group (b) response correlation of a query.
struct Correlation {
  double w = 1.0;
  double b = 1.0;
};

/// Parameters are drawn uniformly from gamma_w in [0.5, 0.5 + d2],
/// gamma_b in [0.5, 0.5 + d1]; d1, d2 in [0, 0.5]. Growing d2 moves mass
/// towards the group-separating corner (gamma_w -> 1, gamma_b -> 1/2).
struct Rectangle {
  double d1 = 0.5;
  double d2 = 0.5;
};

/// What generation must guarantee about the rows.
enum class RowRequirement { None, SeparableGroups, Distinct };

struct GroupGenParams {
  std::vector<int> group_sizes;  // M = sum
  int num_queries = 0;
  /// Per-query parameters; when empty they are drawn from `rectangle`.
  std::vector<Correlation> correlations;
  Rectangle rectangle;
  std::uint64_t seed = 0;
  RowRequirement require = RowRequirement::SeparableGroups;
};

struct QueryGroupGenParams {
  int num_objects = 0;
  std::vector<int> query_group_sizes;  // N = sum
  double gamma_max = 1.0;
  std::uint64_t seed = 0;
  RowRequirement require = RowRequirement::Distinct;
};

/// Outcome of the bounded column-resampling pass that removes offending
/// duplicate rows.
struct GenReport {
  int resampled_columns = 0;
  /// Pairs still violating the requirement after the retry budget.
  std::vector<std::pair<int, int>> unresolved;
  std::vector<Correlation> correlations;  // parameters actually used, per query
};

Dataset gen_group_dataset(const GroupGenParams& params, GenReport* report = nullptr);
Dataset gen_querygroup_dataset(const QueryGroupGenParams& params, GenReport* report = nullptr);

/// Majority-vote estimate of each query's (gamma_w, gamma_b); ties vote 1.
std::vector<Correlation> estimate_params(const Dataset& ds);

/// Group sizes shaped like the toxic-chemical database used for the
/// paper's experiments: 298 objects in 16 groups, 79 queries in 10 groups.
std::vector<int> wiser_object_group_sizes();
std::vector<int> wiser_query_group_sizes();

}  // namespace gql
