#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gql/dataset.hpp"
#include "gql/infomath.hpp"
#include "gql/tree.hpp"

namespace gql {

/// Query-selection rules. The first four are the greedy reduction-factor
/// rules; MinMin, MinMax and RandomSearch are baselines for query-group
/// problems.
enum class Strategy { Gbs, Gisa, Gqsa, Gigqsa, MinMin, MinMax, RandomSearch };

const char* to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);
bool suggests_query_groups(Strategy s);

enum class TieBreak { LowestIndex, SeededRandom };

/// Costs within this distance of the minimum are ties.
inline constexpr double kTieTolerance = 1e-12;

struct BuildConfig {
  /// Stopping rule: singleton nodes (object-id) or group-pure nodes
  /// (group-id). Unset means the strategy's natural objective.
  std::optional<Objective> objective;
  TieBreak tie_break = TieBreak::LowestIndex;
  std::uint64_t seed = 0;
  /// Depth guard; unset means the number of queries.
  std::optional<int> max_depth;
};

/// Resolves ties between equally good candidates.
class TieBreaker {
 public:
  explicit TieBreaker(TieBreak mode = TieBreak::LowestIndex, std::uint64_t seed = 0)
      : mode_(mode), rng_(seed) {}

  /// Index into `tied` (non-empty, ascending candidate order).
  std::size_t pick(std::size_t tied);

 private:
  TieBreak mode_;
  std::mt19937_64 rng_;
};

/// A node's suggestion: one query, or a query group with the user's
/// selection distribution over its unanswered queries.
struct Choice {
  bool is_group = false;
  int query = -1;        // single-query rules
  int query_group = -1;  // group rules; -1 for random search over all queries
  std::vector<std::pair<int, double>> members;
  double cost = 0.0;
};

struct CandidateCost {
  int index;  // query or query group
  double cost;
};

/// Costs of every admissible candidate at a node, in index order. Queries
/// constant on the node are not admissible single-query candidates; query
/// groups are admissible when they have a selectable query and at least one
/// selectable query splits the node.
std::vector<CandidateCost> candidate_costs(const Dataset& ds, const NodePopulation& pop,
                                           const QueryMask& answered, Strategy strategy);

/// Greedy choice at a node; empty when no admissible candidate remains.
std::optional<Choice> choose(const Dataset& ds, const NodePopulation& pop,
                             const QueryMask& answered, Strategy strategy, TieBreaker& ties);

/// Whether a node is resolved under the objective.
bool resolved(const NodePopulation& pop, Objective objective);

/// Natural objective of a strategy (GISA/GIGQSA identify groups).
Objective default_objective(Strategy s);

/// Checks that the dataset can be solved by the strategy; throws otherwise.
void require_compatible(const Dataset& ds, Strategy strategy, Objective objective);

/// Greedy top-down construction under any selection rule.
DecisionTree build_tree(const Dataset& ds, Strategy strategy, const BuildConfig& cfg = {});

DecisionTree build_gbs(const Dataset& ds, const BuildConfig& cfg = {});
DecisionTree build_gisa(const Dataset& ds, const BuildConfig& cfg = {});
DecisionTree build_gqsa(const Dataset& ds, const BuildConfig& cfg = {});
DecisionTree build_gigqsa(const Dataset& ds, const BuildConfig& cfg = {});

/// Re-audits every internal node: the chosen query/group must have minimal
/// cost among admissible candidates. Returns a description of the first
/// violation, if any.
std::optional<std::string> audit_greedy(const DecisionTree& tree, const Dataset& ds,
                                        Strategy strategy);

/// Copy of the dataset with every query in one group and uniform selection
/// weights; GQSA on it is the random-search baseline.
Dataset as_single_query_group(const Dataset& ds);

}  // namespace gql
