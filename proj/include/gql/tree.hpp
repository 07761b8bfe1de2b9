#pragma once

#include <array>
#include <optional>
#include <variant>
#include <vector>

#include "gql/dataset.hpp"
#include "gql/infomath.hpp"

namespace gql {

enum class TreeVariant {
  ObjectId,
  GroupId,
  ObjectIdGroupQueries,
  GroupIdGroupQueries,
};

const char* to_string(TreeVariant v);
TreeVariant tree_variant_from_string(const std::string& s);
Objective objective_of(TreeVariant v);
bool uses_query_groups(TreeVariant v);

/// Terminal node. `outcome` is an object index (object-id variants) or a
/// group index (group-id variants); -1 for a leaf no object can reach.
struct Leaf {
  int outcome = -1;
  std::vector<int> objects;
};

/// Internal node asking one query; child[r] is followed on response r.
struct SplitNode {
  int query = -1;
  std::array<int, 2> child{-1, -1};
};

/// One user choice at a query-group node.
struct Branch {
  int query = -1;
  double probability = 0.0;
  std::array<int, 2> child{-1, -1};
};

/// Internal node suggesting a query group; the user picks one branch.
struct GroupNode {
  int query_group = -1;
  std::vector<Branch> branches;
};

using TreeNode = std::variant<Leaf, SplitNode, GroupNode>;

/// Decision tree stored as a node arena. Subtrees may be shared between
/// parents when they describe the same state; every traversal below treats
/// the arena as the expanded tree.
struct DecisionTree {
  TreeVariant variant = TreeVariant::ObjectId;
  int root = -1;
  std::vector<TreeNode> nodes;

  int add(TreeNode node) {
    nodes.push_back(std::move(node));
    return static_cast<int>(nodes.size()) - 1;
  }
  const TreeNode& node(int id) const { return nodes.at(id); }
  bool is_leaf(int id) const { return std::holds_alternative<Leaf>(nodes.at(id)); }
};

struct TreeEvaluation {
  double expected_queries = 0.0;
  double by_traversal = 0.0;
  double by_formula = 0.0;
  /// H(P) for object-id variants, H(P_y) for group-id variants.
  double entropy_bound = 0.0;
  double overall_rho = 0.5;
  /// H(P) / H(rho); object-id single-query trees only.
  std::optional<double> corollary_bound;
  std::size_t internal_nodes = 0;
  std::size_t leaves = 0;
};

/// Sum over leaves of reach probability x leaf mass x depth.
double evaluate_by_traversal(const DecisionTree& tree, const Dataset& ds);

/// Closed form: target entropy plus the per-internal-node reduction-factor
/// terms, weighted by node mass and reach probability. Also fills the
/// traversal value for comparison.
TreeEvaluation evaluate_by_formula(const DecisionTree& tree, const Dataset& ds);
nlohmann::json to_json(const TreeEvaluation& ev);

/// Entropy of the identification target (objects or object groups).
double target_entropy(const Dataset& ds, TreeVariant variant);

struct ImpureLeafCheck {
  bool holds = false;
  double lhs = 0.0;  // expected depth by traversal
  double rhs = 0.0;  // closed form minus mass-weighted leaf impurity
};

/// Expected-depth identity for single-query group-id trees whose leaves
/// may contain several groups.
ImpureLeafCheck impure_leaf_depth_check(const DecisionTree& tree, const Dataset& ds,
                                        double tolerance = 1e-9);

/// Structural consistency against the dataset: children partition the
/// parent's objects by response, branch probabilities sum to one, no query
/// repeats along a path, leaves are pure with correct outcomes.
void validate_tree(const DecisionTree& tree, const Dataset& ds, bool allow_impure = false);

/// Objects reaching each node.
std::vector<std::vector<int>> node_objects(const DecisionTree& tree);

/// Group label carrying the most mass among `objects` (lowest on ties).
int majority_group(const Dataset& ds, const std::vector<int>& objects);

/// Rewrites a query-group tree whose every group node offers exactly one
/// query as the equivalent single-query tree; empty if some node offers more.
std::optional<DecisionTree> as_single_query_tree(const DecisionTree& tree);

nlohmann::json export_tree(const DecisionTree& tree, const Dataset& ds);
DecisionTree import_tree(const nlohmann::json& doc, const Dataset& ds);

}  // namespace gql
