#pragma once

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "gql/dataset.hpp"

namespace gql {

/// Shannon entropy of a proportion, in bits; H(0) = H(1) = 0.
template <typename Scalar>
Scalar binary_entropy(Scalar pi) {
  if (!(pi >= Scalar(0) && pi <= Scalar(1)))
    throw Error(ErrorCode::InvalidArgument, "binary_entropy: proportion outside [0, 1]");
  if (pi == Scalar(0) || pi == Scalar(1)) return Scalar(0);
  using std::log2;
  return -pi * log2(pi) - (Scalar(1) - pi) * log2(Scalar(1) - pi);
}

/// Shannon entropy of a probability vector, in bits, with 0 log 0 = 0.
template <typename Derived>
typename Derived::Scalar entropy(const Eigen::MatrixBase<Derived>& dist) {
  using Scalar = typename Derived::Scalar;
  if ((dist.array() < Scalar(0)).any())
    throw Error(ErrorCode::InvalidArgument, "entropy: negative entry");
  using std::abs;
  if (abs(dist.sum() - Scalar(1)) > Scalar(1e-9))
    throw Error(ErrorCode::InvalidArgument, "entropy: entries do not sum to 1");
  Scalar h(0);
  for (Eigen::Index i = 0; i < dist.size(); ++i) {
    const Scalar p = dist[i];
    if (p > Scalar(0)) h -= p * std::log2(p);
  }
  return h;
}

/// Entropy of an unnormalized non-negative mass vector, normalized by its
/// sum. Returns 0 for zero total mass.
double entropy_of_masses(std::span<const double> masses);

enum class Objective { ObjectId, GroupId };

/// Objects surviving at a node, partitioned by (object-)group.
class NodePopulation {
 public:
  NodePopulation(const Dataset& ds, std::vector<int> members);
  static NodePopulation root(const Dataset& ds);

  const std::vector<int>& members() const { return members_; }
  double mass() const { return mass_; }
  /// Mass per group label of the dataset (zero for absent groups).
  const std::vector<double>& group_mass() const { return group_mass_; }
  /// Labels of groups with at least one member, ascending.
  const std::vector<int>& present_groups() const { return present_; }
  const std::vector<std::vector<int>>& partition() const { return partition_; }

  bool empty() const { return members_.empty(); }
  bool group_pure() const { return present_.size() <= 1; }
  /// The query's column is constant over the members.
  bool constant_on(const Dataset& ds, int query) const;
  /// Members answering `response` to `query`.
  NodePopulation restrict(const Dataset& ds, int query, int response) const;

 private:
  std::vector<int> members_;
  double mass_ = 0.0;
  std::vector<double> group_mass_;
  std::vector<int> present_;
  std::vector<std::vector<int>> partition_;
};

struct GroupRho {
  int group;
  double mass;  // group mass at the node
  double rho;
};

/// Reduction factors and greedy cost of one candidate split.
struct SplitStats {
  int query = -1;
  double left_mass = 0.0;   // response 0
  double right_mass = 0.0;  // response 1
  double rho = 1.0;
  std::vector<GroupRho> group_rhos;
  double cost = 0.0;

  double mass() const { return left_mass + right_mass; }
  /// Sum over present groups of (group mass / node mass) * H(rho_i).
  double weighted_group_entropy() const;
};

/// rho = max(l, r) / (l + r); 1 when the total is zero.
double reduction_factor(double left, double right);

/// The objective's per-node cost:
///   object-id: rho
///   group-id:  1 - H(rho) + sum_i (pi_i / pi) H(rho_i)
SplitStats split_stats(const NodePopulation& pop, const Dataset& ds, int query,
                       Objective objective);

/// Group-id cost from already computed factors.
double group_cost(const SplitStats& s);

/// Entropy impurity of the group distribution at a node.
double impurity(const NodePopulation& pop);

/// I(node) - [w_l I(left) + w_r I(right)].
double impurity_decrease(const NodePopulation& pop, const Dataset& ds, int query);

struct EquivalenceEntry {
  int query;
  double impurity_decrease;
  double one_minus_cost;
};

struct EquivalenceReport {
  bool holds = true;
  double max_abs_diff = 0.0;
  std::vector<EquivalenceEntry> entries;
  std::vector<int> argmin_cost;
  std::vector<int> argmax_decrease;
};

/// Checks impurity_decrease(q) = 1 - C_a(q) for every candidate, and that
/// the cost minimizers coincide with the impurity-gain maximizers.
EquivalenceReport check_impurity_equivalence(const NodePopulation& pop, const Dataset& ds,
                                             std::span<const int> queries,
                                             double tolerance = 1e-9);

}  // namespace gql
