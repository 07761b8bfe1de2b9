#include "gql/infomath.hpp"

#include <algorithm>
#include <limits>

namespace gql {

namespace {

int label_count(const Dataset& ds) {
  return ds.object_groups ? ds.num_object_groups() : ds.num_objects();
}

}  // namespace

double entropy_of_masses(std::span<const double> masses) {
  double total = 0.0;
  for (double m : masses) total += m;
  if (total <= 0.0) return 0.0;
  double h = 0.0;
  for (double m : masses) {
    if (m > 0.0) {
      const double p = m / total;
      h -= p * std::log2(p);
    }
  }
  return h;
}

NodePopulation::NodePopulation(const Dataset& ds, std::vector<int> members)
    : members_(std::move(members)), group_mass_(label_count(ds), 0.0),
      partition_(label_count(ds)) {
  for (int i : members_) {
    const double w = ds.priors[i];
    const int g = ds.group_of(i);
    mass_ += w;
    group_mass_[g] += w;
    partition_[g].push_back(i);
  }
  for (int g = 0; g < static_cast<int>(partition_.size()); ++g) {
    if (!partition_[g].empty()) present_.push_back(g);
  }
}

NodePopulation NodePopulation::root(const Dataset& ds) {
  std::vector<int> all(ds.num_objects());
  for (int i = 0; i < ds.num_objects(); ++i) all[i] = i;
  return NodePopulation(ds, std::move(all));
}

bool NodePopulation::constant_on(const Dataset& ds, int query) const {
  if (members_.empty()) return true;
  const auto first = ds.response(members_.front(), query);
  return std::all_of(members_.begin(), members_.end(),
                     [&](int i) { return ds.response(i, query) == first; });
}

NodePopulation NodePopulation::restrict(const Dataset& ds, int query, int response) const {
  std::vector<int> kept;
  for (int i : members_) {
    if (ds.response(i, query) == response) kept.push_back(i);
  }
  return NodePopulation(ds, std::move(kept));
}

double SplitStats::weighted_group_entropy() const {
  const double total = mass();
  if (total <= 0.0) return 0.0;
  double s = 0.0;
  for (const auto& g : group_rhos) s += (g.mass / total) * binary_entropy(g.rho);
  return s;
}

double reduction_factor(double left, double right) {
  const double total = left + right;
  if (total <= 0.0) return 1.0;
  return std::min(1.0, std::max(left, right) / total);
}

double group_cost(const SplitStats& s) {
  return 1.0 - binary_entropy(s.rho) + s.weighted_group_entropy();
}

SplitStats split_stats(const NodePopulation& pop, const Dataset& ds, int query,
                       Objective objective) {
  if (query < 0 || query >= ds.num_queries())
    throw Error(ErrorCode::InvalidArgument, "split_stats: unknown query");
  SplitStats s;
  s.query = query;
  for (int g : pop.present_groups()) {
    double left = 0.0, right = 0.0;
    for (int i : pop.partition()[g]) {
      (ds.response(i, query) ? right : left) += ds.priors[i];
    }
    s.left_mass += left;
    s.right_mass += right;
    // Zero-mass groups carry no weight in the cost; report them as intact.
    s.group_rhos.push_back({g, left + right, reduction_factor(left, right)});
  }
  s.rho = reduction_factor(s.left_mass, s.right_mass);
  s.cost = objective == Objective::ObjectId ? s.rho : group_cost(s);
  return s;
}

double impurity(const NodePopulation& pop) {
  return entropy_of_masses(pop.group_mass());
}

double impurity_decrease(const NodePopulation& pop, const Dataset& ds, int query) {
  if (pop.mass() <= 0.0) throw Error(ErrorCode::InvalidArgument, "impurity_decrease: zero mass");
  const auto left = pop.restrict(ds, query, 0);
  const auto right = pop.restrict(ds, query, 1);
  return impurity(pop) - (left.mass() / pop.mass()) * impurity(left) -
         (right.mass() / pop.mass()) * impurity(right);
}

EquivalenceReport check_impurity_equivalence(const NodePopulation& pop, const Dataset& ds,
                                             std::span<const int> queries, double tolerance) {
  EquivalenceReport report;
  double best_cost = std::numeric_limits<double>::infinity();
  double best_gain = -std::numeric_limits<double>::infinity();
  for (int q : queries) {
    const auto s = split_stats(pop, ds, q, Objective::GroupId);
    const double gain = impurity_decrease(pop, ds, q);
    report.entries.push_back({q, gain, 1.0 - s.cost});
    report.max_abs_diff = std::max(report.max_abs_diff, std::abs(gain - (1.0 - s.cost)));
    best_cost = std::min(best_cost, s.cost);
    best_gain = std::max(best_gain, gain);
  }
  for (const auto& e : report.entries) {
    if (1.0 - e.one_minus_cost <= best_cost + tolerance) report.argmin_cost.push_back(e.query);
    if (e.impurity_decrease >= best_gain - tolerance) report.argmax_decrease.push_back(e.query);
  }
  report.holds = report.max_abs_diff <= tolerance && report.argmin_cost == report.argmax_decrease;
  return report;
}

}  // namespace gql
