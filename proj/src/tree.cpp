#include "gql/tree.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <unordered_map>

namespace gql {

const char* to_string(TreeVariant v) {
  switch (v) {
    case TreeVariant::ObjectId: return "object-id";
    case TreeVariant::GroupId: return "group-id";
    case TreeVariant::ObjectIdGroupQueries: return "object-id-group-queries";
    case TreeVariant::GroupIdGroupQueries: return "group-id-group-queries";
  }
  return "?";
}

TreeVariant tree_variant_from_string(const std::string& s) {
  for (auto v : {TreeVariant::ObjectId, TreeVariant::GroupId, TreeVariant::ObjectIdGroupQueries,
                 TreeVariant::GroupIdGroupQueries}) {
    if (s == to_string(v)) return v;
  }
  throw Error(ErrorCode::Malformed, "unknown tree variant '" + s + "'");
}

Objective objective_of(TreeVariant v) {
  return v == TreeVariant::ObjectId || v == TreeVariant::ObjectIdGroupQueries
             ? Objective::ObjectId
             : Objective::GroupId;
}

bool uses_query_groups(TreeVariant v) {
  return v == TreeVariant::ObjectIdGroupQueries || v == TreeVariant::GroupIdGroupQueries;
}

namespace {

[[noreturn]] void mismatch(const std::string& what) {
  throw Error(ErrorCode::TreeMismatch, "tree/dataset mismatch: " + what);
}

// Target label of an object: itself for object-id trees, its group otherwise.
struct Labels {
  const Dataset& ds;
  Objective objective;

  int count() const {
    return objective == Objective::ObjectId ? ds.num_objects() : ds.num_object_groups();
  }
  int of(int object) const {
    return objective == Objective::ObjectId ? object : (*ds.object_groups)[object];
  }
};

Labels labels_for(const DecisionTree& tree, const Dataset& ds) {
  const auto obj = objective_of(tree.variant);
  if (obj == Objective::GroupId && !ds.object_groups)
    mismatch("group-id tree on a dataset without object groups");
  return {ds, obj};
}

void check_indices(const DecisionTree& tree, const Dataset& ds) {
  if (tree.root < 0 || tree.root >= static_cast<int>(tree.nodes.size())) mismatch("bad root");
  const int n_nodes = static_cast<int>(tree.nodes.size());
  auto child_ok = [&](int c) { return c >= 0 && c < n_nodes; };
  for (const auto& node : tree.nodes) {
    if (const auto* leaf = std::get_if<Leaf>(&node)) {
      for (int i : leaf->objects) {
        if (i < 0 || i >= ds.num_objects()) mismatch("leaf references unknown object");
      }
    } else if (const auto* split = std::get_if<SplitNode>(&node)) {
      if (split->query < 0 || split->query >= ds.num_queries()) mismatch("unknown query");
      if (!child_ok(split->child[0]) || !child_ok(split->child[1])) mismatch("bad child index");
    } else {
      const auto& group = std::get<GroupNode>(node);
      if (group.branches.empty()) mismatch("query-group node without branches");
      for (const auto& b : group.branches) {
        if (b.query < 0 || b.query >= ds.num_queries()) mismatch("unknown query");
        if (!child_ok(b.child[0]) || !child_ok(b.child[1])) mismatch("bad child index");
      }
    }
  }
  const bool grouped = uses_query_groups(tree.variant);
  for (const auto& node : tree.nodes) {
    if (grouped && std::holds_alternative<SplitNode>(node))
      mismatch("single-query node in a query-group tree");
    if (!grouped && std::holds_alternative<GroupNode>(node))
      mismatch("query-group node in a single-query tree");
  }
}

double mass_of(const Dataset& ds, const std::vector<int>& objects) {
  double m = 0.0;
  for (int i : objects) m += ds.priors[i];
  return m;
}

std::vector<double> label_masses(const Labels& labels, const std::vector<int>& objects) {
  std::vector<double> m(labels.count(), 0.0);
  for (int i : objects) m[labels.of(i)] += labels.ds.priors[i];
  return m;
}

// Weighted group term of a split: sum_i (pi_i / pi) H(rho_i), from the
// label masses of the two children.
double group_term(const std::vector<double>& left, const std::vector<double>& right,
                  double total) {
  if (total <= 0.0) return 0.0;
  double s = 0.0;
  for (std::size_t g = 0; g < left.size(); ++g) {
    const double gm = left[g] + right[g];
    if (gm > 0.0) s += (gm / total) * binary_entropy(reduction_factor(left[g], right[g]));
  }
  return s;
}

}  // namespace

std::vector<std::vector<int>> node_objects(const DecisionTree& tree) {
  const int n = static_cast<int>(tree.nodes.size());
  std::vector<std::vector<int>> sets(n);
  std::vector<char> done(n, 0);
  std::function<const std::vector<int>&(int)> visit = [&](int id) -> const std::vector<int>& {
    if (done[id]) return sets[id];
    const auto& node = tree.nodes[id];
    std::vector<int> out;
    if (const auto* leaf = std::get_if<Leaf>(&node)) {
      out = leaf->objects;
    } else if (const auto* split = std::get_if<SplitNode>(&node)) {
      const auto& a = visit(split->child[0]);
      const auto& b = visit(split->child[1]);
      out = a;
      out.insert(out.end(), b.begin(), b.end());
    } else {
      // Every branch covers the same objects; visit all so each child is filled.
      bool first = true;
      for (const auto& b : std::get<GroupNode>(node).branches) {
        const auto& l = visit(b.child[0]);
        const auto& r = visit(b.child[1]);
        if (!first) continue;
        first = false;
        out = l;
        out.insert(out.end(), r.begin(), r.end());
      }
    }
    std::sort(out.begin(), out.end());
    sets[id] = std::move(out);
    done[id] = 1;
    return sets[id];
  };
  if (tree.root >= 0) visit(tree.root);
  return sets;
}

int majority_group(const Dataset& ds, const std::vector<int>& objects) {
  if (objects.empty()) return -1;
  std::vector<double> m(ds.object_groups ? ds.num_object_groups() : ds.num_objects(), -1.0);
  for (int i : objects) m[ds.group_of(i)] = std::max(m[ds.group_of(i)], 0.0) + ds.priors[i];
  return static_cast<int>(std::max_element(m.begin(), m.end()) - m.begin());
}

double target_entropy(const Dataset& ds, TreeVariant variant) {
  if (objective_of(variant) == Objective::ObjectId) {
    return entropy_of_masses({ds.priors.data(), static_cast<std::size_t>(ds.priors.size())});
  }
  if (!ds.object_groups) mismatch("group entropy needs object groups");
  std::vector<double> m(ds.num_object_groups(), 0.0);
  for (int i = 0; i < ds.num_objects(); ++i) m[(*ds.object_groups)[i]] += ds.priors[i];
  return entropy_of_masses(m);
}

double evaluate_by_traversal(const DecisionTree& tree, const Dataset& ds) {
  check_indices(tree, ds);
  // Per node: (reach-weighted mass below, reach-weighted mass x depth below),
  // both relative to the node.
  const int n = static_cast<int>(tree.nodes.size());
  std::vector<std::pair<double, double>> memo(n);
  std::vector<char> state(n, 0);
  std::function<std::pair<double, double>(int)> visit = [&](int id) {
    if (state[id] == 2) return memo[id];
    if (state[id] == 1) mismatch("cycle in tree");
    state[id] = 1;
    double weight = 0.0, depth = 0.0;
    const auto& node = tree.nodes[id];
    if (const auto* leaf = std::get_if<Leaf>(&node)) {
      weight = mass_of(ds, leaf->objects);
    } else if (const auto* split = std::get_if<SplitNode>(&node)) {
      for (int c : split->child) {
        const auto [w, d] = visit(c);
        weight += w;
        depth += d + w;
      }
    } else {
      for (const auto& b : std::get<GroupNode>(node).branches) {
        for (int c : b.child) {
          const auto [w, d] = visit(c);
          weight += b.probability * w;
          depth += b.probability * (d + w);
        }
      }
    }
    state[id] = 2;
    memo[id] = {weight, depth};
    return memo[id];
  };
  return visit(tree.root).second;
}

TreeEvaluation evaluate_by_formula(const DecisionTree& tree, const Dataset& ds) {
  check_indices(tree, ds);
  const auto labels = labels_for(tree, ds);
  const auto sets = node_objects(tree);

  TreeEvaluation ev;
  ev.entropy_bound = target_entropy(ds, tree.variant);
  ev.by_traversal = evaluate_by_traversal(tree, ds);

  // Sum over internal nodes of reach x mass x term, relative to each node.
  const int n = static_cast<int>(tree.nodes.size());
  std::vector<double> memo(n, 0.0);
  std::vector<char> done(n, 0);
  std::function<double(int)> visit = [&](int id) -> double {
    if (done[id]) return memo[id];
    const auto& node = tree.nodes[id];
    double total = 0.0;
    if (std::holds_alternative<Leaf>(node)) {
      ++ev.leaves;
    } else if (const auto* split = std::get_if<SplitNode>(&node)) {
      ++ev.internal_nodes;
      const auto& l = sets[split->child[0]];
      const auto& r = sets[split->child[1]];
      const double lm = mass_of(ds, l), rm = mass_of(ds, r);
      const double rho = reduction_factor(lm, rm);
      ev.overall_rho = std::max(ev.overall_rho, rho);
      const double term = 1.0 - binary_entropy(rho) +
                          group_term(label_masses(labels, l), label_masses(labels, r), lm + rm);
      total = (lm + rm) * term + visit(split->child[0]) + visit(split->child[1]);
    } else {
      ++ev.internal_nodes;
      const auto& group = std::get<GroupNode>(node);
      double benefit = 0.0, below = 0.0, node_mass = 0.0;
      for (const auto& b : group.branches) {
        const auto& l = sets[b.child[0]];
        const auto& r = sets[b.child[1]];
        const double lm = mass_of(ds, l), rm = mass_of(ds, r);
        node_mass = lm + rm;
        const double rho = reduction_factor(lm, rm);
        ev.overall_rho = std::max(ev.overall_rho, rho);
        benefit += b.probability *
                   (binary_entropy(rho) -
                    group_term(label_masses(labels, l), label_masses(labels, r), lm + rm));
        below += b.probability * (visit(b.child[0]) + visit(b.child[1]));
      }
      total = node_mass * (1.0 - benefit) + below;
    }
    done[id] = 1;
    memo[id] = total;
    return total;
  };
  ev.by_formula = ev.entropy_bound + visit(tree.root);
  ev.expected_queries = ev.by_formula;
  if (tree.variant == TreeVariant::ObjectId) {
    const double h = binary_entropy(ev.overall_rho);
    ev.corollary_bound = h > 0.0 ? ev.entropy_bound / h : std::numeric_limits<double>::infinity();
  }
  return ev;
}

ImpureLeafCheck impure_leaf_depth_check(const DecisionTree& tree, const Dataset& ds,
                                        double tolerance) {
  if (tree.variant != TreeVariant::GroupId) mismatch("impure-leaf check needs a group-id tree");
  ImpureLeafCheck check;
  const auto labels = labels_for(tree, ds);
  const auto ev = evaluate_by_formula(tree, ds);
  double leaf_impurity = 0.0;
  const auto sets = node_objects(tree);
  for (int id = 0; id < static_cast<int>(tree.nodes.size()); ++id) {
    if (!tree.is_leaf(id)) continue;
    const auto masses = label_masses(labels, sets[id]);
    leaf_impurity += mass_of(ds, sets[id]) * entropy_of_masses(masses);
  }
  check.lhs = ev.by_traversal;
  check.rhs = ev.by_formula - leaf_impurity;
  check.holds = std::abs(check.lhs - check.rhs) <= tolerance;
  return check;
}

void validate_tree(const DecisionTree& tree, const Dataset& ds, bool allow_impure) {
  check_indices(tree, ds);
  const auto labels = labels_for(tree, ds);
  const auto sets = node_objects(tree);

  {
    std::vector<int> all(ds.num_objects());
    for (int i = 0; i < ds.num_objects(); ++i) all[i] = i;
    if (sets[tree.root] != all) mismatch("root does not cover every object exactly once");
  }
  if (uses_query_groups(tree.variant) && !ds.query_groups)
    mismatch("query-group tree on a dataset without query groups");

  const int n = static_cast<int>(tree.nodes.size());
  const int nq = ds.num_queries();
  // Queries used anywhere below each node, to detect repeats along paths.
  std::vector<std::vector<char>> used(n);
  std::vector<char> done(n, 0);
  std::function<const std::vector<char>&(int)> visit = [&](int id) -> const std::vector<char>& {
    if (done[id]) return used[id];
    std::vector<char> u(nq, 0);
    auto merge = [&](const std::vector<char>& other) {
      for (int q = 0; q < nq; ++q) u[q] |= other[q];
    };
    auto check_split = [&](int query, const std::array<int, 2>& child) {
      for (int r = 0; r < 2; ++r) {
        for (int i : sets[child[r]]) {
          if (ds.response(i, query) != r)
            mismatch("object '" + ds.objects[i] + "' routed against its response to '" +
                     ds.queries[query] + "'");
        }
        const auto& below = visit(child[r]);
        if (below[query]) mismatch("query '" + ds.queries[query] + "' repeats along a path");
        merge(below);
      }
      u[query] = 1;
    };
    const auto& node = tree.nodes[id];
    if (const auto* leaf = std::get_if<Leaf>(&node)) {
      if (leaf->objects.empty()) {
        if (leaf->outcome != -1) mismatch("empty leaf with an outcome");
      } else if (labels.objective == Objective::ObjectId) {
        if (leaf->objects.size() != 1 && !allow_impure) mismatch("object leaf is not a singleton");
        if (leaf->objects.size() == 1 && leaf->outcome != leaf->objects.front())
          mismatch("leaf outcome does not match its object");
      } else {
        const int g = labels.of(leaf->objects.front());
        const bool pure = std::all_of(leaf->objects.begin(), leaf->objects.end(),
                                      [&](int i) { return labels.of(i) == g; });
        if (!pure && !allow_impure) mismatch("group leaf holds several groups");
        if (leaf->outcome != majority_group(ds, leaf->objects))
          mismatch("leaf outcome is not the leaf's group");
      }
    } else if (const auto* split = std::get_if<SplitNode>(&node)) {
      check_split(split->query, split->child);
    } else {
      const auto& group = std::get<GroupNode>(node);
      double total = 0.0;
      for (const auto& b : group.branches) {
        if ((*ds.query_groups)[b.query] != group.query_group)
          mismatch("branch query '" + ds.queries[b.query] + "' outside its node's group");
        std::vector<int> merged = sets[b.child[0]];
        merged.insert(merged.end(), sets[b.child[1]].begin(), sets[b.child[1]].end());
        std::sort(merged.begin(), merged.end());
        if (merged != sets[id]) mismatch("branches of a query-group node disagree on objects");
        check_split(b.query, b.child);
        total += b.probability;
      }
      if (std::abs(total - 1.0) > 1e-9) mismatch("branch probabilities do not sum to 1");
    }
    used[id] = std::move(u);
    done[id] = 1;
    return used[id];
  };
  visit(tree.root);
}

std::optional<DecisionTree> as_single_query_tree(const DecisionTree& tree) {
  DecisionTree out = tree;
  if (tree.variant == TreeVariant::ObjectIdGroupQueries) out.variant = TreeVariant::ObjectId;
  else if (tree.variant == TreeVariant::GroupIdGroupQueries) out.variant = TreeVariant::GroupId;
  for (auto& node : out.nodes) {
    if (const auto* group = std::get_if<GroupNode>(&node)) {
      if (group->branches.size() != 1) return std::nullopt;
      const Branch b = group->branches.front();
      node = SplitNode{b.query, b.child};
    }
  }
  return out;
}

nlohmann::json export_tree(const DecisionTree& tree, const Dataset& ds) {
  check_indices(tree, ds);
  const bool object_outcomes = objective_of(tree.variant) == Objective::ObjectId;
  std::function<nlohmann::json(int)> emit = [&](int id) -> nlohmann::json {
    const auto& node = tree.nodes[id];
    nlohmann::json j;
    if (const auto* leaf = std::get_if<Leaf>(&node)) {
      j["kind"] = "leaf";
      if (leaf->outcome < 0) j["outcome"] = nullptr;
      else if (object_outcomes) j["outcome"] = ds.objects[leaf->outcome];
      else j["outcome"] = leaf->outcome + 1;
      std::vector<std::string> ids;
      for (int i : leaf->objects) ids.push_back(ds.objects[i]);
      j["objects"] = ids;
    } else if (const auto* split = std::get_if<SplitNode>(&node)) {
      j["kind"] = "split";
      j["query"] = ds.queries[split->query];
      j["children"] = {emit(split->child[0]), emit(split->child[1])};
    } else {
      const auto& group = std::get<GroupNode>(node);
      j["kind"] = "group";
      j["query_group"] = group.query_group + 1;
      auto branches = nlohmann::json::array();
      for (const auto& b : group.branches) {
        branches.push_back({{"query", ds.queries[b.query]},
                            {"p", b.probability},
                            {"children", {emit(b.child[0]), emit(b.child[1])}}});
      }
      j["branches"] = std::move(branches);
    }
    return j;
  };
  return {{"variant", to_string(tree.variant)}, {"root", emit(tree.root)}};
}

DecisionTree import_tree(const nlohmann::json& doc, const Dataset& ds) {
  DecisionTree tree;
  auto query_of = [&](const nlohmann::json& j) {
    const auto id = j.at("query").get<std::string>();
    auto it = std::find(ds.queries.begin(), ds.queries.end(), id);
    if (it == ds.queries.end()) mismatch("unknown query id '" + id + "'");
    return static_cast<int>(it - ds.queries.begin());
  };
  std::function<int(const nlohmann::json&)> parse = [&](const nlohmann::json& j) -> int {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "leaf") {
      Leaf leaf;
      for (const auto& id : j.at("objects").get<std::vector<std::string>>()) {
        auto it = std::find(ds.objects.begin(), ds.objects.end(), id);
        if (it == ds.objects.end()) mismatch("unknown object id '" + id + "'");
        leaf.objects.push_back(static_cast<int>(it - ds.objects.begin()));
      }
      std::sort(leaf.objects.begin(), leaf.objects.end());
      const auto& out = j.at("outcome");
      if (out.is_null()) leaf.outcome = -1;
      else if (out.is_string()) leaf.outcome = ds.object_index(out.get<std::string>());
      else leaf.outcome = out.get<int>() - 1;
      return tree.add(std::move(leaf));
    }
    const auto& children = [&](const nlohmann::json& c) {
      if (!c.is_array() || c.size() != 2) throw Error(ErrorCode::Malformed, "children must be a pair");
      return std::array<int, 2>{parse(c[0]), parse(c[1])};
    };
    if (kind == "split") {
      SplitNode split;
      split.query = query_of(j);
      split.child = children(j.at("children"));
      return tree.add(split);
    }
    if (kind == "group") {
      GroupNode group;
      group.query_group = j.at("query_group").get<int>() - 1;
      for (const auto& bj : j.at("branches")) {
        Branch b;
        b.query = query_of(bj);
        b.probability = bj.at("p").get<double>();
        b.child = children(bj.at("children"));
        group.branches.push_back(b);
      }
      return tree.add(std::move(group));
    }
    throw Error(ErrorCode::Malformed, "unknown node kind '" + kind + "'");
  };
  try {
    tree.variant = tree_variant_from_string(doc.at("variant").get<std::string>());
    tree.root = parse(doc.at("root"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Malformed, std::string("malformed tree document: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::NotFound) mismatch(e.what());
    throw;
  }
  validate_tree(tree, ds, /*allow_impure=*/true);
  return tree;
}

nlohmann::json to_json(const TreeEvaluation& ev) {
  nlohmann::json j{{"expected_queries", ev.expected_queries},
                   {"by_traversal", ev.by_traversal},
                   {"by_formula", ev.by_formula},
                   {"entropy_bound", ev.entropy_bound},
                   {"overall_rho", ev.overall_rho},
                   {"internal_nodes", ev.internal_nodes},
                   {"leaves", ev.leaves}};
  j["corollary_bound"] = ev.corollary_bound ? nlohmann::json(*ev.corollary_bound) : nlohmann::json();
  return j;
}

}  // namespace gql
