#include "gql/builders.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace gql {

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::Gbs: return "gbs";
    case Strategy::Gisa: return "gisa";
    case Strategy::Gqsa: return "gqsa";
    case Strategy::Gigqsa: return "gigqsa";
    case Strategy::MinMin: return "min-min";
    case Strategy::MinMax: return "min-max";
    case Strategy::RandomSearch: return "random";
  }
  return "?";
}

Strategy strategy_from_string(const std::string& s) {
  for (auto v : {Strategy::Gbs, Strategy::Gisa, Strategy::Gqsa, Strategy::Gigqsa,
                 Strategy::MinMin, Strategy::MinMax, Strategy::RandomSearch}) {
    if (s == to_string(v)) return v;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown strategy '" + s + "'");
}

bool suggests_query_groups(Strategy s) {
  return s != Strategy::Gbs && s != Strategy::Gisa;
}

Objective default_objective(Strategy s) {
  return s == Strategy::Gisa || s == Strategy::Gigqsa ? Objective::GroupId : Objective::ObjectId;
}

std::size_t TieBreaker::pick(std::size_t tied) {
  if (mode_ == TieBreak::LowestIndex || tied <= 1) return 0;
  return std::uniform_int_distribution<std::size_t>(0, tied - 1)(rng_);
}

bool resolved(const NodePopulation& pop, Objective objective) {
  return objective == Objective::ObjectId ? pop.members().size() <= 1 : pop.group_pure();
}

namespace {

struct GroupScore {
  std::vector<std::pair<int, double>> members;
  double cost;
  bool informative;
};

// Cost of offering one set of queries with selection distribution `members`.
GroupScore score_group(const Dataset& ds, const NodePopulation& pop,
                       std::vector<std::pair<int, double>> members, Strategy strategy) {
  GroupScore g{std::move(members), 0.0, false};
  double benefit = 0.0;
  double extreme = strategy == Strategy::MinMin ? std::numeric_limits<double>::infinity()
                                                : -std::numeric_limits<double>::infinity();
  for (const auto& [q, p] : g.members) {
    const bool constant = pop.constant_on(ds, q);
    g.informative |= !constant;
    const auto s = split_stats(pop, ds, q, Objective::GroupId);
    switch (strategy) {
      case Strategy::Gqsa:
        benefit += p * binary_entropy(s.rho);
        break;
      case Strategy::Gigqsa:
        benefit += p * (binary_entropy(s.rho) - s.weighted_group_entropy());
        break;
      case Strategy::MinMin:
        extreme = std::min(extreme, p * s.rho);
        break;
      case Strategy::MinMax:
        extreme = std::max(extreme, p * s.rho);
        break;
      default:
        break;
    }
  }
  if (strategy == Strategy::MinMin || strategy == Strategy::MinMax) g.cost = extreme;
  else g.cost = 1.0 - benefit;
  return g;
}

std::vector<std::pair<int, double>> all_unanswered_uniform(const QueryMask& answered) {
  std::vector<std::pair<int, double>> out;
  for (int q = 0; q < static_cast<int>(answered.size()); ++q) {
    if (!answered[q]) out.emplace_back(q, 0.0);
  }
  for (auto& e : out) e.second = 1.0 / static_cast<double>(out.size());
  return out;
}

struct Scored {
  std::vector<CandidateCost> costs;
  std::vector<std::vector<std::pair<int, double>>> members;  // group rules only
};

Scored score_candidates(const Dataset& ds, const NodePopulation& pop, const QueryMask& answered,
                        Strategy strategy) {
  Scored out;
  if (!suggests_query_groups(strategy)) {
    const auto objective = strategy == Strategy::Gbs ? Objective::ObjectId : Objective::GroupId;
    for (int q = 0; q < ds.num_queries(); ++q) {
      if (answered[q] || pop.constant_on(ds, q)) continue;
      out.costs.push_back({q, split_stats(pop, ds, q, objective).cost});
    }
    return out;
  }
  if (strategy == Strategy::RandomSearch) {
    auto members = all_unanswered_uniform(answered);
    if (members.empty()) return out;
    auto g = score_group(ds, pop, std::move(members), Strategy::Gqsa);
    if (g.informative) {
      out.costs.push_back({-1, 0.0});
      out.members.push_back(std::move(g.members));
    }
    return out;
  }
  for (int j = 0; j < ds.num_query_groups(); ++j) {
    std::vector<std::pair<int, double>> members;
    try {
      members = selection_probabilities(ds, j, answered);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::GroupExhausted) continue;
      throw;
    }
    auto g = score_group(ds, pop, std::move(members), strategy);
    if (!g.informative) continue;
    out.costs.push_back({j, g.cost});
    out.members.push_back(std::move(g.members));
  }
  return out;
}

std::string describe_node(const Dataset& ds, const NodePopulation& pop, int depth) {
  std::ostringstream os;
  os << "node at depth " << depth << " with " << pop.members().size() << " objects {";
  const std::size_t shown = std::min<std::size_t>(pop.members().size(), 8);
  for (std::size_t k = 0; k < shown; ++k) os << (k ? ", " : "") << ds.objects[pop.members()[k]];
  if (shown < pop.members().size()) os << ", ...";
  os << "}";
  return os.str();
}

}  // namespace

std::vector<CandidateCost> candidate_costs(const Dataset& ds, const NodePopulation& pop,
                                           const QueryMask& answered, Strategy strategy) {
  return score_candidates(ds, pop, answered, strategy).costs;
}

std::optional<Choice> choose(const Dataset& ds, const NodePopulation& pop,
                             const QueryMask& answered, Strategy strategy, TieBreaker& ties) {
  auto scored = score_candidates(ds, pop, answered, strategy);
  if (scored.costs.empty()) return std::nullopt;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : scored.costs) best = std::min(best, c.cost);
  std::vector<std::size_t> tied;
  for (std::size_t k = 0; k < scored.costs.size(); ++k) {
    if (scored.costs[k].cost <= best + kTieTolerance) tied.push_back(k);
  }
  const std::size_t k = tied[ties.pick(tied.size())];
  Choice c;
  c.cost = scored.costs[k].cost;
  if (suggests_query_groups(strategy)) {
    c.is_group = true;
    c.query_group = scored.costs[k].index;
    c.members = std::move(scored.members[k]);
  } else {
    c.query = scored.costs[k].index;
  }
  return c;
}

void require_compatible(const Dataset& ds, Strategy strategy, Objective objective) {
  if (strategy == Strategy::Gisa || strategy == Strategy::Gigqsa || objective == Objective::GroupId) {
    if (!ds.object_groups)
      throw Error(ErrorCode::InvalidArgument,
                  std::string(to_string(strategy)) + " with group identification needs object groups");
  }
  if (suggests_query_groups(strategy) && strategy != Strategy::RandomSearch && !ds.query_groups) {
    throw Error(ErrorCode::InvalidArgument,
                std::string(to_string(strategy)) + " needs query groups");
  }
  validate(ds, objective == Objective::ObjectId ? Identification::Object : Identification::Group);
}

namespace {

class Builder {
 public:
  Builder(const Dataset& ds, Strategy strategy, const BuildConfig& cfg)
      : ds_(ds), strategy_(strategy),
        objective_(cfg.objective.value_or(default_objective(strategy))),
        ties_(cfg.tie_break, cfg.seed), max_depth_(cfg.max_depth.value_or(ds.num_queries())) {
    tree_.variant = suggests_query_groups(strategy)
                        ? (objective_ == Objective::ObjectId ? TreeVariant::ObjectIdGroupQueries
                                                             : TreeVariant::GroupIdGroupQueries)
                        : (objective_ == Objective::ObjectId ? TreeVariant::ObjectId
                                                             : TreeVariant::GroupId);
  }

  DecisionTree run() {
    require_compatible(ds_, strategy_, objective_);
    QueryMask answered(ds_.num_queries(), false);
    tree_.root = grow(NodePopulation::root(ds_), answered, 0);
    return std::move(tree_);
  }

 private:
  int leaf(const NodePopulation& pop) {
    Leaf l;
    l.objects = pop.members();
    if (!pop.empty()) {
      l.outcome = objective_ == Objective::ObjectId ? pop.members().front()
                                                    : majority_group(ds_, pop.members());
    }
    return tree_.add(std::move(l));
  }

  std::string state_key(const NodePopulation& pop, const QueryMask& answered) const {
    std::string key;
    key.reserve(pop.members().size() * sizeof(int) + answered.size());
    for (int i : pop.members()) key.append(reinterpret_cast<const char*>(&i), sizeof(int));
    key.push_back('|');
    for (bool a : answered) key.push_back(a ? '1' : '0');
    return key;
  }

  int grow(const NodePopulation& pop, QueryMask& answered, int depth) {
    if (resolved(pop, objective_)) return leaf(pop);
    // Query-group trees revisit states through different answer orders.
    std::string key;
    if (tree_.variant == TreeVariant::ObjectIdGroupQueries ||
        tree_.variant == TreeVariant::GroupIdGroupQueries) {
      key = state_key(pop, answered);
      if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    }
    if (depth >= max_depth_) {
      throw Error(ErrorCode::StuckNode, "depth guard reached at " + describe_node(ds_, pop, depth));
    }
    auto choice = choose(ds_, pop, answered, strategy_, ties_);
    if (!choice) {
      throw Error(suggests_query_groups(strategy_) ? ErrorCode::GroupExhausted : ErrorCode::StuckNode,
                  "no informative query remains at " + describe_node(ds_, pop, depth));
    }
    int id;
    if (!choice->is_group) {
      SplitNode split;
      split.query = choice->query;
      answered[split.query] = true;
      for (int r = 0; r < 2; ++r) {
        split.child[r] = grow(pop.restrict(ds_, split.query, r), answered, depth + 1);
      }
      answered[split.query] = false;
      id = tree_.add(split);
    } else {
      GroupNode group;
      group.query_group = choice->query_group;
      for (const auto& [q, p] : choice->members) {
        Branch b;
        b.query = q;
        b.probability = p;
        answered[q] = true;
        for (int r = 0; r < 2; ++r) b.child[r] = grow(pop.restrict(ds_, q, r), answered, depth + 1);
        answered[q] = false;
        group.branches.push_back(b);
      }
      id = tree_.add(std::move(group));
    }
    if (!key.empty()) memo_.emplace(std::move(key), id);
    return id;
  }

  const Dataset& ds_;
  Strategy strategy_;
  Objective objective_;
  TieBreaker ties_;
  int max_depth_;
  DecisionTree tree_;
  std::unordered_map<std::string, int> memo_;
};

}  // namespace

DecisionTree build_tree(const Dataset& ds, Strategy strategy, const BuildConfig& cfg) {
  if (strategy == Strategy::RandomSearch) {
    throw Error(ErrorCode::InvalidArgument,
                "random search has no query groups of its own; build gqsa on "
                "as_single_query_group(ds) instead");
  }
  return Builder(ds, strategy, cfg).run();
}

DecisionTree build_gbs(const Dataset& ds, const BuildConfig& cfg) {
  return build_tree(ds, Strategy::Gbs, cfg);
}

DecisionTree build_gisa(const Dataset& ds, const BuildConfig& cfg) {
  if (cfg.objective == Objective::ObjectId)
    throw Error(ErrorCode::InvalidArgument, "gisa identifies groups");
  return build_tree(ds, Strategy::Gisa, cfg);
}

DecisionTree build_gqsa(const Dataset& ds, const BuildConfig& cfg) {
  return build_tree(ds, Strategy::Gqsa, cfg);
}

DecisionTree build_gigqsa(const Dataset& ds, const BuildConfig& cfg) {
  if (cfg.objective == Objective::ObjectId)
    throw Error(ErrorCode::InvalidArgument, "gigqsa identifies groups");
  return build_tree(ds, Strategy::Gigqsa, cfg);
}

std::optional<std::string> audit_greedy(const DecisionTree& tree, const Dataset& ds,
                                        Strategy strategy) {
  std::vector<char> seen(tree.nodes.size(), 0);
  QueryMask answered(ds.num_queries(), false);
  const auto sets = node_objects(tree);
  std::optional<std::string> failure;

  std::function<void(int)> visit = [&](int id) {
    if (failure || seen[id]) return;
    seen[id] = 1;
    const auto& node = tree.nodes[id];
    if (std::holds_alternative<Leaf>(node)) return;
    const NodePopulation pop(ds, sets[id]);
    const auto costs = candidate_costs(ds, pop, answered, strategy);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& c : costs) best = std::min(best, c.cost);
    const int chosen = std::holds_alternative<SplitNode>(node)
                           ? std::get<SplitNode>(node).query
                           : std::get<GroupNode>(node).query_group;
    auto it = std::find_if(costs.begin(), costs.end(),
                           [&](const CandidateCost& c) { return c.index == chosen; });
    if (it == costs.end()) {
      failure = "node " + std::to_string(id) + " chose an inadmissible candidate";
      return;
    }
    if (it->cost > best + kTieTolerance) {
      failure = "node " + std::to_string(id) + " chose cost " + std::to_string(it->cost) +
                " while " + std::to_string(best) + " was available";
      return;
    }
    auto descend = [&](int q, const std::array<int, 2>& child) {
      answered[q] = true;
      visit(child[0]);
      visit(child[1]);
      answered[q] = false;
    };
    if (const auto* split = std::get_if<SplitNode>(&node)) {
      descend(split->query, split->child);
    } else {
      for (const auto& b : std::get<GroupNode>(node).branches) descend(b.query, b.child);
    }
  };
  visit(tree.root);
  return failure;
}

Dataset as_single_query_group(const Dataset& ds) {
  Dataset out = ds;
  out.query_groups = std::vector<int>(ds.num_queries(), 0);
  out.selection_weights.reset();
  return out;
}

}  // namespace gql
