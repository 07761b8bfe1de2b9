#include "gql/noise.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

namespace gql {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_binom(int n, int k) {
  if (k < 0 || k > n) return kNegInf;
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

// log of p^e (1-p)^(n-e), with 0 log 0 = 0.
double log_pattern(double p, int e, int n) {
  double v = 0.0;
  if (e > 0) v += e * std::log(p);
  if (n - e > 0) v += (n - e) * std::log1p(-p);
  return v;
}

double log_sum_exp(const std::vector<double>& xs) {
  double hi = kNegInf;
  for (double x : xs) hi = std::max(hi, x);
  if (hi == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - hi);
  return hi + std::log(s);
}

// log of the normalizer sum_{e <= eps'} C(N nu, e) p^e (1-p)^(N nu - e).
double log_normalizer(const NoiseSpec& spec) {
  const int n = spec.prone_count();
  std::vector<double> terms;
  for (int e = 0; e <= spec.epsilon_prime; ++e)
    terms.push_back(log_binom(n, e) + log_pattern(spec.effective_p(), e, n));
  return log_sum_exp(terms);
}

[[noreturn]] void invalid(const std::string& what) {
  throw Error(ErrorCode::InvalidArgument, what);
}

}  // namespace

ErrorBudget error_budget(const Dataset& ds) {
  const int m = ds.num_objects();
  if (m < 2) invalid("error budget needs at least two objects");
  const Eigen::MatrixXi b = ds.matrix.cast<int>();
  int delta = std::numeric_limits<int>::max();
  for (int i = 0; i < m; ++i)
    for (int k = i + 1; k < m; ++k)
      delta = std::min(delta, static_cast<int>((b.row(i) - b.row(k)).cwiseAbs().sum()));
  ErrorBudget budget;
  budget.delta = delta;
  budget.epsilon = delta >= 1 ? (delta - 1) / 2 : 0;
  if (delta == 0) budget.warning = "identical rows: no noise tolerance";
  return budget;
}

NoiseSpec NoiseSpec::make(const Dataset& ds, const NoiseBlock& block) {
  NoiseSpec spec;
  spec.num_queries = ds.num_queries();
  spec.error_prone = block.error_prone;
  std::sort(spec.error_prone.begin(), spec.error_prone.end());
  if (std::adjacent_find(spec.error_prone.begin(), spec.error_prone.end()) !=
      spec.error_prone.end())
    invalid("error-prone queries repeat");
  for (int q : spec.error_prone)
    if (q < 0 || q >= spec.num_queries) invalid("error-prone query out of range");
  if (block.model != 1 && block.model != 2) invalid("noise model must be 1 or 2");
  if (!(block.p >= 0.0 && block.p <= 0.5)) invalid("noise p must lie in [0, 0.5]");
  spec.model = block.model;
  spec.p = block.model == 1 ? 0.5 : block.p;
  if (ds.num_objects() >= 2) {
    const auto budget = error_budget(ds);
    spec.delta = budget.delta;
    spec.epsilon = budget.epsilon;
  }
  spec.epsilon_prime = std::min(spec.epsilon, spec.prone_count());
  if (block.epsilon_prime) {
    if (*block.epsilon_prime < 0 || *block.epsilon_prime > spec.epsilon_prime)
      invalid("epsilon_prime may only lower the budget (max " +
              std::to_string(spec.epsilon_prime) + ")");
    spec.epsilon_prime = *block.epsilon_prime;
  }
  return spec;
}

NoiseSpec NoiseSpec::from_dataset(const Dataset& ds) {
  return make(ds, ds.noise.value_or(NoiseBlock{}));
}

bool NoiseSpec::is_error_prone(int query) const {
  return std::binary_search(error_prone.begin(), error_prone.end(), query);
}

NoiseBlock NoiseSpec::block() const {
  NoiseBlock b;
  b.error_prone = error_prone;
  b.model = model;
  b.p = p;
  b.epsilon_prime = epsilon_prime;
  return b;
}

NoiseBlock random_noise_block(int num_queries, double nu, int model, double p,
                              std::mt19937_64& rng) {
  if (!(nu >= 0.0 && nu <= 1.0)) invalid("nu must lie in [0, 1]");
  std::vector<int> all(num_queries);
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(static_cast<std::size_t>(std::lround(nu * num_queries)));
  std::sort(all.begin(), all.end());
  NoiseBlock b;
  b.error_prone = std::move(all);
  b.model = model;
  b.p = p;
  return b;
}

std::vector<std::vector<int>> flip_sets(const NoiseSpec& spec) {
  std::vector<std::vector<int>> out;
  const int n = spec.prone_count();
  for (int e = 0; e <= spec.epsilon_prime; ++e) {
    // Lexicographic e-subsets of positions 0..n-1.
    std::vector<int> idx(e);
    std::iota(idx.begin(), idx.end(), 0);
    while (true) {
      std::vector<int> qs;
      for (int k : idx) qs.push_back(spec.error_prone[k]);
      out.push_back(std::move(qs));
      int k = e - 1;
      while (k >= 0 && idx[k] == n - e + k) --k;
      if (k < 0) break;
      ++idx[k];
      for (int j = k + 1; j < e; ++j) idx[j] = idx[j - 1] + 1;
    }
  }
  return out;
}

double corruption_share(const NoiseSpec& spec, int errors) {
  if (errors < 0 || errors > spec.epsilon_prime) return 0.0;
  return std::exp(log_pattern(spec.effective_p(), errors, spec.prone_count()) -
                  log_normalizer(spec));
}

Dilation dilate_explicit(const Dataset& ds, const NoiseSpec& spec, std::size_t cap) {
  double per_object = 0.0;
  for (int e = 0; e <= spec.epsilon_prime; ++e)
    per_object += std::exp(log_binom(spec.prone_count(), e));
  const double rows = std::round(per_object) * ds.num_objects();
  if (rows > static_cast<double>(cap))
    throw Error(ErrorCode::MaterializationCap,
                "dilation needs " + std::to_string(static_cast<long long>(rows)) +
                    " rows, above the cap of " + std::to_string(cap));

  const auto sets = flip_sets(spec);
  std::vector<double> share(spec.epsilon_prime + 1);
  for (int e = 0; e <= spec.epsilon_prime; ++e) share[e] = corruption_share(spec, e);

  Dilation d;
  Dataset& out = d.dataset;
  const int total = ds.num_objects() * static_cast<int>(sets.size());
  out.queries = ds.queries;
  out.matrix.resize(total, ds.num_queries());
  out.priors.resize(total);
  out.query_groups = ds.query_groups;
  out.selection_weights = ds.selection_weights;
  out.identification = Identification::Group;
  std::vector<int> groups;
  int row = 0;
  for (int i = 0; i < ds.num_objects(); ++i) {
    for (const auto& flips : sets) {
      out.matrix.row(row) = ds.matrix.row(i);
      std::string name = ds.objects[i];
      for (std::size_t k = 0; k < flips.size(); ++k) {
        out.matrix(row, flips[k]) ^= 1;
        name += (k == 0 ? "~" : "+") + ds.queries[flips[k]];
      }
      out.objects.push_back(std::move(name));
      out.priors[row] = ds.priors[i] * share[flips.size()];
      groups.push_back(i);
      d.source.push_back(i);
      d.errors.push_back(static_cast<int>(flips.size()));
      ++row;
    }
  }
  out.object_groups = std::move(groups);
  return d;
}

NoiseNode NoiseNode::root(const Dataset& ds, const NoiseSpec& spec) {
  NoiseNode node;
  node.mismatches.assign(ds.num_objects(), 0);
  node.unasked_prone = spec.prone_count();
  node.answered.assign(ds.num_queries(), false);
  return node;
}

std::vector<int> NoiseNode::survivors(const NoiseSpec& spec) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(mismatches.size()); ++i)
    if (mismatches[i] <= spec.epsilon_prime) out.push_back(i);
  return out;
}

NoiseNode NoiseNode::advance(const Dataset& ds, const NoiseSpec& spec, int query,
                             int response) const {
  if (query < 0 || query >= ds.num_queries()) invalid("unknown query");
  if (answered[query]) invalid("query '" + ds.queries[query] + "' already answered");
  if (response != 0 && response != 1) invalid("response must be 0 or 1");
  NoiseNode next = *this;
  next.answered[query] = true;
  const bool prone = spec.is_error_prone(query);
  if (prone) --next.unasked_prone;
  for (int i = 0; i < ds.num_objects(); ++i) {
    if (next.mismatches[i] == kEliminated) continue;
    if (ds.response(i, query) == response) continue;
    // A wrong answer to an error-free query rules the object out.
    next.mismatches[i] = prone ? next.mismatches[i] + 1 : kEliminated;
  }
  return next;
}

double implicit_group_mass(const Dataset& ds, const NoiseSpec& spec, int object, int mismatches,
                           int unasked_prone) {
  if (mismatches > spec.epsilon_prime || unasked_prone < 0) return 0.0;
  const int n = spec.prone_count();
  const int top = std::min(unasked_prone, spec.epsilon_prime - mismatches);
  std::vector<double> terms;
  for (int e = 0; e <= top; ++e)
    terms.push_back(log_binom(unasked_prone, e) +
                    log_pattern(spec.effective_p(), e + mismatches, n));
  return ds.priors[object] * std::exp(log_sum_exp(terms) - log_normalizer(spec));
}

namespace {

struct ChildMass {
  double left = 0.0, right = 0.0;
  bool left_nonempty = false, right_nonempty = false;
};

ChildMass child_masses(const Dataset& ds, const NoiseSpec& spec, const NoiseNode& node, int i,
                       int query) {
  ChildMass c;
  const int b = ds.response(i, query);
  const int d = node.mismatches[i];
  if (spec.is_error_prone(query)) {
    const int dl = d + b, dr = d + 1 - b;
    const int n = node.unasked_prone - 1;
    c.left = implicit_group_mass(ds, spec, i, dl, n);
    c.right = implicit_group_mass(ds, spec, i, dr, n);
    c.left_nonempty = dl <= spec.epsilon_prime;
    c.right_nonempty = dr <= spec.epsilon_prime;
  } else {
    const double w = implicit_group_mass(ds, spec, i, d, node.unasked_prone);
    (b ? c.right : c.left) = w;
    (b ? c.right_nonempty : c.left_nonempty) = true;
  }
  return c;
}

}  // namespace

SplitStats implicit_split_stats(const Dataset& ds, const NoiseSpec& spec, const NoiseNode& node,
                                int query, Objective objective) {
  if (query < 0 || query >= ds.num_queries()) invalid("unknown query");
  if (node.answered[query]) invalid("query '" + ds.queries[query] + "' already answered");
  SplitStats s;
  s.query = query;
  for (int i : node.survivors(spec)) {
    const auto c = child_masses(ds, spec, node, i, query);
    s.left_mass += c.left;
    s.right_mass += c.right;
    s.group_rhos.push_back({i, c.left + c.right, reduction_factor(c.left, c.right)});
  }
  s.rho = reduction_factor(s.left_mass, s.right_mass);
  s.cost = objective == Objective::ObjectId ? s.rho : group_cost(s);
  return s;
}

bool implicit_splits(const Dataset& ds, const NoiseSpec& spec, const NoiseNode& node, int query) {
  bool left = false, right = false;
  for (int i : node.survivors(spec)) {
    const auto c = child_masses(ds, spec, node, i, query);
    left |= c.left_nonempty;
    right |= c.right_nonempty;
    if (left && right) return true;
  }
  return false;
}

std::optional<int> choose_noisy(const Dataset& ds, const NoiseSpec& spec, const NoiseNode& node,
                                Strategy rule, TieBreaker& ties) {
  if (rule != Strategy::Gbs && rule != Strategy::Gisa)
    invalid(std::string("no noisy variant of ") + to_string(rule));
  const auto objective = rule == Strategy::Gbs ? Objective::ObjectId : Objective::GroupId;
  std::vector<std::pair<int, double>> costs;
  for (int q = 0; q < ds.num_queries(); ++q) {
    if (node.answered[q] || !implicit_splits(ds, spec, node, q)) continue;
    costs.emplace_back(q, implicit_split_stats(ds, spec, node, q, objective).cost);
  }
  if (costs.empty()) return std::nullopt;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : costs) best = std::min(best, c.second);
  std::vector<int> tied;
  for (const auto& c : costs)
    if (c.second <= best + kTieTolerance) tied.push_back(c.first);
  return tied[ties.pick(tied.size())];
}

namespace {

std::string describe(const Dataset& ds, const std::vector<int>& objects) {
  std::string s;
  for (int i : objects) s += (s.empty() ? "" : ", ") + ds.objects[i];
  return "{" + s + "}";
}

}  // namespace

NoisyTree build_noisy_tree(const Dataset& ds, const NoiseSpec& spec, Strategy rule,
                           const BuildConfig& cfg) {
  NoisyTree tree;
  TieBreaker ties(cfg.tie_break, cfg.seed);
  const int max_depth = cfg.max_depth.value_or(ds.num_queries());
  std::function<int(const NoiseNode&, int)> grow = [&](const NoiseNode& node, int depth) -> int {
    const auto alive = node.survivors(spec);
    double mass = 0.0;
    for (int i : alive)
      mass += implicit_group_mass(ds, spec, i, node.mismatches[i], node.unasked_prone);
    if (alive.size() <= 1) {
      tree.expected_queries += mass * depth;
      NoisyTree::Node leaf;
      leaf.outcome = alive.empty() ? -1 : alive.front();
      tree.nodes.push_back(leaf);
      return static_cast<int>(tree.nodes.size()) - 1;
    }
    if (depth >= max_depth)
      throw Error(ErrorCode::StuckNode, "depth guard reached at " + describe(ds, alive));
    const auto q = choose_noisy(ds, spec, node, rule, ties);
    if (!q)
      throw Error(ErrorCode::StuckNode, "no query separates the noisy candidates " +
                                            describe(ds, alive));
    const int left = grow(node.advance(ds, spec, *q, 0), depth + 1);
    const int right = grow(node.advance(ds, spec, *q, 1), depth + 1);
    NoisyTree::Node split;
    split.query = *q;
    split.child = {left, right};
    tree.nodes.push_back(split);
    return static_cast<int>(tree.nodes.size()) - 1;
  };
  tree.root = grow(NoiseNode::root(ds, spec), 0);
  return tree;
}

nlohmann::json export_noisy_tree(const NoisyTree& tree, const Dataset& ds) {
  std::function<nlohmann::json(int)> emit = [&](int id) -> nlohmann::json {
    const auto& n = tree.nodes.at(id);
    if (n.query < 0) {
      return {{"kind", "leaf"},
              {"outcome", n.outcome < 0 ? nlohmann::json(nullptr)
                                        : nlohmann::json(ds.objects[n.outcome])}};
    }
    return {{"kind", "split"},
            {"query", ds.queries[n.query]},
            {"children", {emit(n.child[0]), emit(n.child[1])}}};
  };
  return {{"expected_queries", tree.expected_queries}, {"root", emit(tree.root)}};
}

NoisyIdentification identify_with_noise(const Dataset& ds, const NoiseSpec& spec,
                                        const std::function<int(int)>& respond, Strategy rule,
                                        TieBreaker ties) {
  NoisyIdentification out;
  auto node = NoiseNode::root(ds, spec);
  auto history = [&] {
    std::string s;
    for (const auto& [q, r] : out.answers)
      s += (s.empty() ? "" : ", ") + ds.queries[q] + "=" + std::to_string(r);
    return "[" + s + "]";
  };
  while (true) {
    const auto alive = node.survivors(spec);
    if (alive.empty())
      throw Error(ErrorCode::InconsistentResponse,
                  "answers " + history() + " match no object within the error budget");
    if (alive.size() == 1) {
      out.object = alive.front();
      return out;
    }
    const auto q = choose_noisy(ds, spec, node, rule, ties);
    if (!q)
      throw Error(ErrorCode::StuckNode,
                  "no query separates " + describe(ds, alive) + " after " + history());
    const int r = respond(*q);
    out.answers.emplace_back(*q, r);
    node = node.advance(ds, spec, *q, r);
  }
}

std::vector<std::uint8_t> simulate_errors(const Dataset& ds, const NoiseSpec& spec, int object,
                                          std::mt19937_64& rng) {
  if (object < 0 || object >= ds.num_objects()) invalid("unknown object");
  std::vector<std::uint8_t> row(ds.num_queries());
  for (int q = 0; q < ds.num_queries(); ++q) row[q] = ds.response(object, q);
  if (spec.epsilon_prime == 0) return row;
  std::vector<double> weights;
  const int n = spec.prone_count();
  for (int e = 0; e <= spec.epsilon_prime; ++e)
    weights.push_back(std::exp(log_binom(n, e) + log_pattern(spec.effective_p(), e, n) -
                               log_normalizer(spec)));
  const int e = std::discrete_distribution<int>(weights.begin(), weights.end())(rng);
  auto positions = spec.error_prone;
  std::shuffle(positions.begin(), positions.end(), rng);
  for (int k = 0; k < e; ++k) row[positions[k]] ^= 1;
  return row;
}

std::vector<std::uint8_t> simulate_errors(const Dataset& ds, const NoiseSpec& spec, int object,
                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return simulate_errors(ds, spec, object, rng);
}

}  // namespace gql
