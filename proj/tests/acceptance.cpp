// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: gql_acceptance [criterion ...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "gql/builders.hpp"
#include "gql/noise.hpp"
#include "gql/sweep.hpp"
#include "gql/tree.hpp"
#include "noise_oracle.hpp"
#include "random_instances.hpp"

using namespace gql;
using namespace gql::testing;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects the first few failures of a criterion.
struct Failures {
  int count = 0;
  std::string first;
  void add(const std::string& what) {
    if (count++ == 0) first = what;
  }
  bool any() const { return count > 0; }
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

nlohmann::json read_json(const std::string& name) {
  std::ifstream in(data_path(name));
  return nlohmann::json::parse(in);
}

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

Dataset with_singleton_groups(Dataset ds) {
  std::vector<int> g(ds.num_objects());
  for (int i = 0; i < ds.num_objects(); ++i) g[i] = i;
  ds.object_groups = g;
  return ds;
}

Dataset with_singleton_query_groups(Dataset ds) {
  std::vector<int> g(ds.num_queries());
  for (int j = 0; j < ds.num_queries(); ++j) g[j] = j;
  ds.query_groups = g;
  ds.selection_weights.reset();
  return ds;
}

// Group outcomes (1-based labels) rewritten as object names, valid when
// group k is exactly object k.
nlohmann::json groups_as_objects(nlohmann::json node, const Dataset& ds) {
  if (node.contains("outcome") && node["outcome"].is_number_integer())
    node["outcome"] = ds.objects.at(node["outcome"].get<int>() - 1);
  if (node.contains("children"))
    for (auto& c : node["children"]) c = groups_as_objects(c, ds);
  if (node.contains("branches"))
    for (auto& b : node["branches"])
      for (auto& c : b["children"]) c = groups_as_objects(c, ds);
  return node;
}

// ---------------------------------------------------------------------------

Outcome toy_example_1() {
  Failures f;
  const auto ds = toy1();
  const auto gisa = build_gisa(ds);
  const auto* root = std::get_if<SplitNode>(&gisa.node(gisa.root));
  if (!root || root->query != 1 || !gisa.is_leaf(root->child[0]) || !gisa.is_leaf(root->child[1]))
    f.add("GISA tree is not the single q2 split");
  const double e_gisa = evaluate_by_traversal(gisa, ds);
  if (e_gisa != 1.0) f.add(fmt("GISA E[K] = %.17g", e_gisa));

  const auto gbs = build_gbs(ds);
  const auto ev_gbs = evaluate_by_formula(gbs, ds);
  if (!near(ev_gbs.by_traversal, 2.0, 1e-12) || !near(ev_gbs.entropy_bound, 2.0, 1e-12))
    f.add(fmt("GBS E[K] = %.17g, H(P) = %.17g", ev_gbs.by_traversal, ev_gbs.entropy_bound));

  const auto fig2 = import_tree(read_json("figure2_tree.json"), ds);
  const auto ev2 = evaluate_by_formula(fig2, ds);
  if (!near(ev2.by_traversal, 1.5, 1e-9) || !near(ev2.by_formula, 1.5, 1e-9) ||
      !near(ev2.by_traversal, ev2.by_formula, 1e-9))
    f.add(fmt("figure 2: traversal %.17g, formula %.17g", ev2.by_traversal, ev2.by_formula));
  return {!f.any(), f.any() ? f.first
                            : fmt("GISA q2-only E[K]=%g; GBS E[K]=%g=H(P); figure 2 E[K]=%.12g/%.12g",
                                  e_gisa, ev_gbs.by_traversal, ev2.by_traversal, ev2.by_formula)};
}

Outcome toy_example_2() {
  Failures f;
  const auto ds = toy2();
  const auto costs = candidate_costs(ds, NodePopulation::root(ds),
                                     QueryMask(ds.num_queries(), false), Strategy::Gqsa);
  const double want = 1.0 - kH_2_3;
  if (costs.size() != 2 || !near(costs[0].cost, want, 1e-9) || !near(costs[1].cost, want, 1e-9))
    f.add("root costs differ from 1 - H(2/3)");
  const auto fig4 = import_tree(read_json("figure4_tree.json"), ds);
  const auto ev = evaluate_by_formula(fig4, ds);
  if (!near(ev.by_traversal, 5.0 / 3.0, 1e-9) || !near(ev.by_formula, 5.0 / 3.0, 1e-9) ||
      !near(ev.by_traversal, ev.by_formula, 1e-9))
    f.add(fmt("figure 4: traversal %.17g, formula %.17g", ev.by_traversal, ev.by_formula));
  return {!f.any(),
          f.any() ? f.first
                  : fmt("C(Q1)=%.12g C(Q2)=%.12g (tie); figure 4 E[K]=%.12g/%.12g", costs[0].cost,
                        costs[1].cost, ev.by_traversal, ev.by_formula)};
}

Outcome toy_example_3() {
  Failures f;
  const auto ds = toy3();
  auto spec_for = [&](int model, double p) {
    auto block = *ds.noise;
    block.model = model;
    block.p = p;
    return NoiseSpec::make(ds, block);
  };
  const double pi1[] = {1.0 / 12, 1.0 / 12, 1.0 / 12, 0.25, 0.25, 0.25};
  const double pi2[] = {3.0 / 20, 1.0 / 20, 1.0 / 20, 9.0 / 20, 3.0 / 20, 3.0 / 20};
  double worst = 0.0;
  for (int model : {1, 2}) {
    const auto d = dilate_explicit(ds, spec_for(model, 0.25));
    if (d.dataset.num_objects() != 6) {
      f.add(fmt("model %d: %d dilated rows", model, d.dataset.num_objects()));
      continue;
    }
    for (int i = 0; i < 6; ++i)
      worst = std::max(worst, std::abs(d.dataset.priors[i] - (model == 1 ? pi1 : pi2)[i]));
  }
  if (worst > 1e-12) f.add(fmt("dilated priors off by %.3g", worst));
  const auto b = error_budget(ds);
  if (b.delta != 3 || b.epsilon != 1) f.add(fmt("delta=%d epsilon=%d", b.delta, b.epsilon));
  return {!f.any(), f.any() ? f.first
                            : fmt("both dilated priors within %.2g; delta=3 epsilon=1", worst)};
}

// Criteria 4 and 5 share their trees.
struct TreeSuite {
  int instances = 0;
  int trees = 0;
  int nodes = 0;
  int candidates = 0;
  double max_formula_diff = 0.0;
  double max_impurity_diff = 0.0;
  Failures formula, impurity;
  double seconds = 0.0;
};

void impurity_audit(const DecisionTree& tree, const Dataset& ds, TreeSuite& s) {
  const auto objects = node_objects(tree);
  for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
    const auto* split = std::get_if<SplitNode>(&tree.nodes[id]);
    if (!split) continue;
    const NodePopulation pop(ds, objects[id]);
    std::vector<int> queries;
    for (int q = 0; q < ds.num_queries(); ++q)
      if (!pop.constant_on(ds, q)) queries.push_back(q);
    const auto r = check_impurity_equivalence(pop, ds, queries, 1e-9);
    ++s.nodes;
    s.candidates += static_cast<int>(queries.size());
    s.max_impurity_diff = std::max(s.max_impurity_diff, r.max_abs_diff);
    if (!r.holds) s.impurity.add(fmt("node %zu: diff %.3g or argopt sets differ", id, r.max_abs_diff));
    if (std::find(r.argmin_cost.begin(), r.argmin_cost.end(), split->query) == r.argmin_cost.end())
      s.impurity.add(fmt("node %zu: chosen query is not a cost minimizer", id));
  }
}

TreeSuite run_tree_suite() {
  const auto start = std::chrono::steady_clock::now();
  TreeSuite s;
  std::mt19937_64 rng(500);
  auto check = [&](const DecisionTree& tree, const Dataset& ds, const char* name) {
    ++s.trees;
    const auto ev = evaluate_by_formula(tree, ds);
    const double diff = std::abs(ev.by_formula - ev.by_traversal);
    s.max_formula_diff = std::max(s.max_formula_diff, diff);
    const std::string where = fmt("instance %d %s", s.instances, name);
    if (diff > 1e-9) s.formula.add(where + fmt(": formula - traversal = %.3g", diff));
    if (ev.by_traversal < ev.entropy_bound - 1e-9) s.formula.add(where + ": below the entropy bound");
    if (tree.variant == TreeVariant::ObjectId) {
      if (!ev.corollary_bound) s.formula.add(where + ": no upper bound for an object-id tree");
      else if (ev.by_traversal > *ev.corollary_bound + 1e-9)
        s.formula.add(where + fmt(": E[K] %.6g above bound %.6g", ev.by_traversal,
                                  *ev.corollary_bound));
    }
  };
  while (s.instances < 500) {
    const int m = 2 + static_cast<int>(rng() % 63);
    const int n = 6 + static_cast<int>(rng() % 19);
    const int groups = 1 + static_cast<int>(rng() % std::min(m, 8));
    // Query groups of two or three members on average keep group-query trees small.
    const int query_groups = std::max(1, n / (2 + static_cast<int>(rng() % 2)));
    const auto ds = random_instance(rng, m, n, groups, query_groups);
    if (!rows_distinct(ds) || inseparable_pair(ds)) continue;
    ++s.instances;
    check(build_gbs(ds), ds, "gbs");
    check(build_gqsa(ds), ds, "gqsa");
    const auto gisa = build_gisa(ds);
    check(gisa, ds, "gisa");
    impurity_audit(gisa, ds, s);
    check(build_gigqsa(ds), ds, "gigqsa");
  }
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return s;
}

const TreeSuite& tree_suite() {
  static const TreeSuite s = run_tree_suite();
  return s;
}

Outcome formula_traversal() {
  const auto& s = tree_suite();
  if (s.formula.any()) return {false, fmt("%d failures; first: ", s.formula.count) + s.formula.first};
  return {true, fmt("%d instances, %d trees; max |formula - traversal| = %.3g; entropy and upper "
                    "bounds hold",
                    s.instances, s.trees, s.max_formula_diff)};
}

Outcome impurity_equivalence() {
  const auto& s = tree_suite();
  if (s.impurity.any())
    return {false, fmt("%d failures; first: ", s.impurity.count) + s.impurity.first};
  return {true, fmt("%d GISA nodes, %d candidates; max |decrease - (1 - C)| = %.3g; argopt sets "
                    "coincide",
                    s.nodes, s.candidates, s.max_impurity_diff)};
}

Outcome noise_oracle() {
  Failures f;
  std::mt19937_64 rng(600);
  int comparisons = 0, nodes = 0;
  double worst = 0.0;
  const double ps[] = {0.05, 0.25, 0.5};
  for (int trial = 0; trial < 120; ++trial) {
    const int m = 2 + static_cast<int>(rng() % 11);
    const int n = 4 + static_cast<int>(rng() % 7);
    Dataset ds;
    try {
      ds = random_code(rng, m, n, 3 + 2 * static_cast<int>(rng() % 2));
    } catch (const std::exception&) {
      --trial;
      continue;
    }
    const int prone = 1 + static_cast<int>(rng() % std::min(n, 6));
    const int model = 1 + trial % 2;
    const double p = ps[(trial / 2) % 3];
    auto block = random_noise_block(n, double(prone) / n, model, p, rng);
    const auto spec = NoiseSpec::make(ds, block);
    if (spec.prone_count() > 6) {
      f.add(fmt("trial %d: %d error-prone queries", trial, spec.prone_count()));
      continue;
    }
    const auto r = compare_with_dilation(ds, spec, 1e-9);
    nodes += r.nodes;
    comparisons += r.comparisons;
    worst = std::max(worst, r.max_diff);
    if (!r.failure.empty()) f.add(fmt("trial %d: ", trial) + r.failure);
  }
  if (f.any()) return {false, fmt("%d failures; first: ", f.count) + f.first};
  return {true, fmt("120 instances, %d nodes, %d query comparisons; max diff %.3g", nodes,
                    comparisons, worst)};
}

long long ball_size(int prone, int budget) {
  long long total = 0, c = 1;
  for (int e = 0; e <= budget; ++e) {
    total += c;
    c = c * (prone - e) / (e + 1);
  }
  return total;
}

Outcome perfect_recovery() {
  Failures f;
  std::mt19937_64 rng(700);
  long long cases = 0;
  int instances = 0;
  while (instances < 60) {
    const int n = 8 + static_cast<int>(rng() % 7);
    const int min_dist = rng() % 2 ? 7 : 5;
    Dataset ds;
    try {
      ds = random_code(rng, 3 + static_cast<int>(rng() % 8), n, min_dist);
    } catch (const std::exception&) {
      continue;
    }
    const int model = 1 + instances % 2;
    const auto spec =
        NoiseSpec::make(ds, random_noise_block(n, 0.4 + 0.1 * (instances % 7), model, 0.3, rng));
    if (ball_size(spec.prone_count(), spec.epsilon_prime) > 1000) continue;
    ++instances;
    const auto sets = flip_sets(spec);
    const Strategy rule = instances % 2 ? Strategy::Gisa : Strategy::Gbs;
    for (int i = 0; i < ds.num_objects(); ++i) {
      for (const auto& flips : sets) {
        std::vector<std::uint8_t> row(n);
        for (int q = 0; q < n; ++q) row[q] = ds.response(i, q);
        for (int q : flips) row[q] ^= 1;
        ++cases;
        const auto id = identify_with_noise(
            ds, spec, [&](int q) { return static_cast<int>(row[q]); }, rule);
        if (id.object != i)
          f.add(fmt("instance %d, object %d, %zu flips: identified %d", instances, i,
                    flips.size(), id.object));
      }
    }
  }
  if (f.any()) return {false, fmt("%d of %lld cases wrong; first: ", f.count, cases) + f.first};
  return {true, fmt("%d instances, %lld corrupted rows, all recovered", instances, cases)};
}

Outcome reduction_identities() {
  Failures f;
  std::mt19937_64 rng(800);
  int instances = 0, with_group_queries = 0;
  while (instances < 100) {
    const int m = 2 + static_cast<int>(rng() % 24);
    const int n = 5 + static_cast<int>(rng() % 10);
    const auto ds = random_instance(rng, m, n, 1 + static_cast<int>(rng() % 5), 0);
    if (!rows_distinct(ds)) continue;
    ++instances;
    const std::string where = fmt("instance %d", instances);

    const auto single = with_singleton_groups(ds);
    if (groups_as_objects(export_tree(build_gisa(single), single)["root"], single) !=
        export_tree(build_gbs(single), single)["root"])
      f.add(where + ": GISA differs from GBS under singleton object groups");

    const auto sq = with_singleton_query_groups(ds);
    const auto gqsa = as_single_query_tree(build_gqsa(sq));
    if (!gqsa || export_tree(*gqsa, sq) != export_tree(build_gbs(sq), sq))
      f.add(where + ": GQSA differs from GBS under singleton query groups");
    if (inseparable_pair(sq)) continue;
    ++with_group_queries;
    const auto gigqsa = as_single_query_tree(build_gigqsa(sq));
    if (!gigqsa || export_tree(*gigqsa, sq) != export_tree(build_gisa(sq), sq))
      f.add(where + ": GIGQSA differs from GISA under singleton query groups");
  }
  if (f.any()) return {false, fmt("%d failures; first: ", f.count) + f.first};
  return {true, fmt("%d instances (GISA=GBS, GQSA=GBS), %d with GIGQSA=GISA; documents equal",
                    instances, with_group_queries)};
}

Outcome directional_monte_carlo() {
  Failures f;
  std::ostringstream detail;

  GroupSweepParams gp;
  gp.d1_values = {0.1, 0.3, 0.5};
  gp.d2_values = {0.1, 0.2, 0.3, 0.4, 0.5};
  gp.runs = 100;
  gp.seed = 2024;
  const auto group = sweep_group_identification(gp);
  std::map<std::pair<double, double>, std::map<std::string, double>> cell;
  for (const auto& r : group) cell[{*r.d1, *r.d2}][r.strategy] = r.mean_queries;
  for (double d1 : gp.d1_values) {
    double previous_gap = -1e300, previous_d2 = 0.0;
    detail << "d1=" << d1 << " gaps";
    for (double d2 : gp.d2_values) {
      const auto& c = cell[{d1, d2}];
      const double gbs = c.at("gbs-group-stop"), gisa = c.at("gisa");
      const double gap = gbs - gisa;
      detail << fmt(" %.3f", gap);
      if (gisa > gbs) f.add(fmt("d1=%g d2=%g: GISA %.4f > GBS %.4f", d1, d2, gisa, gbs));
      if (gap <= previous_gap)
        f.add(fmt("d1=%g: gap does not grow from d2=%g to %g", d1, previous_d2, d2));
      previous_gap = gap;
      previous_d2 = d2;
    }
    detail << "; ";
  }

  QueryGroupSweepParams qp;
  qp.gamma_max_values = {0.7, 0.8, 0.9, 1.0};
  qp.runs = 100;
  qp.seed = 2024;
  const auto qg = sweep_query_groups(qp);
  const char* order[] = {"gbs", "gqsa", "min-min", "min-max", "random"};
  std::map<double, std::map<std::string, double>> by_gamma;
  for (const auto& r : qg) by_gamma[*r.gamma_max][r.strategy] = r.mean_queries;
  for (const auto& [gamma, c] : by_gamma) {
    detail << "gamma_max=" << gamma << ":";
    for (const char* s : order) detail << fmt(" %s %.3f", s, c.at(s));
    detail << "; ";
    for (int k = 0; k + 1 < 5; ++k)
      if (c.at(order[k]) > c.at(order[k + 1]))
        f.add(fmt("gamma_max=%g: %s %.4f > %s %.4f", gamma, order[k], c.at(order[k]),
                  order[k + 1], c.at(order[k + 1])));
  }
  if (f.any())
    return {false, fmt("%d ordering violations; first: ", f.count) + f.first + " | " + detail.str()};
  return {true, detail.str()};
}

Outcome nu_degeneracy() {
  Failures f;
  std::mt19937_64 rng(900);
  int trees = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 5 + static_cast<int>(rng() % 5);
    const auto ds = random_code(rng, 2 + static_cast<int>(rng() % 9), n, 3 + 2 * (trial % 2));
    for (double nu : {0.0, 1.0}) {
      const auto spec = NoiseSpec::make(
          ds, random_noise_block(n, nu, 1 + trial % 2, std::array{0.05, 0.25, 0.5}[trial % 3], rng));
      const auto dil = dilate_explicit(ds, spec);
      BuildConfig group_stop;
      group_stop.objective = Objective::GroupId;
      const auto gbs = build_gbs(dil.dataset, group_stop);
      const auto gisa = build_gisa(dil.dataset);
      if (dilated_tree_shape(gbs, ds, gbs.root) != dilated_tree_shape(gisa, ds, gisa.root))
        f.add(fmt("trial %d nu=%g: explicit trees differ", trial, nu));
      if (export_noisy_tree(build_noisy_tree(ds, spec, Strategy::Gbs), ds) !=
          export_noisy_tree(build_noisy_tree(ds, spec, Strategy::Gisa), ds))
        f.add(fmt("trial %d nu=%g: implicit trees differ", trial, nu));
      trees += 4;
    }
  }
  if (f.any()) return {false, fmt("%d failures; first: ", f.count) + f.first};
  return {true, fmt("60 instances at nu in {0, 1}: %d trees, GBS and GISA identical", trees)};
}

struct Criterion {
  const char* name;
  double limit_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {"toy-example-1", 1, toy_example_1},
      {"toy-example-2", 1, toy_example_2},
      {"toy-example-3", 1, toy_example_3},
      {"formula-traversal", 60, formula_traversal},
      {"impurity-equivalence", 60, impurity_equivalence},
      {"noise-oracle", 120, noise_oracle},
      {"perfect-recovery", 120, perfect_recovery},
      {"reduction-identities", 30, reduction_identities},
      {"directional-monte-carlo", 900, directional_monte_carlo},
      {"nu-degeneracy", 30, nu_degeneracy},
  };
  std::vector<std::string> wanted(argv + 1, argv + argc);
  for (const auto& w : wanted)
    if (std::none_of(criteria.begin(), criteria.end(), [&](const auto& c) { return w == c.name; })) {
      std::fprintf(stderr, "unknown criterion: %s\n", w.c_str());
      return 2;
    }

  int failed = 0;
  for (const auto& c : criteria) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.name) == wanted.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    // The shared tree suite is timed once, under the first criterion using it.
    if (std::string(c.name) == "impurity-equivalence") seconds = tree_suite().seconds;
    if (out.pass && seconds > c.limit_seconds) {
      out.pass = false;
      out.detail = fmt("took %.1fs, limit %.0fs; ", seconds, c.limit_seconds) + out.detail;
    }
    failed += !out.pass;
    std::printf("%s %s (%.2fs) %s\n", out.pass ? "PASS" : "FAIL", c.name, seconds,
                out.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
