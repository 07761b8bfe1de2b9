#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "gql/noise.hpp"
#include "gql/service.hpp"
#include "gql/session.hpp"
#include "gql/sweep.hpp"
#include "gql/synth.hpp"
#include "gql/tree.hpp"

using namespace gql;

namespace {

constexpr int kUsageError = 2;
constexpr int kIncomplete = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string problem;
  std::string metadata;
  std::string strategy;
  std::string tie_break = "index";
  std::uint64_t seed = 0;
  std::string out;
  std::string objective;
};

Dataset load_problem(const Common& c) {
  if (c.problem.empty()) throw UsageError("--problem is required");
  const std::filesystem::path p(c.problem);
  if (p.extension() == ".csv")
    return load_dataset_csv(p, c.metadata.empty() ? std::nullopt
                                                  : std::optional<std::filesystem::path>(c.metadata));
  return load_dataset(p);
}

TieBreak tie_break(const std::string& s) {
  return s == "random" ? TieBreak::SeededRandom : TieBreak::LowestIndex;
}

std::optional<Objective> objective(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return s == "group" ? Objective::GroupId : Objective::ObjectId;
}

// Writes to --out when given, stdout otherwise.
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write '" + path + "'");
  out << text;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw UsageError("bad number '" + item + "'");
    }
  }
  return out;
}

// "d1=0.1,0.3;d2=0.5" -> {d1: [0.1, 0.3], d2: [0.5]}
std::map<std::string, std::vector<double>> parse_grid(const std::string& text) {
  std::map<std::string, std::vector<double>> out;
  std::stringstream ss(text);
  for (std::string axis; std::getline(ss, axis, ';');) {
    if (axis.empty()) continue;
    const auto eq = axis.find('=');
    if (eq == std::string::npos) throw UsageError("grid axis '" + axis + "' needs name=values");
    out[axis.substr(0, eq)] = parse_list(axis.substr(eq + 1));
  }
  return out;
}

std::vector<Strategy> strategies(const std::vector<std::string>& names) {
  std::vector<Strategy> out;
  for (const auto& n : names) out.push_back(strategy_from_string(n));
  return out;
}

int cmd_build(const Common& c) {
  const auto ds = load_problem(c);
  std::cout << "strategy: " << c.strategy << "\ntie-break: " << c.tie_break << "\nseed: " << c.seed
            << "\n";
  BuildConfig cfg;
  cfg.tie_break = tie_break(c.tie_break);
  cfg.seed = c.seed;
  cfg.objective = objective(c.objective);
  if (c.strategy.rfind("noisy-", 0) == 0) {
    const auto spec = NoiseSpec::from_dataset(ds);
    const auto tree = build_noisy_tree(
        ds, spec, base_rule(session_strategy_from_string(c.strategy)), cfg);
    std::cout << "delta: " << spec.delta << "\nepsilon: " << spec.epsilon
              << "\nepsilon': " << spec.epsilon_prime << "\nH(P): "
              << target_entropy(ds, TreeVariant::ObjectId)
              << "\nE[K]: " << tree.expected_queries << "\n";
    if (!c.out.empty()) emit(c.out, export_noisy_tree(tree, ds).dump(2) + "\n");
    return 0;
  }
  Strategy s;
  try {
    s = strategy_from_string(c.strategy);
    require_compatible(ds, s, cfg.objective.value_or(default_objective(s)));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidArgument) throw UsageError(e.what());
    throw;
  }
  const auto tree = build_tree(ds, s, cfg);
  const auto ev = evaluate_by_formula(tree, ds);
  const bool group = objective_of(tree.variant) == Objective::GroupId;
  std::cout << "variant: " << to_string(tree.variant) << "\n"
            << (group ? "H(P_y): " : "H(P): ") << ev.entropy_bound << "\n"
            << "E[K] (formula): " << ev.by_formula << "\n"
            << "E[K] (traversal): " << ev.by_traversal << "\n"
            << "rho: " << ev.overall_rho << "\n";
  if (ev.corollary_bound) std::cout << "H(P)/H(rho): " << *ev.corollary_bound << "\n";
  std::cout << "internal nodes: " << ev.internal_nodes << "\nleaves: " << ev.leaves << "\n";
  if (!c.out.empty()) emit(c.out, export_tree(tree, ds).dump(2) + "\n");
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& tree_path) {
  const auto ds = load_problem(c);
  std::ifstream in(tree_path);
  if (!in) throw UsageError("cannot read tree '" + tree_path + "'");
  const auto tree = import_tree(nlohmann::json::parse(in), ds);
  validate_tree(tree, ds);
  std::cout << to_json(evaluate_by_formula(tree, ds)).dump(2) << "\n";
  return 0;
}

struct GenerateArgs {
  std::string kind = "group";
  std::vector<int> sizes;
  int queries = 79;
  int objects = 298;
  double d1 = 0.5, d2 = 0.5, gamma_max = 1.0;
};

int cmd_generate(const Common& c, const GenerateArgs& g) {
  GenReport report;
  Dataset ds;
  if (g.kind == "group") {
    GroupGenParams p;
    p.group_sizes = g.sizes.empty() ? wiser_object_group_sizes() : g.sizes;
    p.num_queries = g.queries;
    p.rectangle = {g.d1, g.d2};
    p.seed = c.seed;
    ds = gen_group_dataset(p, &report);
  } else if (g.kind == "query-group") {
    QueryGroupGenParams p;
    p.num_objects = g.objects;
    p.query_group_sizes = g.sizes.empty() ? wiser_query_group_sizes() : g.sizes;
    p.gamma_max = g.gamma_max;
    p.seed = c.seed;
    ds = gen_querygroup_dataset(p, &report);
  } else {
    throw UsageError("--kind must be 'group' or 'query-group'");
  }
  std::cerr << "seed: " << c.seed << "\nresampled columns: " << report.resampled_columns
            << "\nunresolved pairs: " << report.unresolved.size() << "\n";
  emit(c.out, dataset_to_json(ds).dump() + "\n");
  return report.unresolved.empty() ? 0 : 1;
}

int cmd_estimate(const Common& c) {
  const auto ds = load_problem(c);
  std::ostringstream out;
  out << "query,gamma_w,gamma_b\n";
  const auto est = estimate_params(ds);
  for (int q = 0; q < ds.num_queries(); ++q)
    out << ds.queries[q] << ',' << est[q].w << ',' << est[q].b << '\n';
  emit(c.out, out.str());
  return 0;
}

struct SweepArgs {
  std::string experiment = "group";
  std::string grid;
  std::vector<std::string> strategies;
  int runs = 100;
  unsigned threads = 0;
  std::vector<int> sizes;
  int queries = 79;
  int objects = 298;
};

int cmd_sweep(const Common& c, const SweepArgs& a) {
  const auto grid = parse_grid(a.grid);
  auto axis = [&](const char* name, std::vector<double> fallback) {
    auto it = grid.find(name);
    return it == grid.end() ? fallback : it->second;
  };
  std::vector<RunReport> reports;
  if (a.experiment == "group") {
    GroupSweepParams p;
    if (!a.sizes.empty()) p.group_sizes = a.sizes;
    p.num_queries = a.queries;
    p.d1_values = axis("d1", p.d1_values);
    p.d2_values = axis("d2", p.d2_values);
    if (!a.strategies.empty()) p.strategies = strategies(a.strategies);
    p.runs = a.runs;
    p.seed = c.seed;
    p.tie_break = tie_break(c.tie_break);
    p.threads = a.threads;
    reports = sweep_group_identification(p);
  } else if (a.experiment == "query-groups") {
    QueryGroupSweepParams p;
    if (!a.sizes.empty()) p.query_group_sizes = a.sizes;
    p.num_objects = a.objects;
    p.gamma_max_values = axis("gamma_max", p.gamma_max_values);
    if (!a.strategies.empty()) p.strategies = strategies(a.strategies);
    p.runs = a.runs;
    p.seed = c.seed;
    p.tie_break = tie_break(c.tie_break);
    p.threads = a.threads;
    reports = sweep_query_groups(p);
  } else {
    throw UsageError("--experiment must be 'group' or 'query-groups'");
  }
  std::cerr << "seed: " << c.seed << "\n";
  std::ostringstream out;
  write_csv(out, reports);
  emit(c.out, out.str());
  return 0;
}

struct NoiseArgs {
  std::string grid;
  std::string nu;
  std::string p_true;
  std::optional<double> p_alg;
  int model = 1;
  std::optional<int> epsilon_prime;
  std::vector<std::string> strategies;
  int runs = 20;
  unsigned threads = 0;
};

int cmd_noise_sim(const Common& c, const NoiseArgs& a) {
  const auto ds = load_problem(c);
  const auto grid = parse_grid(a.grid);
  NoiseSimParams p;
  p.model = a.model;
  if (grid.count("nu")) p.nu_values = grid.at("nu");
  if (!a.nu.empty()) p.nu_values = parse_list(a.nu);
  if (grid.count("p_true")) p.p_true_values = grid.at("p_true");
  if (!a.p_true.empty()) p.p_true_values = parse_list(a.p_true);
  p.p_alg = a.p_alg;
  p.epsilon_prime = a.epsilon_prime;
  if (!a.strategies.empty()) {
    p.strategies.clear();
    for (const auto& s : a.strategies)
      p.strategies.push_back(base_rule(session_strategy_from_string(
          s.rfind("noisy-", 0) == 0 ? s : "noisy-" + s)));
  }
  p.runs = a.runs;
  p.seed = c.seed;
  p.tie_break = tie_break(c.tie_break);
  p.threads = a.threads;
  const auto budget = error_budget(ds);
  std::cerr << "seed: " << c.seed << "\ndelta: " << budget.delta << "\nepsilon: " << budget.epsilon
            << "\n";
  if (budget.warning) std::cerr << "warning: " << *budget.warning << "\n";
  std::ostringstream out;
  write_csv(out, simulate_noise(ds, p));
  emit(c.out, out.str());
  return 0;
}

struct NoiseFlags {
  std::vector<std::string> error_prone;
  std::optional<int> model;
  std::optional<double> p;
  std::optional<int> epsilon_prime;
};

std::optional<NoiseBlock> noise_block(const Dataset& ds, const NoiseFlags& f) {
  if (f.error_prone.empty() && !f.model && !f.p && !f.epsilon_prime) return std::nullopt;
  NoiseBlock b = ds.noise.value_or(NoiseBlock{});
  if (!f.error_prone.empty()) {
    b.error_prone.clear();
    for (const auto& q : f.error_prone) b.error_prone.push_back(ds.query_index(q));
  }
  if (f.model) b.model = *f.model;
  if (f.p) b.p = *f.p;
  if (f.epsilon_prime) b.epsilon_prime = f.epsilon_prime;
  return b;
}

void describe(const Suggestion& s, const Dataset& ds) {
  if (!s.is_group) {
    std::cout << "ask " << ds.queries[s.query] << " [0/1]\n";
    return;
  }
  std::cout << "choose from ";
  if (s.query_group < 0) std::cout << "all queries";
  else std::cout << "query group " << s.query_group + 1;
  std::cout << ":";
  for (const auto& [q, p] : s.members) std::cout << " " << ds.queries[q] << " (p=" << p << ")";
  std::cout << "\nanswer as '<query> <0/1>'\n";
}

std::optional<int> parse_response(const std::string& text) {
  if (text == "1" || text == "y" || text == "yes") return 1;
  if (text == "0" || text == "n" || text == "no") return 0;
  return std::nullopt;
}

void outcome_line(const Session& s) {
  const auto& ds = s.dataset();
  if (s.status() == SessionStatus::Identified) {
    if (s.outcome_is_group()) std::cout << "identified: group " << s.outcome() + 1 << "\n";
    else std::cout << "identified: object " << ds.objects[s.outcome()] << "\n";
  } else if (s.status() == SessionStatus::Failed) {
    std::cout << "failed: " << s.failure() << "\n";
  }
}

int cmd_session(const Common& c, const NoiseFlags& nf) {
  auto ds = std::make_shared<const Dataset>(load_problem(c));
  SessionConfig cfg;
  cfg.tie_break = tie_break(c.tie_break);
  cfg.seed = c.seed;
  cfg.objective = objective(c.objective);
  cfg.noise = noise_block(*ds, nf);
  Session s(ds, session_strategy_from_string(c.strategy), cfg);
  std::cout << "strategy: " << c.strategy << "\nseed: " << c.seed << "\n";
  auto flush = [&] {
    const auto t = s.transcript_json().dump(2) + "\n";
    if (c.out.empty()) std::cerr << t;
    else emit(c.out, t);
  };
  std::string line;
  while (s.status() == SessionStatus::Active) {
    const auto& sug = s.suggest();
    if (!sug) break;
    describe(*sug, *ds);
    std::cout << "> " << std::flush;
    if (!std::getline(std::cin, line)) {
      std::cout << "\nend of input before identification\n";
      flush();
      return kIncomplete;
    }
    std::istringstream words(line);
    std::vector<std::string> tok;
    for (std::string w; words >> w;) tok.push_back(w);
    int q = -1;
    std::optional<int> r;
    if (tok.size() == 1 && !sug->is_group) {
      q = sug->query;
      r = parse_response(tok[0]);
    } else if (tok.size() == 2) {
      try {
        q = ds->query_index(tok[0]);
      } catch (const Error&) {
        q = -1;
      }
      r = parse_response(tok[1]);
    }
    if (q < 0 || !r) {
      std::cout << "could not read the answer; try again\n";
      continue;
    }
    try {
      s.answer(q, *r);
    } catch (const Error& e) {
      std::cout << e.what() << "; try again\n";
      continue;
    }
    std::cout << "surviving: " << s.surviving() << "\n";
  }
  outcome_line(s);
  flush();
  return s.status() == SessionStatus::Identified ? 0 : 1;
}

int cmd_replay(const Common& c, const std::string& transcript_path) {
  auto ds = std::make_shared<const Dataset>(load_problem(c));
  std::ifstream in(transcript_path);
  if (!in) throw UsageError("cannot read transcript '" + transcript_path + "'");
  const auto s = replay(ds, nlohmann::json::parse(in));
  std::cout << "replayed " << s.steps().size() << " answers\nstatus: " << to_string(s.status())
            << "\n";
  outcome_line(s);
  return 0;
}

int cmd_serve(const std::vector<std::string>& problems, const std::string& addr,
              const std::string& static_dir, const std::string& transcripts) {
  Service svc(transcripts.empty() ? std::nullopt
                                  : std::optional<std::filesystem::path>(transcripts));
  for (const auto& p : problems) {
    const auto id = svc.add_dataset(load_dataset(p), std::filesystem::path(p).stem().string());
    std::cout << "dataset " << id << ": " << p << "\n";
  }
  const auto [host, port] = parse_address(addr);
  HttpServer server(svc, static_dir.empty() ? std::nullopt
                                            : std::optional<std::filesystem::path>(static_dir));
  const int bound = server.bind(host, port);
  std::cout << "listening on http://" << host << ":" << bound << std::endl;
  server.run();
  return 0;
}

void common_flags(CLI::App* app, Common& c, bool strategy, bool problem = true) {
  if (problem) {
    app->add_option("--problem", c.problem, "Problem document (.json, or matrix .csv)");
    app->add_option("--metadata", c.metadata, "Metadata CSV accompanying a matrix CSV");
  }
  if (strategy) app->add_option("--strategy", c.strategy, "Selection rule")->required();
  app->add_option("--tie-break", c.tie_break, "Tie resolution")
      ->check(CLI::IsMember({"index", "random"}));
  app->add_option("--seed", c.seed, "Random seed");
  app->add_option("--out", c.out, "Output file (stdout when omitted)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Group-based query learning: greedy trees, sessions and benchmarks"};
  app.require_subcommand(1);

  Common build_c, eval_c, gen_c, est_c, sweep_c, noise_c, session_c, replay_c;
  std::string tree_path, transcript_path;
  GenerateArgs gen;
  SweepArgs sweep;
  NoiseArgs noise;
  NoiseFlags session_noise;
  std::vector<std::string> serve_problems;
  std::string serve_addr = "127.0.0.1:8080", static_dir, transcripts;

  auto* build = app.add_subcommand("build", "Build a greedy tree and report its cost");
  common_flags(build, build_c, true);
  build->add_option("--objective", build_c.objective, "Stopping rule")
      ->check(CLI::IsMember({"object", "group"}));

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a tree document");
  common_flags(evaluate, eval_c, false);
  evaluate->add_option("--tree", tree_path, "Tree document")->required();

  auto* generate = app.add_subcommand("generate", "Generate a random problem");
  common_flags(generate, gen_c, false, false);
  generate->add_option("--kind", gen.kind, "group or query-group")
      ->check(CLI::IsMember({"group", "query-group"}));
  generate->add_option("--sizes", gen.sizes, "Group sizes (default: WISER-shaped)")->delimiter(',');
  generate->add_option("--queries", gen.queries, "Number of queries (group kind)");
  generate->add_option("--objects", gen.objects, "Number of objects (query-group kind)");
  generate->add_option("--d1", gen.d1, "Between-group rectangle side");
  generate->add_option("--d2", gen.d2, "Within-group rectangle side");
  generate->add_option("--gamma-max", gen.gamma_max, "Largest gamma_b (query-group kind)");

  auto* estimate = app.add_subcommand("estimate", "Estimate per-query correlation parameters");
  common_flags(estimate, est_c, false);

  auto* sweep_cmd = app.add_subcommand("sweep", "Monte Carlo sweep over random datasets (CSV)");
  common_flags(sweep_cmd, sweep_c, false, false);
  sweep_cmd->add_option("--experiment", sweep.experiment, "group or query-groups")
      ->check(CLI::IsMember({"group", "query-groups"}));
  sweep_cmd->add_option("--grid", sweep.grid, "Axes, e.g. 'd1=0.1,0.5;d2=0.1,0.3,0.5'");
  sweep_cmd->add_option("--strategy", sweep.strategies, "Strategies (comma separated)")
      ->delimiter(',');
  sweep_cmd->add_option("--runs", sweep.runs, "Replicates per cell")->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--threads", sweep.threads, "Worker threads (0: all cores)");
  sweep_cmd->add_option("--sizes", sweep.sizes, "Group sizes")->delimiter(',');
  sweep_cmd->add_option("--queries", sweep.queries, "Number of queries (group experiment)");
  sweep_cmd->add_option("--objects", sweep.objects, "Number of objects (query-groups)");

  auto* noise_cmd = app.add_subcommand("noise-sim", "Persistent-noise simulation (CSV)");
  common_flags(noise_cmd, noise_c, false);
  noise_cmd->add_option("--grid", noise.grid, "Axes, e.g. 'nu=0,0.5,1;p_true=0.1,0.3'");
  noise_cmd->add_option("--nu", noise.nu, "Error-prone fractions (comma separated)");
  noise_cmd->add_option("--model", noise.model, "Error-count model")->check(CLI::IsMember({1, 2}));
  noise_cmd->add_option("--p-true", noise.p_true, "True p values (model 2)");
  noise_cmd->add_option("--p-alg", noise.p_alg, "p assumed by the algorithm (model 2)");
  noise_cmd->add_option("--epsilon-prime", noise.epsilon_prime, "Lower error budget");
  noise_cmd->add_option("--strategy", noise.strategies, "gbs and/or gisa")->delimiter(',');
  noise_cmd->add_option("--runs", noise.runs, "Replicates per cell")->check(CLI::PositiveNumber);
  noise_cmd->add_option("--threads", noise.threads, "Worker threads (0: all cores)");

  auto* session = app.add_subcommand("session", "Interactive identification session");
  common_flags(session, session_c, true);
  session->add_option("--objective", session_c.objective, "Stopping rule")
      ->check(CLI::IsMember({"object", "group"}));
  session->add_option("--error-prone", session_noise.error_prone, "Error-prone query ids")
      ->delimiter(',');
  session->add_option("--model", session_noise.model, "Error-count model")
      ->check(CLI::IsMember({1, 2}));
  session->add_option("--p-alg", session_noise.p, "p of model 2");
  session->add_option("--epsilon-prime", session_noise.epsilon_prime, "Lower error budget");

  auto* replay_cmd = app.add_subcommand("replay", "Replay a session transcript");
  common_flags(replay_cmd, replay_c, false);
  replay_cmd->add_option("--transcript", transcript_path, "Transcript document")->required();

  auto* serve = app.add_subcommand("serve", "Serve the JSON API over HTTP");
  serve->add_option("--problem", serve_problems, "Problem documents to preload");
  serve->add_option("--serve-addr", serve_addr, "host:port");
  serve->add_option("--static", static_dir, "Directory served at /");
  serve->add_option("--transcripts", transcripts, "Directory for session event logs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kUsageError;
  }

  try {
    if (*build) return cmd_build(build_c);
    if (*evaluate) return cmd_evaluate(eval_c, tree_path);
    if (*generate) return cmd_generate(gen_c, gen);
    if (*estimate) return cmd_estimate(est_c);
    if (*sweep_cmd) return cmd_sweep(sweep_c, sweep);
    if (*noise_cmd) return cmd_noise_sim(noise_c, noise);
    if (*session) return cmd_session(session_c, session_noise);
    if (*replay_cmd) return cmd_replay(replay_c, transcript_path);
    if (*serve) return cmd_serve(serve_problems, serve_addr, static_dir, transcripts);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsageError;
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error (malformed): " << e.what() << "\n";
    return 1;
  }
  return 0;
}
