#include "gql/sweep.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "gql/noise.hpp"
#include "gql/tree.hpp"

namespace gql {

namespace {

using Clock = std::chrono::steady_clock;

constexpr int kGenerationAttempts = 10;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Runs body(i) for i in [0, count) on a small worker pool; rethrows the
// first failure.
void parallel_for(int count, unsigned threads, const std::function<void(int)>& body) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, std::max(1, count));
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (int i = next++; i < count; i = next++) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = count;
      }
    }
  };
  if (threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(12);
  s << v;
  return s.str();
}

template <typename T>
std::string opt(const std::optional<T>& v) {
  if (!v) return "";
  if constexpr (std::is_floating_point_v<T>) return fmt(*v);
  return std::to_string(*v);
}

std::string strategy_label(Strategy s, Objective objective) {
  std::string out = to_string(s);
  if (s == Strategy::Gbs && objective == Objective::GroupId) out += "-group-stop";
  return out;
}

double walk_expected(const Dataset& ds, Strategy strategy, Objective objective,
                     TieBreak tie_break, std::uint64_t seed, int walks) {
  const int n = ds.num_queries();
  std::unordered_map<std::string, std::optional<Choice>> cache;
  double total = 0.0;
  for (int i = 0; i < ds.num_objects(); ++i) {
    for (int w = 0; w < walks; ++w) {
      std::mt19937_64 rng(derive_seed(seed, i, w));
      auto pop = NodePopulation::root(ds);
      QueryMask answered(n, false);
      std::string key(n, '.');
      int asked = 0;
      while (!resolved(pop, objective)) {
        auto it = cache.find(key);
        if (it == cache.end()) {
          TieBreaker ties(tie_break, derive_seed(seed, std::hash<std::string>{}(key), ~0ull));
          it = cache.emplace(key, choose(ds, pop, answered, strategy, ties)).first;
        }
        const auto& choice = it->second;
        if (!choice)
          throw Error(ErrorCode::StuckNode, "no admissible query at a node with " +
                                                std::to_string(pop.members().size()) + " objects");
        int q = choice->query;
        if (choice->is_group) {
          std::vector<double> weights;
          for (const auto& m : choice->members) weights.push_back(m.second);
          std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
          q = choice->members[pick(rng)].first;
        }
        const int r = ds.response(i, q);
        pop = pop.restrict(ds, q, r);
        answered[q] = true;
        key[q] = static_cast<char>('0' + r);
        ++asked;
      }
      total += ds.priors[i] * asked / walks;
    }
  }
  return total;
}

// Retries generation with fresh seeds until the row requirement holds.
template <typename Params, typename Gen>
Dataset generate(Params params, Gen&& gen) {
  const auto base = params.seed;
  for (int attempt = 0;; ++attempt) {
    GenReport report;
    auto ds = gen(params, &report);
    if (report.unresolved.empty()) return ds;
    if (attempt + 1 >= kGenerationAttempts)
      throw Error(ErrorCode::InvalidArgument,
                  "could not generate a dataset meeting the row requirement");
    params.seed = derive_seed(base, 0x7e7, attempt + 1);
  }
}

struct CellResult {
  std::vector<std::vector<double>> queries;  // per strategy, per run
  std::vector<double> entropy;
};

}  // namespace

Summary summarize(const std::vector<double>& values) {
  Summary s;
  s.runs = static_cast<int>(values.size());
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / s.runs;
  if (s.runs > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.half_width = 1.96 * std::sqrt(sq / (s.runs - 1)) / std::sqrt(double(s.runs));
  }
  return s;
}

const std::string& report_csv_header() {
  static const std::string header =
      "experiment,strategy,descriptor,d1,d2,gamma_max,nu,model,p_true,p_alg,runs,"
      "mean_queries,ci_half_width,mean_entropy,recovery_rate,seed,wall_seconds";
  return header;
}

void write_csv(std::ostream& out, const std::vector<RunReport>& reports) {
  out << report_csv_header() << '\n';
  for (const auto& r : reports) {
    out << r.experiment << ',' << r.strategy << ',' << r.descriptor << ',' << opt(r.d1) << ','
        << opt(r.d2) << ',' << opt(r.gamma_max) << ',' << opt(r.nu) << ',' << opt(r.model) << ','
        << opt(r.p_true) << ',' << opt(r.p_alg) << ',' << r.runs << ',' << fmt(r.mean_queries)
        << ',' << fmt(r.ci_half_width) << ',' << fmt(r.mean_entropy) << ','
        << opt(r.recovery_rate) << ',' << r.seed << ',' << fmt(r.wall_seconds) << '\n';
  }
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t cell, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(cell), static_cast<std::uint32_t>(cell >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (std::uint64_t{out[0]} << 32) | out[1];
}

double expected_queries(const Dataset& ds, Strategy strategy, Objective objective,
                        TieBreak tie_break, std::uint64_t seed, int walks_per_object) {
  if (walks_per_object < 1) throw Error(ErrorCode::InvalidArgument, "need at least one walk");
  if (!suggests_query_groups(strategy)) {
    BuildConfig cfg;
    cfg.objective = objective;
    cfg.tie_break = tie_break;
    cfg.seed = seed;
    return evaluate_by_traversal(build_tree(ds, strategy, cfg), ds);
  }
  require_compatible(ds, strategy, objective);
  return walk_expected(ds, strategy, objective, tie_break, seed, walks_per_object);
}

std::vector<RunReport> sweep_group_identification(const GroupSweepParams& params) {
  if (params.runs < 1) throw Error(ErrorCode::InvalidArgument, "runs must be at least 1");
  std::vector<RunReport> out;
  std::uint64_t cell = 0;
  for (double d1 : params.d1_values) {
    for (double d2 : params.d2_values) {
      const auto start = Clock::now();
      CellResult res;
      res.queries.assign(params.strategies.size(), std::vector<double>(params.runs));
      res.entropy.resize(params.runs);
      parallel_for(params.runs, params.threads, [&](int run) {
        GroupGenParams gen;
        gen.group_sizes = params.group_sizes;
        gen.num_queries = params.num_queries;
        gen.rectangle = {d1, d2};
        gen.seed = derive_seed(params.seed, cell, run);
        const auto ds = generate(gen, [](const GroupGenParams& p, GenReport* r) {
          return gen_group_dataset(p, r);
        });
        res.entropy[run] = target_entropy(ds, TreeVariant::GroupId);
        for (std::size_t s = 0; s < params.strategies.size(); ++s)
          res.queries[s][run] = expected_queries(ds, params.strategies[s], Objective::GroupId,
                                                 params.tie_break, derive_seed(gen.seed, s, 1));
      });
      const double wall = seconds_since(start);
      int m = 0;
      for (int g : params.group_sizes) m += g;
      for (std::size_t s = 0; s < params.strategies.size(); ++s) {
        const auto sum = summarize(res.queries[s]);
        RunReport r;
        r.experiment = "group-id";
        r.strategy = strategy_label(params.strategies[s], Objective::GroupId);
        r.descriptor = "M=" + std::to_string(m) + " N=" + std::to_string(params.num_queries) +
                       " groups=" + std::to_string(params.group_sizes.size());
        r.d1 = d1;
        r.d2 = d2;
        r.runs = sum.runs;
        r.mean_queries = sum.mean;
        r.ci_half_width = sum.half_width;
        r.mean_entropy = summarize(res.entropy).mean;
        r.seed = params.seed;
        r.wall_seconds = wall;
        out.push_back(std::move(r));
      }
      ++cell;
    }
  }
  return out;
}

std::vector<RunReport> sweep_query_groups(const QueryGroupSweepParams& params) {
  if (params.runs < 1) throw Error(ErrorCode::InvalidArgument, "runs must be at least 1");
  std::vector<RunReport> out;
  std::uint64_t cell = 0;
  int n = 0;
  for (int g : params.query_group_sizes) n += g;
  for (double gamma : params.gamma_max_values) {
    const auto start = Clock::now();
    CellResult res;
    res.queries.assign(params.strategies.size(), std::vector<double>(params.runs));
    res.entropy.resize(params.runs);
    parallel_for(params.runs, params.threads, [&](int run) {
      QueryGroupGenParams gen;
      gen.num_objects = params.num_objects;
      gen.query_group_sizes = params.query_group_sizes;
      gen.gamma_max = gamma;
      gen.seed = derive_seed(params.seed, cell, run);
      const auto ds = generate(gen, [](const QueryGroupGenParams& p, GenReport* r) {
        return gen_querygroup_dataset(p, r);
      });
      res.entropy[run] = target_entropy(ds, TreeVariant::ObjectId);
      for (std::size_t s = 0; s < params.strategies.size(); ++s)
        res.queries[s][run] = expected_queries(ds, params.strategies[s], Objective::ObjectId,
                                               params.tie_break, derive_seed(gen.seed, s, 1));
    });
    const double wall = seconds_since(start);
    for (std::size_t s = 0; s < params.strategies.size(); ++s) {
      const auto sum = summarize(res.queries[s]);
      RunReport r;
      r.experiment = "query-groups";
      r.strategy = to_string(params.strategies[s]);
      r.descriptor = "M=" + std::to_string(params.num_objects) + " N=" + std::to_string(n) +
                     " query_groups=" + std::to_string(params.query_group_sizes.size());
      r.gamma_max = gamma;
      r.runs = sum.runs;
      r.mean_queries = sum.mean;
      r.ci_half_width = sum.half_width;
      r.mean_entropy = summarize(res.entropy).mean;
      r.seed = params.seed;
      r.wall_seconds = wall;
      out.push_back(std::move(r));
    }
    ++cell;
  }
  return out;
}

std::vector<RunReport> simulate_noise(const Dataset& ds, const NoiseSimParams& params) {
  if (params.runs < 1) throw Error(ErrorCode::InvalidArgument, "runs must be at least 1");
  for (auto s : params.strategies)
    if (s != Strategy::Gbs && s != Strategy::Gisa)
      throw Error(ErrorCode::InvalidArgument,
                  std::string("no noisy variant of ") + to_string(s));
  validate(ds, Identification::Object);
  const auto budget = error_budget(ds);
  const double entropy = target_entropy(ds, TreeVariant::ObjectId);
  const std::vector<double> p_values =
      params.model == 1 ? std::vector<double>{0.5} : params.p_true_values;
  std::vector<RunReport> out;
  std::uint64_t cell = 0;
  for (double nu : params.nu_values) {
    for (double p_true : p_values) {
      const double p_alg = params.model == 1 ? 0.5 : params.p_alg.value_or(p_true);
      const auto start = Clock::now();
      const std::size_t k = params.strategies.size();
      std::vector<std::vector<double>> queries(k, std::vector<double>(params.runs));
      std::vector<std::vector<int>> recovered(k, std::vector<int>(params.runs));
      parallel_for(params.runs, params.threads, [&](int run) {
        const auto run_seed = derive_seed(params.seed, cell, run);
        std::mt19937_64 rng(run_seed);
        auto block = random_noise_block(ds.num_queries(), nu, params.model, p_alg, rng);
        block.epsilon_prime = params.epsilon_prime;
        const auto alg = NoiseSpec::make(ds, block);
        block.p = p_true;
        const auto truth = NoiseSpec::make(ds, block);
        for (int i = 0; i < ds.num_objects(); ++i) {
          const auto row = simulate_errors(ds, truth, i, derive_seed(run_seed, i, 0));
          auto respond = [&](int q) { return static_cast<int>(row[q]); };
          for (std::size_t s = 0; s < k; ++s) {
            const auto id = identify_with_noise(
                ds, alg, respond, params.strategies[s],
                TieBreaker(params.tie_break, derive_seed(run_seed, i, s + 1)));
            queries[s][run] += ds.priors[i] * static_cast<double>(id.answers.size());
            recovered[s][run] += id.object == i;
          }
        }
      });
      const double wall = seconds_since(start);
      for (std::size_t s = 0; s < k; ++s) {
        const auto sum = summarize(queries[s]);
        long hits = 0;
        for (int h : recovered[s]) hits += h;
        RunReport r;
        r.experiment = "noise";
        r.strategy = std::string("noisy-") + to_string(params.strategies[s]);
        r.descriptor = "M=" + std::to_string(ds.num_objects()) +
                       " N=" + std::to_string(ds.num_queries()) +
                       " delta=" + std::to_string(budget.delta) +
                       " epsilon=" + std::to_string(budget.epsilon);
        r.nu = nu;
        r.model = params.model;
        if (params.model == 2) {
          r.p_true = p_true;
          r.p_alg = p_alg;
        }
        r.runs = sum.runs;
        r.mean_queries = sum.mean;
        r.ci_half_width = sum.half_width;
        r.mean_entropy = entropy;
        r.recovery_rate = double(hits) / (double(params.runs) * ds.num_objects());
        r.seed = params.seed;
        r.wall_seconds = wall;
        out.push_back(std::move(r));
      }
      ++cell;
    }
  }
  return out;
}

}  // namespace gql
