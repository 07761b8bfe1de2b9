#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gql/builders.hpp"
#include "gql/synth.hpp"

namespace gql {

/// Mean and symmetric 95% half-width (1.96 sample sd / sqrt(n); 0 for n = 1).
struct Summary {
  double mean = 0.0;
  double half_width = 0.0;
  int runs = 0;
};
Summary summarize(const std::vector<double>& values);

/// One row of a benchmark report: one strategy in one parameter cell.
struct RunReport {
  std::string experiment;  // group-id, query-groups, noise
  std::string strategy;
  std::string descriptor;  // dataset shape
  std::optional<double> d1, d2, gamma_max, nu, p_true, p_alg;
  std::optional<int> model;
  int runs = 0;
  double mean_queries = 0.0;
  double ci_half_width = 0.0;
  double mean_entropy = 0.0;  // entropy of the identification target
  std::optional<double> recovery_rate;
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;
};

/// Fixed CSV header shared by every report.
const std::string& report_csv_header();
void write_csv(std::ostream& out, const std::vector<RunReport>& reports);

/// Seed of replicate `index` in cell `cell`, derived from the master seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t cell, std::uint64_t index);

/// Expected number of queries under a selection rule. Single-query rules
/// build the exact tree; query-group rules walk one session per object,
/// sampling the user's pick, with the choice at each node fixed by a cache.
double expected_queries(const Dataset& ds, Strategy strategy, Objective objective,
                        TieBreak tie_break, std::uint64_t seed, int walks_per_object = 1);

struct GroupSweepParams {
  std::vector<int> group_sizes = wiser_object_group_sizes();
  int num_queries = 79;
  std::vector<double> d1_values{0.1, 0.3, 0.5};
  std::vector<double> d2_values{0.1, 0.3, 0.5};
  std::vector<Strategy> strategies{Strategy::Gbs, Strategy::Gisa};
  int runs = 100;
  std::uint64_t seed = 1;
  TieBreak tie_break = TieBreak::SeededRandom;
  unsigned threads = 0;  // 0: hardware concurrency
};

/// Group identification on random datasets over a (d1, d2) grid; GBS stops
/// at group-pure nodes.
std::vector<RunReport> sweep_group_identification(const GroupSweepParams& params);

struct QueryGroupSweepParams {
  int num_objects = 298;
  std::vector<int> query_group_sizes = wiser_query_group_sizes();
  std::vector<double> gamma_max_values{0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<Strategy> strategies{Strategy::Gbs, Strategy::Gqsa, Strategy::MinMin,
                                   Strategy::MinMax, Strategy::RandomSearch};
  int runs = 100;
  std::uint64_t seed = 1;
  TieBreak tie_break = TieBreak::SeededRandom;
  unsigned threads = 0;
};

/// Object identification under query groups over a gamma_max grid.
std::vector<RunReport> sweep_query_groups(const QueryGroupSweepParams& params);

struct NoiseSimParams {
  std::vector<double> nu_values{0.5};
  int model = 1;
  std::vector<double> p_true_values{0.5};
  /// Value the algorithm assumes; unset means p_true.
  std::optional<double> p_alg;
  std::optional<int> epsilon_prime;
  std::vector<Strategy> strategies{Strategy::Gbs, Strategy::Gisa};
  int runs = 20;
  std::uint64_t seed = 1;
  TieBreak tie_break = TieBreak::SeededRandom;
  unsigned threads = 0;
};

/// Persistent-noise simulation on a fixed problem: each run draws the
/// error-prone set, corrupts every object's row within the budget and
/// identifies it on the dilated problem. Reports prior-weighted query counts
/// and the recovery rate.
std::vector<RunReport> simulate_noise(const Dataset& ds, const NoiseSimParams& params);

}  // namespace gql
