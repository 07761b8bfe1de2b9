#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gql/builders.hpp"
#include "gql/dataset.hpp"
#include "gql/infomath.hpp"

namespace gql {

struct ErrorBudget {
  int delta = 0;    // minimum pairwise row Hamming distance
  int epsilon = 0;  // floor((delta - 1) / 2), never negative
  std::optional<std::string> warning;
};

ErrorBudget error_budget(const Dataset& ds);

/// Persistent-noise model: which queries may be answered wrongly, how many
/// errors are tolerated, and the prior over error counts.
struct NoiseSpec {
  std::vector<int> error_prone;  // ascending query indices
  int num_queries = 0;
  int model = 1;     // 1: uniform over the ball; 2: truncated binomial in p
  double p = 0.5;    // model 2 only
  int delta = 0;
  int epsilon = 0;
  int epsilon_prime = 0;

  /// Builds the spec for `ds`. An epsilon_prime in the block may lower the
  /// budget below min(epsilon, N nu) but never raise it.
  static NoiseSpec make(const Dataset& ds, const NoiseBlock& block);
  /// The dataset's own noise block, or the noiseless spec.
  static NoiseSpec from_dataset(const Dataset& ds);

  int prone_count() const { return static_cast<int>(error_prone.size()); }
  double nu() const { return num_queries ? double(prone_count()) / num_queries : 0.0; }
  /// Model 1 is model 2 at p = 1/2.
  double effective_p() const { return model == 1 ? 0.5 : p; }
  bool is_error_prone(int query) const;
  NoiseBlock block() const;
};

/// Picks round(nu * N) error-prone queries uniformly at random.
NoiseBlock random_noise_block(int num_queries, double nu, int model, double p,
                              std::mt19937_64& rng);

/// Every set of at most epsilon' error-prone positions, ordered by size and
/// then lexicographically.
std::vector<std::vector<int>> flip_sets(const NoiseSpec& spec);

/// Prior share of a corrupted row with `errors` flips (relative to its
/// source object's prior).
double corruption_share(const NoiseSpec& spec, int errors);

/// Materialized dilated problem: one group per source object holding every
/// corruption of its row within the budget.
struct Dilation {
  Dataset dataset;
  std::vector<int> source;  // source object of each dilated row
  std::vector<int> errors;  // number of flips of each dilated row
};

inline constexpr std::size_t kDefaultMaterializationCap = 1'000'000;

Dilation dilate_explicit(const Dataset& ds, const NoiseSpec& spec,
                         std::size_t cap = kDefaultMaterializationCap);

/// Sufficient statistics of a node of the dilated problem: mismatches of
/// each source object against the answers so far, and how many error-prone
/// queries remain unasked.
struct NoiseNode {
  static constexpr int kEliminated = std::numeric_limits<int>::max();

  std::vector<int> mismatches;
  int unasked_prone = 0;
  QueryMask answered;

  static NoiseNode root(const Dataset& ds, const NoiseSpec& spec);
  /// Source objects still consistent with the answers.
  std::vector<int> survivors(const NoiseSpec& spec) const;
  NoiseNode advance(const Dataset& ds, const NoiseSpec& spec, int query, int response) const;
};

/// Dilated-problem mass of source object i's group at a node.
double implicit_group_mass(const Dataset& ds, const NoiseSpec& spec, int object, int mismatches,
                           int unasked_prone);

/// Reduction factors of a candidate on the dilated problem, computed from
/// the node statistics alone. Groups are source objects.
SplitStats implicit_split_stats(const Dataset& ds, const NoiseSpec& spec, const NoiseNode& node,
                                int query, Objective objective = Objective::GroupId);

/// Whether both children of the split keep at least one dilated row.
bool implicit_splits(const Dataset& ds, const NoiseSpec& spec, const NoiseNode& node, int query);

/// Greedy choice on the dilated problem (Gbs or Gisa rule); empty when no
/// query splits the node.
std::optional<int> choose_noisy(const Dataset& ds, const NoiseSpec& spec, const NoiseNode& node,
                                Strategy rule, TieBreaker& ties);

/// Tree over the implicit dilated problem; leaves name a source object.
struct NoisyTree {
  struct Node {
    int query = -1;  // -1 for leaves
    std::array<int, 2> child{-1, -1};
    int outcome = -1;
  };
  int root = -1;
  std::vector<Node> nodes;
  double expected_queries = 0.0;
};

NoisyTree build_noisy_tree(const Dataset& ds, const NoiseSpec& spec, Strategy rule,
                           const BuildConfig& cfg = {});
nlohmann::json export_noisy_tree(const NoisyTree& tree, const Dataset& ds);

struct NoisyIdentification {
  int object = -1;
  std::vector<std::pair<int, int>> answers;  // (query, response)
};

/// Asks queries chosen on the dilated problem until one source object is
/// left. Throws InconsistentResponse when the answers leave no candidate.
NoisyIdentification identify_with_noise(const Dataset& ds, const NoiseSpec& spec,
                                        const std::function<int(int)>& respond,
                                        Strategy rule = Strategy::Gisa,
                                        TieBreaker ties = TieBreaker());

/// Draws an error count from the model, flips that many random error-prone
/// responses of the true object.
std::vector<std::uint8_t> simulate_errors(const Dataset& ds, const NoiseSpec& spec, int object,
                                          std::mt19937_64& rng);
std::vector<std::uint8_t> simulate_errors(const Dataset& ds, const NoiseSpec& spec, int object,
                                          std::uint64_t seed);

}  // namespace gql
