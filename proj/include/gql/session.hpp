#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "gql/builders.hpp"
#include "gql/noise.hpp"

namespace gql {

/// Selection rules a live session can follow. The noisy variants run GBS or
/// GISA on the implicit dilated problem.
enum class SessionStrategy {
  Gbs,
  Gisa,
  Gqsa,
  Gigqsa,
  MinMin,
  MinMax,
  RandomSearch,
  NoisyGbs,
  NoisyGisa,
};

const char* to_string(SessionStrategy s);
SessionStrategy session_strategy_from_string(const std::string& s);
bool is_noisy(SessionStrategy s);
/// The builder rule behind a strategy (Gbs/Gisa for the noisy variants).
Strategy base_rule(SessionStrategy s);

struct SessionConfig {
  TieBreak tie_break = TieBreak::LowestIndex;
  std::uint64_t seed = 0;
  /// Overrides the strategy's natural stopping rule (noiseless only).
  std::optional<Objective> objective;
  /// Noise model for the noisy strategies; defaults to the dataset's block.
  std::optional<NoiseBlock> noise;
};

/// What the user is asked next.
struct Suggestion {
  bool is_group = false;
  int query = -1;        // single-query strategies
  int query_group = -1;  // group strategies; -1 for random search
  std::vector<std::pair<int, double>> members;
  double cost = 0.0;

  bool offers(int q) const;
  bool operator==(const Suggestion&) const = default;
};

enum class SessionStatus { Active, Identified, Failed };
const char* to_string(SessionStatus s);

struct TranscriptStep {
  Suggestion suggestion;
  int query = -1;
  int response = -1;
  std::size_t surviving_before = 0;
  std::size_t surviving_after = 0;
};

class Session {
 public:
  Session(std::shared_ptr<const Dataset> ds, SessionStrategy strategy, SessionConfig config = {});

  SessionStrategy strategy() const { return strategy_; }
  const SessionConfig& config() const { return config_; }
  const Dataset& dataset() const { return *ds_; }
  SessionStatus status() const { return status_; }
  /// Object (object-id, noisy) or group (group-id) label; -1 unless identified.
  int outcome() const { return outcome_; }
  bool outcome_is_group() const { return objective_ == Objective::GroupId && !noisy(); }
  const std::string& failure() const { return failure_; }
  const std::vector<TranscriptStep>& steps() const { return steps_; }

  /// Current suggestion, computed on first request. Empty when the session
  /// is not active; a node with no informative candidate fails the session.
  const std::optional<Suggestion>& suggest();

  /// Applies an answer. Throws ProtocolViolation (state unchanged) when the
  /// session is finished or the query is not offered; an answer leaving no
  /// candidate moves the session to Failed.
  SessionStatus answer(int query, int response);

  /// Number of surviving candidates (objects, or source objects when noisy).
  std::size_t surviving() const;
  /// Most probable outcomes with their posterior probabilities.
  std::vector<std::pair<int, double>> top_candidates(std::size_t k) const;
  /// Posterior mass of the surviving candidates (weakly decreasing).
  double surviving_mass() const;

  nlohmann::json transcript_json() const;

 private:
  bool noisy() const { return is_noisy(strategy_); }
  void settle();
  std::vector<std::pair<int, double>> candidate_masses() const;

  std::shared_ptr<const Dataset> ds_;
  SessionStrategy strategy_;
  SessionConfig config_;
  Objective objective_ = Objective::ObjectId;
  TieBreaker ties_;
  NodePopulation pop_;
  QueryMask answered_;
  std::optional<NoiseSpec> spec_;
  std::optional<NoiseNode> noise_node_;
  SessionStatus status_ = SessionStatus::Active;
  int outcome_ = -1;
  std::string failure_;
  std::optional<Suggestion> suggestion_;
  bool suggested_ = false;
  std::vector<TranscriptStep> steps_;
};

nlohmann::json to_json(const Suggestion& s, const Dataset& ds);
Suggestion suggestion_from_json(const nlohmann::json& j, const Dataset& ds);
SessionConfig session_config_from_json(const nlohmann::json& j, const Dataset& ds);
nlohmann::json to_json(const SessionConfig& c, const Dataset& ds);

/// Re-runs a transcript on a fresh session; throws ProtocolViolation if a
/// recorded suggestion differs from the recomputed one.
Session replay(std::shared_ptr<const Dataset> ds, const nlohmann::json& transcript);

/// Drives a session with a responder until it finishes. `pick` chooses the
/// query to answer from a group suggestion.
using QueryPicker = std::function<int(const Suggestion&)>;
Session run_session(std::shared_ptr<const Dataset> ds, SessionStrategy strategy,
                    const SessionConfig& config, const std::function<int(int)>& respond,
                    const QueryPicker& pick);

/// In-memory sessions addressed by id. Distinct sessions can be used
/// concurrently; calls on one session are serialized.
class SessionStore {
 public:
  std::string create(std::shared_ptr<const Dataset> ds, SessionStrategy strategy,
                     SessionConfig config);
  std::string adopt(Session session);
  bool contains(const std::string& id) const;

  /// Runs `fn` on the session under its lock; throws NotFound.
  template <typename Fn>
  auto with(const std::string& id, Fn&& fn) {
    auto entry = find(id);
    std::lock_guard<std::mutex> lock(entry->mutex);
    return fn(entry->session);
  }

 private:
  struct Entry {
    explicit Entry(Session s) : session(std::move(s)) {}
    std::mutex mutex;
    Session session;
  };
  std::shared_ptr<Entry> find(const std::string& id) const;

  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::uint64_t next_ = 1;
};

}  // namespace gql
