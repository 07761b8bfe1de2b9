#include "gql/session.hpp"

#include <algorithm>

namespace gql {

namespace {

[[noreturn]] void protocol(const std::string& what) {
  throw Error(ErrorCode::ProtocolViolation, what);
}

constexpr SessionStrategy kAll[] = {
    SessionStrategy::Gbs,    SessionStrategy::Gisa,         SessionStrategy::Gqsa,
    SessionStrategy::Gigqsa, SessionStrategy::MinMin,       SessionStrategy::MinMax,
    SessionStrategy::RandomSearch, SessionStrategy::NoisyGbs, SessionStrategy::NoisyGisa,
};

nlohmann::json noise_json(const NoiseBlock& b, const Dataset& ds) {
  nlohmann::json ids = nlohmann::json::array();
  for (int q : b.error_prone) ids.push_back(ds.queries.at(q));
  nlohmann::json j{{"error_prone", ids}, {"model", b.model}, {"p", b.p}};
  if (b.epsilon_prime) j["epsilon_prime"] = *b.epsilon_prime;
  return j;
}

NoiseBlock noise_from_json(const nlohmann::json& j, const Dataset& ds) {
  NoiseBlock b;
  for (const auto& id : j.at("error_prone")) b.error_prone.push_back(ds.query_index(id.get<std::string>()));
  b.model = j.value("model", 1);
  b.p = j.value("p", 0.5);
  if (j.contains("epsilon_prime") && !j["epsilon_prime"].is_null())
    b.epsilon_prime = j["epsilon_prime"].get<int>();
  return b;
}

}  // namespace

const char* to_string(SessionStrategy s) {
  switch (s) {
    case SessionStrategy::Gbs: return "gbs";
    case SessionStrategy::Gisa: return "gisa";
    case SessionStrategy::Gqsa: return "gqsa";
    case SessionStrategy::Gigqsa: return "gigqsa";
    case SessionStrategy::MinMin: return "min-min";
    case SessionStrategy::MinMax: return "min-max";
    case SessionStrategy::RandomSearch: return "random";
    case SessionStrategy::NoisyGbs: return "noisy-gbs";
    case SessionStrategy::NoisyGisa: return "noisy-gisa";
  }
  return "?";
}

SessionStrategy session_strategy_from_string(const std::string& s) {
  for (auto v : kAll)
    if (s == to_string(v)) return v;
  throw Error(ErrorCode::InvalidArgument, "unknown strategy '" + s + "'");
}

bool is_noisy(SessionStrategy s) {
  return s == SessionStrategy::NoisyGbs || s == SessionStrategy::NoisyGisa;
}

Strategy base_rule(SessionStrategy s) {
  switch (s) {
    case SessionStrategy::Gbs:
    case SessionStrategy::NoisyGbs: return Strategy::Gbs;
    case SessionStrategy::Gisa:
    case SessionStrategy::NoisyGisa: return Strategy::Gisa;
    case SessionStrategy::Gqsa: return Strategy::Gqsa;
    case SessionStrategy::Gigqsa: return Strategy::Gigqsa;
    case SessionStrategy::MinMin: return Strategy::MinMin;
    case SessionStrategy::MinMax: return Strategy::MinMax;
    case SessionStrategy::RandomSearch: return Strategy::RandomSearch;
  }
  return Strategy::Gbs;
}

const char* to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::Active: return "active";
    case SessionStatus::Identified: return "identified";
    case SessionStatus::Failed: return "failed";
  }
  return "?";
}

bool Suggestion::offers(int q) const {
  if (!is_group) return q == query;
  return std::any_of(members.begin(), members.end(),
                     [&](const auto& m) { return m.first == q && m.second > 0.0; });
}

Session::Session(std::shared_ptr<const Dataset> ds, SessionStrategy strategy, SessionConfig config)
    : ds_(std::move(ds)), strategy_(strategy), config_(std::move(config)),
      ties_(config_.tie_break, config_.seed), pop_(NodePopulation::root(*ds_)),
      answered_(ds_->num_queries(), false) {
  if (noisy()) {
    if (config_.objective)
      throw Error(ErrorCode::InvalidArgument, "noisy strategies always identify the object");
    const auto block = config_.noise ? *config_.noise : ds_->noise.value_or(NoiseBlock{});
    spec_ = NoiseSpec::make(*ds_, block);
    config_.noise = spec_->block();
    noise_node_ = NoiseNode::root(*ds_, *spec_);
    validate(*ds_, Identification::Object);
  } else {
    objective_ = config_.objective.value_or(default_objective(base_rule(strategy_)));
    require_compatible(*ds_, base_rule(strategy_), objective_);
  }
  settle();
}

void Session::settle() {
  if (noisy()) {
    const auto alive = noise_node_->survivors(*spec_);
    if (alive.empty()) {
      status_ = SessionStatus::Failed;
    } else if (alive.size() == 1) {
      status_ = SessionStatus::Identified;
      outcome_ = alive.front();
    }
    return;
  }
  if (pop_.empty()) {
    status_ = SessionStatus::Failed;
  } else if (resolved(pop_, objective_)) {
    status_ = SessionStatus::Identified;
    outcome_ = objective_ == Objective::ObjectId ? pop_.members().front()
                                                 : pop_.present_groups().front();
  }
}

const std::optional<Suggestion>& Session::suggest() {
  if (status_ != SessionStatus::Active || suggested_) return suggestion_;
  suggested_ = true;
  Suggestion s;
  if (noisy()) {
    const auto q = choose_noisy(*ds_, *spec_, *noise_node_, base_rule(strategy_), ties_);
    if (q) {
      s.query = *q;
      s.cost = implicit_split_stats(*ds_, *spec_, *noise_node_, *q,
                                    strategy_ == SessionStrategy::NoisyGbs ? Objective::ObjectId
                                                                           : Objective::GroupId)
                   .cost;
      suggestion_ = s;
    }
  } else if (auto c = choose(*ds_, pop_, answered_, base_rule(strategy_), ties_)) {
    s.is_group = c->is_group;
    s.query = c->query;
    s.query_group = c->query_group;
    s.members = std::move(c->members);
    s.cost = c->cost;
    suggestion_ = s;
  }
  if (!suggestion_) {
    status_ = SessionStatus::Failed;
    failure_ = "no informative query remains with " + std::to_string(surviving()) +
               " candidates left";
  }
  return suggestion_;
}

SessionStatus Session::answer(int query, int response) {
  if (status_ != SessionStatus::Active)
    protocol(std::string("session is ") + to_string(status_) + "; no further answers accepted");
  if (query < 0 || query >= ds_->num_queries())
    throw Error(ErrorCode::InvalidArgument, "unknown query index " + std::to_string(query));
  if (response != 0 && response != 1)
    throw Error(ErrorCode::InvalidArgument, "response must be 0 or 1");
  const auto& s = suggest();
  if (!s) protocol("session failed: " + failure_);
  if (answered_[query]) protocol("query '" + ds_->queries[query] + "' was already answered");
  if (!s->offers(query))
    protocol("query '" + ds_->queries[query] + "' is not part of the current suggestion");

  TranscriptStep step;
  step.suggestion = *s;
  step.query = query;
  step.response = response;
  step.surviving_before = surviving();
  answered_[query] = true;
  if (noisy()) {
    noise_node_ = noise_node_->advance(*ds_, *spec_, query, response);
  } else {
    pop_ = pop_.restrict(*ds_, query, response);
  }
  step.surviving_after = surviving();
  steps_.push_back(std::move(step));
  suggestion_.reset();
  suggested_ = false;
  settle();
  if (status_ == SessionStatus::Failed) {
    failure_ = "answer " + ds_->queries[query] + "=" + std::to_string(response) +
               " eliminated every remaining candidate";
  }
  return status_;
}

std::size_t Session::surviving() const {
  if (noisy()) return noise_node_->survivors(*spec_).size();
  return pop_.members().size();
}

std::vector<std::pair<int, double>> Session::candidate_masses() const {
  std::vector<std::pair<int, double>> out;
  if (noisy()) {
    for (int i : noise_node_->survivors(*spec_))
      out.emplace_back(i, implicit_group_mass(*ds_, *spec_, i, noise_node_->mismatches[i],
                                              noise_node_->unasked_prone));
  } else if (objective_ == Objective::GroupId) {
    for (int g : pop_.present_groups()) out.emplace_back(g, pop_.group_mass()[g]);
  } else {
    for (int i : pop_.members()) out.emplace_back(i, ds_->priors[i]);
  }
  return out;
}

double Session::surviving_mass() const {
  double m = 0.0;
  for (const auto& c : candidate_masses()) m += c.second;
  return m;
}

std::vector<std::pair<int, double>> Session::top_candidates(std::size_t k) const {
  auto c = candidate_masses();
  double total = 0.0;
  for (const auto& e : c) total += e.second;
  if (total > 0.0)
    for (auto& e : c) e.second /= total;
  std::stable_sort(c.begin(), c.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (c.size() > k) c.resize(k);
  return c;
}

nlohmann::json to_json(const Suggestion& s, const Dataset& ds) {
  if (!s.is_group) return {{"kind", "query"}, {"query", ds.queries.at(s.query)}, {"cost", s.cost}};
  nlohmann::json members = nlohmann::json::array();
  for (const auto& [q, p] : s.members) members.push_back({{"query", ds.queries.at(q)}, {"p", p}});
  return {{"kind", "group"},
          {"query_group", s.query_group < 0 ? nlohmann::json(nullptr) : nlohmann::json(s.query_group + 1)},
          {"members", members},
          {"cost", s.cost}};
}

Suggestion suggestion_from_json(const nlohmann::json& j, const Dataset& ds) {
  Suggestion s;
  s.cost = j.at("cost").get<double>();
  if (j.at("kind") == "query") {
    s.query = ds.query_index(j.at("query").get<std::string>());
    return s;
  }
  s.is_group = true;
  s.query_group = j.at("query_group").is_null() ? -1 : j.at("query_group").get<int>() - 1;
  for (const auto& m : j.at("members"))
    s.members.emplace_back(ds.query_index(m.at("query").get<std::string>()), m.at("p").get<double>());
  return s;
}

nlohmann::json to_json(const SessionConfig& c, const Dataset& ds) {
  nlohmann::json j{{"tie_break", c.tie_break == TieBreak::LowestIndex ? "index" : "random"},
                   {"seed", c.seed}};
  if (c.objective) j["objective"] = *c.objective == Objective::ObjectId ? "object" : "group";
  if (c.noise) j["noise"] = noise_json(*c.noise, ds);
  return j;
}

SessionConfig session_config_from_json(const nlohmann::json& j, const Dataset& ds) {
  SessionConfig c;
  if (!j.is_object()) throw Error(ErrorCode::Malformed, "session config must be an object");
  const auto tb = j.value("tie_break", std::string("index"));
  if (tb != "index" && tb != "random")
    throw Error(ErrorCode::Malformed, "tie_break must be 'index' or 'random'");
  c.tie_break = tb == "index" ? TieBreak::LowestIndex : TieBreak::SeededRandom;
  c.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("objective")) {
    const auto o = j.at("objective").get<std::string>();
    if (o != "object" && o != "group") throw Error(ErrorCode::Malformed, "objective must be 'object' or 'group'");
    c.objective = o == "object" ? Objective::ObjectId : Objective::GroupId;
  }
  if (j.contains("noise") && !j.at("noise").is_null()) c.noise = noise_from_json(j.at("noise"), ds);
  return c;
}

nlohmann::json Session::transcript_json() const {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : steps_) {
    steps.push_back({{"suggestion", to_json(s.suggestion, *ds_)},
                     {"query", ds_->queries[s.query]},
                     {"response", s.response},
                     {"surviving_before", s.surviving_before},
                     {"surviving_after", s.surviving_after}});
  }
  nlohmann::json j{{"strategy", to_string(strategy_)},
                   {"config", to_json(config_, *ds_)},
                   {"steps", steps},
                   {"status", to_string(status_)},
                   {"surviving", surviving()}};
  if (status_ == SessionStatus::Identified) {
    if (outcome_is_group()) {
      j["outcome"] = {{"group", outcome_ + 1}};
    } else {
      j["outcome"] = {{"object", ds_->objects[outcome_]}};
    }
  }
  if (status_ == SessionStatus::Failed) j["failure"] = failure_;
  return j;
}

Session replay(std::shared_ptr<const Dataset> ds, const nlohmann::json& transcript) {
  try {
    const auto strategy = session_strategy_from_string(transcript.at("strategy").get<std::string>());
    Session s(ds, strategy, session_config_from_json(transcript.value("config", nlohmann::json::object()), *ds));
    for (const auto& step : transcript.at("steps")) {
      const auto& now = s.suggest();
      if (!now) protocol("replay: session finished before the transcript did");
      if (step.contains("suggestion") && !(suggestion_from_json(step.at("suggestion"), *ds) == *now))
        protocol("replay: recorded suggestion differs at step " + std::to_string(s.steps().size() + 1));
      s.answer(ds->query_index(step.at("query").get<std::string>()), step.at("response").get<int>());
    }
    if (transcript.contains("status") && transcript.at("status") != to_string(s.status()))
      protocol("replay: final status differs from the transcript");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Malformed, std::string("transcript: ") + e.what());
  }
}

Session run_session(std::shared_ptr<const Dataset> ds, SessionStrategy strategy,
                    const SessionConfig& config, const std::function<int(int)>& respond,
                    const QueryPicker& pick) {
  Session s(std::move(ds), strategy, config);
  while (s.status() == SessionStatus::Active) {
    const auto& sug = s.suggest();
    if (!sug) break;
    const int q = sug->is_group ? pick(*sug) : sug->query;
    s.answer(q, respond(q));
  }
  return s;
}

std::string SessionStore::create(std::shared_ptr<const Dataset> ds, SessionStrategy strategy,
                                 SessionConfig config) {
  return adopt(Session(std::move(ds), strategy, std::move(config)));
}

std::string SessionStore::adopt(Session session) {
  auto entry = std::make_shared<Entry>(std::move(session));
  std::lock_guard<std::mutex> lock(mutex_);
  const std::string id = "s" + std::to_string(next_++);
  sessions_.emplace(id, std::move(entry));
  return id;
}

bool SessionStore::contains(const std::string& id) const {
  std::lock_guard<std::mutex> lock(mutex_);
  return sessions_.count(id) > 0;
}

std::shared_ptr<SessionStore::Entry> SessionStore::find(const std::string& id) const {
  std::lock_guard<std::mutex> lock(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorCode::NotFound, "unknown session '" + id + "'");
  return it->second;
}

}  // namespace gql
