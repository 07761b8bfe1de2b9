#include <doctest.h>

#include <random>
#include <thread>

#include "fixtures.hpp"
#include "gql/session.hpp"
#include "random_instances.hpp"

using namespace gql;
using namespace gql::testing;

namespace {

std::shared_ptr<const Dataset> shared(Dataset ds) {
  return std::make_shared<const Dataset>(std::move(ds));
}

// Expected number of answers until the session finishes for a true object,
// averaging over the user's choice within a suggested group.
double expected_length(const Session& s, int object) {
  Session cur = s;
  if (cur.status() != SessionStatus::Active) return 0.0;
  const auto sug = cur.suggest();
  REQUIRE(sug.has_value());
  const auto& ds = cur.dataset();
  if (!sug->is_group) {
    cur.answer(sug->query, ds.response(object, sug->query));
    return 1.0 + expected_length(cur, object);
  }
  double total = 0.0;
  for (const auto& [q, p] : sug->members) {
    if (p <= 0.0) continue;
    Session next = cur;
    next.answer(q, ds.response(object, q));
    total += p * (1.0 + expected_length(next, object));
  }
  return total;
}

double online_expectation(std::shared_ptr<const Dataset> ds, SessionStrategy strategy) {
  Session root(ds, strategy);
  double e = 0.0;
  for (int i = 0; i < ds->num_objects(); ++i) e += ds->priors[i] * expected_length(root, i);
  return e;
}

}  // namespace

TEST_CASE("gisa session on toy 1") {
  auto ds = shared(toy1());
  Session s(ds, SessionStrategy::Gisa);
  const auto sug = s.suggest();
  REQUIRE(sug.has_value());
  CHECK_FALSE(sug->is_group);
  CHECK(ds->queries[sug->query] == "q2");

  Session a = s;
  CHECK(a.answer(sug->query, 0) == SessionStatus::Identified);
  CHECK(a.outcome_is_group());
  CHECK(a.outcome() == 1);
  CHECK(a.surviving() == 1);
  CHECK_FALSE(a.suggest().has_value());

  Session b = s;
  CHECK(b.answer(sug->query, 1) == SessionStatus::Identified);
  CHECK(b.outcome() == 0);
  CHECK(b.surviving() == 3);
  const auto top = b.top_candidates(5);
  REQUIRE(top.size() == 1);
  CHECK(top[0].second == doctest::Approx(1.0));
}

TEST_CASE("gqsa session on toy 2") {
  auto ds = shared(toy2());
  // Both query groups tie at the root; index ties take the first.
  Session first(ds, SessionStrategy::Gqsa);
  REQUIRE(first.suggest().has_value());
  CHECK(first.suggest()->is_group);
  CHECK(first.suggest()->query_group == 0);

  SessionConfig cfg;
  cfg.tie_break = TieBreak::SeededRandom;
  cfg.seed = 3;
  Session s(ds, SessionStrategy::Gqsa, cfg);
  const auto& root = s.suggest();
  REQUIRE(root.has_value());
  CHECK(root->query_group == 1);
  CHECK(root->cost == doctest::Approx(first.suggest()->cost).epsilon(1e-12));
  const int q3 = ds->query_index("q3");
  REQUIRE(root->offers(q3));
  CHECK(s.answer(q3, 1) == SessionStatus::Active);
  const auto& next = s.suggest();
  REQUIRE(next.has_value());
  CHECK(next->query_group == 0);
  REQUIRE(next->members.size() == 2);
  CHECK(next->members[0].second == doctest::Approx(0.5));
  CHECK(next->members[1].second == doctest::Approx(0.5));
  CHECK(s.surviving() == 2);
}

TEST_CASE("strategy requirements are checked at creation") {
  CHECK_THROWS_AS(Session(shared(toy1()), SessionStrategy::Gqsa), Error);
  CHECK_THROWS_AS(Session(shared(toy2()), SessionStrategy::Gisa), Error);
  CHECK_THROWS_AS(session_strategy_from_string("bogus"), Error);
  for (auto name : {"gbs", "gisa", "gqsa", "gigqsa", "min-min", "min-max", "random", "noisy-gbs",
                    "noisy-gisa"})
    CHECK(std::string(to_string(session_strategy_from_string(name))) == name);
}

TEST_CASE("noisy gisa session recovers from an error") {
  auto ds = shared(toy3());
  // Row of t2 with one error-prone answer flipped is answered (1, 0, 1).
  const std::vector<int> answers{1, 0, 1};
  Session s(ds, SessionStrategy::NoisyGisa);
  while (s.status() == SessionStatus::Active) {
    const auto& sug = s.suggest();
    REQUIRE(sug.has_value());
    s.answer(sug->query, answers[sug->query]);
  }
  REQUIRE(s.status() == SessionStatus::Identified);
  CHECK(ds->objects[s.outcome()] == "t2");
  CHECK_FALSE(s.outcome_is_group());
}

TEST_CASE("protocol violations leave the state unchanged") {
  auto ds = shared(toy1());
  Session s(ds, SessionStrategy::Gbs);
  const auto sug = *s.suggest();
  const int other = (sug.query + 1) % ds->num_queries();
  CHECK_THROWS_AS(s.answer(other, 0), Error);
  try {
    s.answer(other, 0);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ProtocolViolation);
  }
  CHECK_THROWS_AS(s.answer(sug.query, 2), Error);
  CHECK_THROWS_AS(s.answer(99, 0), Error);
  CHECK(s.steps().empty());
  CHECK(*s.suggest() == sug);

  while (s.status() == SessionStatus::Active) s.answer(s.suggest()->query, 0);
  CHECK(s.status() == SessionStatus::Identified);
  CHECK_THROWS_AS(s.answer(sug.query, 0), Error);
}

TEST_CASE("an answer no candidate gives fails the session") {
  // q3 is constant (0) on every object, so a group offering it can receive 1.
  auto ds = shared(load_dataset_string(R"({
    "objects": ["a", "b", "c"], "queries": ["x", "y", "z"],
    "matrix": [[0, 0, 0], [1, 0, 0], [1, 1, 0]],
    "query_groups": [1, 2, 2]})"));
  Session s(ds, SessionStrategy::Gqsa);
  while (s.status() == SessionStatus::Active) {
    const auto& sug = s.suggest();
    REQUIRE(sug.has_value());
    if (sug->offers(2)) {
      CHECK(s.answer(2, 1) == SessionStatus::Failed);
      break;
    }
    s.answer(sug->is_group ? sug->members[0].first : sug->query, 1);
  }
  REQUIRE(s.status() == SessionStatus::Failed);
  {
    CHECK(s.failure().find("z=1") != std::string::npos);
    const auto t = s.transcript_json();
    CHECK(t["status"] == "failed");
    CHECK_FALSE(t["steps"].empty());
  }
}

TEST_CASE("transcripts replay") {
  auto ds = shared(toy2());
  SessionConfig cfg;
  cfg.tie_break = TieBreak::SeededRandom;
  cfg.seed = 11;
  const auto row = 1;
  auto s = run_session(
      ds, SessionStrategy::Gqsa, cfg, [&](int q) { return ds->response(row, q); },
      [](const Suggestion& sug) { return sug.members.back().first; });
  REQUIRE(s.status() == SessionStatus::Identified);
  CHECK(s.outcome() == row);
  const auto t = s.transcript_json();
  CHECK(t["outcome"]["object"] == "t2");
  const auto again = replay(ds, nlohmann::json::parse(t.dump()));
  CHECK(again.transcript_json() == t);

  auto tampered = t;
  tampered["steps"][0]["suggestion"]["cost"] = 0.123;
  CHECK_THROWS_AS(replay(ds, tampered), Error);

  Session fresh(ds, SessionStrategy::Gqsa);
  const auto empty = fresh.transcript_json();
  CHECK(empty["steps"].empty());
  CHECK(empty["status"] == "active");
  CHECK(replay(ds, empty).status() == SessionStatus::Active);
  CHECK_THROWS_AS(replay(ds, nlohmann::json{{"steps", 3}}), Error);
}

TEST_CASE("online sessions follow the offline tree") {
  std::mt19937_64 rng(404);
  struct Case {
    SessionStrategy session;
    Strategy rule;
    int object_groups;
    int query_groups;
  };
  const Case cases[] = {
      {SessionStrategy::Gbs, Strategy::Gbs, 0, 0},
      {SessionStrategy::Gisa, Strategy::Gisa, 3, 0},
      {SessionStrategy::Gqsa, Strategy::Gqsa, 0, 3},
      {SessionStrategy::Gigqsa, Strategy::Gigqsa, 3, 3},
  };
  for (int trial = 0; trial < 10; ++trial) {
    for (const auto& c : cases) {
      auto ds = shared(random_instance(rng, 7, 6, c.object_groups, c.query_groups));
      DecisionTree tree;
      try {
        tree = build_tree(*ds, c.rule);
      } catch (const Error&) {
        continue;
      }
      CAPTURE(to_string(c.rule));
      CHECK(online_expectation(ds, c.session) ==
            doctest::Approx(evaluate_by_traversal(tree, *ds)).epsilon(1e-9));
    }
  }
}

TEST_CASE("sessions shrink monotonically and never repeat a query") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto ds = shared(random_instance(rng, 12, 9, 0, 3));
    std::uniform_int_distribution<int> who(0, ds->num_objects() - 1);
    const int obj = who(rng);
    for (auto strategy : {SessionStrategy::Gbs, SessionStrategy::Gqsa, SessionStrategy::MinMin,
                          SessionStrategy::MinMax, SessionStrategy::RandomSearch}) {
      try {
        Session s(ds, strategy);
        std::set<int> asked;
        double mass = s.surviving_mass();
        while (s.status() == SessionStatus::Active) {
          const auto& sug = s.suggest();
          if (!sug) break;
          const int q = sug->is_group ? sug->members.front().first : sug->query;
          CHECK(asked.insert(q).second);
          s.answer(q, ds->response(obj, q));
          CHECK(s.surviving_mass() <= mass + 1e-12);
          mass = s.surviving_mass();
        }
        if (s.status() == SessionStatus::Identified) {
          CHECK(s.outcome() == obj);
        }
      } catch (const Error&) {
      }
    }
  }
}

TEST_CASE("session store serializes per session") {
  SessionStore store;
  auto ds = shared(toy1());
  std::vector<std::string> ids;
  for (int i = 0; i < 8; ++i) ids.push_back(store.create(ds, SessionStrategy::Gbs, {}));
  CHECK(ids.front() == "s1");
  CHECK(store.contains("s8"));
  CHECK_FALSE(store.contains("s9"));
  CHECK_THROWS_AS(store.with("nope", [](Session& s) { return s.surviving(); }), Error);

  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (int k = 0; k < 8; ++k) {
        const auto& id = ids[(k + t) % ids.size()];
        store.with(id, [&](Session& s) {
          if (s.status() != SessionStatus::Active) return 0;
          const auto sug = *s.suggest();
          s.answer(sug.query, ds->response(2, sug.query));
          return 1;
        });
      }
    });
  }
  for (auto& th : threads) th.join();
  for (const auto& id : ids) {
    store.with(id, [&](Session& s) {
      while (s.status() == SessionStatus::Active)
        s.answer(s.suggest()->query, ds->response(2, s.suggest()->query));
      CHECK(ds->objects[s.outcome()] == "t3");
      return 0;
    });
  }
}
