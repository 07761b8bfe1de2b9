#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <fstream>
#include <thread>

#include "fixtures.hpp"
#include "gql/service.hpp"

using namespace gql;
using namespace gql::testing;

namespace {

nlohmann::json call(Service& svc, const std::string& method, const std::string& path,
                    const nlohmann::json& body, int expect) {
  const auto r = svc.handle(method, path, body.is_null() ? "" : body.dump());
  CAPTURE(method);
  CAPTURE(path);
  CAPTURE(r.body.dump());
  CHECK(r.status == expect);
  return r.body;
}

std::string upload(Service& svc, const Dataset& ds, const std::string& name) {
  return call(svc, "POST", "/api/datasets", {{"name", name}, {"problem", dataset_to_json(ds)}}, 201)["id"];
}

// Minimal HTTP/1.1 exchange over a loopback socket.
std::string http(int port, const std::string& request) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
  REQUIRE(::send(fd, request.data(), request.size(), 0) == static_cast<ssize_t>(request.size()));
  std::string out;
  char buf[4096];
  for (ssize_t n; (n = ::recv(fd, buf, sizeof buf, 0)) > 0;) out.append(buf, n);
  ::close(fd);
  return out;
}

}  // namespace

TEST_CASE("datasets upload and listing") {
  Service svc;
  const auto id = upload(svc, toy1(), "toy1");
  CHECK(id == "d1");
  const auto list = call(svc, "GET", "/api/datasets", nullptr, 200);
  REQUIRE(list.size() == 1);
  CHECK(list[0]["name"] == "toy1");
  CHECK(list[0]["objects"] == 4);
  CHECK(list[0]["object_groups"] == 2);
  const auto one = call(svc, "GET", "/api/datasets/d1", nullptr, 200);
  CHECK(dataset_from_json(one["document"]) == toy1());
  // A bare problem document is accepted too.
  CHECK(call(svc, "POST", "/api/datasets", dataset_to_json(toy2()), 201)["id"] == "d2");
  call(svc, "POST", "/api/datasets", {{"objects", {"a"}}}, 400);
  CHECK(svc.handle("POST", "/api/datasets", "{not json").status == 400);
  call(svc, "GET", "/api/datasets/d9", nullptr, 404);
  call(svc, "DELETE", "/api/datasets", nullptr, 405);
  call(svc, "GET", "/api/nothing", nullptr, 404);
  CHECK(call(svc, "GET", "/api/health", nullptr, 200)["status"] == "ok");
}

TEST_CASE("gisa session over the api") {
  Service svc;
  const auto d = upload(svc, toy1(), "toy1");
  const auto created = call(svc, "POST", "/api/sessions", {{"dataset", d}, {"strategy", "gisa"}}, 201);
  const std::string id = created["id"];
  CHECK(created["status"] == "active");
  CHECK(created["suggestion"]["kind"] == "query");
  CHECK(created["suggestion"]["query"] == "q2");
  CHECK(created["surviving"] == 4);

  const auto done = call(svc, "POST", "/api/sessions/" + id + "/answers",
                         {{"query", "q2"}, {"response", 0}}, 200);
  CHECK(done["status"] == "identified");
  CHECK(done["outcome"]["group"] == 2);
  CHECK(done["history"].size() == 1);
  CHECK(done["suggestion"].is_null());
  CHECK(done["top"][0]["group"] == 2);

  call(svc, "POST", "/api/sessions/" + id + "/answers", {{"query", "q1"}, {"response", 0}}, 409);
  call(svc, "GET", "/api/sessions/nope", nullptr, 404);
  call(svc, "POST", "/api/sessions/nope/answers", {{"query", "q1"}, {"response", 0}}, 404);
  call(svc, "POST", "/api/sessions", {{"dataset", d}, {"strategy", "bogus"}}, 400);
  call(svc, "POST", "/api/sessions", {{"dataset", "d7"}, {"strategy", "gisa"}}, 404);
  call(svc, "POST", "/api/sessions", {{"dataset", d}, {"strategy", "gqsa"}}, 400);
  call(svc, "POST", "/api/sessions", {{"strategy", "gqsa"}}, 400);
}

TEST_CASE("group suggestions and protocol errors") {
  Service svc;
  const auto d = upload(svc, toy2(), "toy2");
  const auto s = call(svc, "POST", "/api/sessions", {{"dataset", d}, {"strategy", "gqsa"}}, 201);
  const std::string id = s["id"];
  REQUIRE(s["suggestion"]["kind"] == "group");
  CHECK(s["suggestion"]["query_group"] == 1);
  CHECK(s["suggestion"]["members"].size() == 2);
  // q3 belongs to the other query group.
  call(svc, "POST", "/api/sessions/" + id + "/answers", {{"query", "q3"}, {"response", 1}}, 409);
  call(svc, "POST", "/api/sessions/" + id + "/answers", {{"query", "q1"}, {"response", "yes"}}, 400);
  call(svc, "POST", "/api/sessions/" + id + "/answers", {{"query", "zz"}, {"response", 1}}, 400);
  call(svc, "POST", "/api/sessions/" + id + "/answers", {{"query", "q1"}, {"response", 3}}, 400);
  CHECK(call(svc, "GET", "/api/sessions/" + id, nullptr, 200)["history"].empty());
  const auto next = call(svc, "POST", "/api/sessions/" + id + "/answers",
                         {{"query", "q1"}, {"response", true}}, 200);
  CHECK(next["history"][0]["response"] == 1);
}

TEST_CASE("an eliminating answer returns 422 and fails the session") {
  Service svc;
  const auto d = upload(svc, load_dataset_string(R"({
    "objects": ["a", "b", "c"], "queries": ["x", "y", "z"],
    "matrix": [[0, 0, 0], [1, 0, 0], [1, 1, 0]], "query_groups": [1, 1, 1]})"),
                        "constant");
  const auto s = call(svc, "POST", "/api/sessions", {{"dataset", d}, {"strategy", "gqsa"}}, 201);
  const std::string id = s["id"];
  const auto failed = call(svc, "POST", "/api/sessions/" + id + "/answers",
                           {{"query", "z"}, {"response", 1}}, 422);
  CHECK(failed["status"] == "failed");
  CHECK(failed["error"]["code"] == "inconsistent_response");
  CHECK(failed["surviving"] == 0);
  call(svc, "POST", "/api/sessions/" + id + "/answers", {{"query", "x"}, {"response", 1}}, 409);
}

TEST_CASE("api transcripts replay in process") {
  Service svc;
  const auto ds = toy2();
  const auto d = upload(svc, ds, "toy2");
  const auto s = call(svc, "POST", "/api/sessions",
                      {{"dataset", d}, {"strategy", "gqsa"},
                       {"config", {{"tie_break", "random"}, {"seed", 3}}}},
                      201);
  const std::string id = s["id"];
  auto cur = s;
  while (cur["status"] == "active") {
    const std::string q = cur["suggestion"]["members"].back()["query"];
    const int r = ds.response(2, ds.query_index(q));
    cur = call(svc, "POST", "/api/sessions/" + id + "/answers", {{"query", q}, {"response", r}}, 200);
  }
  CHECK(cur["outcome"]["object"] == "t3");
  const auto t = call(svc, "GET", "/api/sessions/" + id + "/transcript", nullptr, 200);
  CHECK(t["dataset"] == d);
  auto local = replay(std::make_shared<const Dataset>(ds), t);
  auto expected = t;
  expected.erase("dataset");
  CHECK(local.transcript_json() == expected);
  CHECK(call(svc, "POST", "/api/replay", {{"dataset", d}, {"transcript", t}}, 200) == expected);
  auto bad = t;
  bad["steps"][0]["query"] = "q1";
  call(svc, "POST", "/api/replay", {{"dataset", d}, {"transcript", bad}}, 409);
}

TEST_CASE("trees over the api") {
  Service svc;
  const auto d1 = upload(svc, toy1(), "toy1");
  const auto built = call(svc, "POST", "/api/trees", {{"dataset", d1}, {"strategy", "gisa"}}, 201);
  CHECK(built["evaluation"]["expected_queries"] == doctest::Approx(1.0));
  CHECK(built["evaluation"]["entropy_bound"] == doctest::Approx(kH_3_4));
  const std::string tid = built["id"];
  const auto doc = call(svc, "GET", "/api/trees/" + tid, nullptr, 200);
  CHECK(import_tree(doc, toy1()).nodes.size() == 3);
  CHECK(call(svc, "GET", "/api/trees/" + tid + "/evaluation", nullptr, 200) == built["evaluation"]);
  call(svc, "GET", "/api/trees/t99", nullptr, 404);
  call(svc, "POST", "/api/trees", {{"dataset", d1}, {"strategy", "gqsa"}}, 400);

  const auto d3 = upload(svc, toy3(), "toy3");
  const auto noisy = call(svc, "POST", "/api/trees", {{"dataset", d3}, {"strategy", "noisy-gisa"}}, 201);
  CHECK(noisy["evaluation"]["epsilon_prime"] == 1);
  CHECK(noisy["evaluation"]["expected_queries"].get<double>() > 0.0);
}

TEST_CASE("session events are appended to disk") {
  const auto dir = std::filesystem::temp_directory_path() / "gql_service_test";
  std::filesystem::remove_all(dir);
  Service svc(dir);
  const auto d = upload(svc, toy1(), "toy1");
  const std::string id = call(svc, "POST", "/api/sessions", {{"dataset", d}, {"strategy", "gbs"}}, 201)["id"];
  call(svc, "POST", "/api/sessions/" + id + "/answers", {{"query", "q1"}, {"response", 1}}, 200);
  std::ifstream in(dir / (id + ".jsonl"));
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("event"));
    ++lines;
  }
  CHECK(lines == 2);
  std::filesystem::remove_all(dir);
}

TEST_CASE("address parsing") {
  CHECK(parse_address("0.0.0.0:8080") == std::pair<std::string, int>{"0.0.0.0", 8080});
  CHECK(parse_address("9000") == std::pair<std::string, int>{"127.0.0.1", 9000});
  CHECK_THROWS_AS(parse_address("host:abc"), Error);
  CHECK_THROWS_AS(parse_address("host:70000"), Error);
}

TEST_CASE("http transport") {
  Service svc;
  upload(svc, toy1(), "toy1");
  HttpServer server(svc);
  const int port = server.bind("127.0.0.1", 0);
  std::thread worker([&] { server.run(); });
  std::string health;
  for (int attempt = 0; attempt < 50 && health.empty(); ++attempt) {
    health = http(port, "GET /api/health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n");
    if (health.empty()) std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  CHECK(health.rfind("HTTP/1.1 200", 0) == 0);
  const std::string body = R"({"dataset":"d1","strategy":"gisa"})";
  const auto created = http(port, "POST /api/sessions HTTP/1.1\r\nHost: x\r\nConnection: close\r\n"
                                  "Content-Type: application/json\r\nContent-Length: " +
                                      std::to_string(body.size()) + "\r\n\r\n" + body);
  CHECK(created.rfind("HTTP/1.1 201", 0) == 0);
  CHECK(created.find("\"q2\"") != std::string::npos);
  const auto missing = http(port, "GET /api/sessions/zz HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n");
  CHECK(missing.rfind("HTTP/1.1 404", 0) == 0);
  server.stop();
  worker.join();
}
