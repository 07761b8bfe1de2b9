#include "gql/service.hpp"

#include <fstream>
#include <regex>

#include <httplib.h>

#include "gql/noise.hpp"
#include "gql/tree.hpp"

namespace gql {

namespace {

constexpr std::size_t kTopCandidates = 5;

ApiResponse error_response(int status, const std::string& code, const std::string& message) {
  return {status, {{"error", {{"code", code}, {"message", message}}}}};
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound: return 404;
    case ErrorCode::ProtocolViolation: return 409;
    case ErrorCode::InconsistentResponse:
    case ErrorCode::StuckNode:
    case ErrorCode::GroupExhausted:
    case ErrorCode::TreeMismatch: return 422;
    default: return 400;
  }
}

[[noreturn]] void malformed(const std::string& what) { throw Error(ErrorCode::Malformed, what); }

const nlohmann::json& field(const nlohmann::json& body, const char* name) {
  if (!body.is_object() || !body.contains(name)) malformed(std::string("missing field '") + name + "'");
  return body.at(name);
}

std::string string_field(const nlohmann::json& body, const char* name) {
  const auto& v = field(body, name);
  if (!v.is_string()) malformed(std::string("field '") + name + "' must be a string");
  return v.get<std::string>();
}

BuildConfig build_config_from_json(const nlohmann::json& j) {
  BuildConfig cfg;
  if (j.is_null()) return cfg;
  if (!j.is_object()) malformed("config must be an object");
  const auto tb = j.value("tie_break", std::string("index"));
  if (tb != "index" && tb != "random") malformed("tie_break must be 'index' or 'random'");
  cfg.tie_break = tb == "index" ? TieBreak::LowestIndex : TieBreak::SeededRandom;
  cfg.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("objective")) {
    const auto o = j.at("objective").get<std::string>();
    if (o != "object" && o != "group") malformed("objective must be 'object' or 'group'");
    cfg.objective = o == "object" ? Objective::ObjectId : Objective::GroupId;
  }
  return cfg;
}

}  // namespace

Service::Service(std::optional<std::filesystem::path> transcript_dir)
    : transcript_dir_(std::move(transcript_dir)) {
  if (transcript_dir_) std::filesystem::create_directories(*transcript_dir_);
}

std::string Service::add_dataset(Dataset ds, const std::string& name) {
  validate(ds);
  std::lock_guard<std::mutex> lock(mutex_);
  const auto id = "d" + std::to_string(next_dataset_++);
  datasets_[id] = {name.empty() ? id : name, std::make_shared<const Dataset>(std::move(ds))};
  return id;
}

Service::StoredDataset Service::dataset(const std::string& id) const {
  std::lock_guard<std::mutex> lock(mutex_);
  auto it = datasets_.find(id);
  if (it == datasets_.end()) throw Error(ErrorCode::NotFound, "unknown dataset '" + id + "'");
  return it->second;
}

nlohmann::json Service::dataset_summary(const std::string& id, const StoredDataset& d) const {
  const auto& ds = *d.data;
  return {{"id", id},
          {"name", d.name},
          {"objects", ds.num_objects()},
          {"queries", ds.num_queries()},
          {"object_groups", ds.object_groups ? nlohmann::json(ds.num_object_groups()) : nlohmann::json()},
          {"query_groups", ds.query_groups ? nlohmann::json(ds.num_query_groups()) : nlohmann::json()},
          {"noise", ds.noise.has_value()}};
}

nlohmann::json Service::resource(const std::string& id, Session& s) const {
  const auto& ds = s.dataset();
  nlohmann::json history = nlohmann::json::array();
  for (const auto& step : s.steps())
    history.push_back({{"query", ds.queries[step.query]},
                       {"response", step.response},
                       {"surviving", step.surviving_after}});
  const auto& sug = s.suggest();
  nlohmann::json top = nlohmann::json::array();
  for (const auto& [label, p] : s.top_candidates(kTopCandidates)) {
    if (s.outcome_is_group())
      top.push_back({{"group", label + 1}, {"p", p}});
    else
      top.push_back({{"object", ds.objects[label]}, {"p", p}});
  }
  nlohmann::json j{{"id", id},
                   {"dataset", session_dataset_.at(id)},
                   {"strategy", to_string(s.strategy())},
                   {"status", to_string(s.status())},
                   {"suggestion", sug ? to_json(*sug, ds) : nlohmann::json()},
                   {"history", history},
                   {"surviving", s.surviving()},
                   {"surviving_mass", s.surviving_mass()},
                   {"top", top},
                   {"outcome", nlohmann::json()}};
  if (s.status() == SessionStatus::Identified) {
    j["outcome"] = s.outcome_is_group() ? nlohmann::json{{"group", s.outcome() + 1}}
                                        : nlohmann::json{{"object", ds.objects[s.outcome()]}};
  }
  if (s.status() == SessionStatus::Failed) j["failure"] = s.failure();
  return j;
}

void Service::persist(const std::string& id, const nlohmann::json& event) const {
  if (!transcript_dir_) return;
  std::ofstream out(*transcript_dir_ / (id + ".jsonl"), std::ios::app);
  out << event.dump() << '\n';
}

ApiResponse Service::create_session(const nlohmann::json& body) {
  const auto ds_id = string_field(body, "dataset");
  const auto d = dataset(ds_id);
  const auto strategy = session_strategy_from_string(string_field(body, "strategy"));
  const auto config = session_config_from_json(body.value("config", nlohmann::json::object()), *d.data);
  const auto id = sessions_.create(d.data, strategy, config);
  {
    std::lock_guard<std::mutex> lock(mutex_);
    session_dataset_[id] = ds_id;
  }
  return sessions_.with(id, [&](Session& s) {
    persist(id, {{"event", "created"}, {"dataset", ds_id}, {"strategy", to_string(strategy)},
                 {"config", to_json(s.config(), *d.data)}});
    std::lock_guard<std::mutex> lock(mutex_);
    return ApiResponse{201, resource(id, s)};
  });
}

ApiResponse Service::answer(const std::string& id, const nlohmann::json& body) {
  const auto query = string_field(body, "query");
  const auto& r = field(body, "response");
  int response = -1;
  if (r.is_boolean()) response = r.get<bool>() ? 1 : 0;
  else if (r.is_number_integer()) response = r.get<int>();
  else malformed("response must be 0, 1 or a boolean");
  return sessions_.with(id, [&](Session& s) {
    int q = -1;
    try {
      q = s.dataset().query_index(query);
    } catch (const Error&) {
      malformed("unknown query '" + query + "'");
    }
    const auto status = s.answer(q, response);
    persist(id, {{"event", "answer"}, {"query", query}, {"response", response},
                 {"status", to_string(status)}});
    std::lock_guard<std::mutex> lock(mutex_);
    auto res = resource(id, s);
    if (status == SessionStatus::Failed) {
      res["error"] = {{"code", "inconsistent_response"}, {"message", s.failure()}};
      return ApiResponse{422, res};
    }
    return ApiResponse{200, res};
  });
}

ApiResponse Service::build(const nlohmann::json& body) {
  const auto ds_id = string_field(body, "dataset");
  const auto d = dataset(ds_id);
  const auto name = string_field(body, "strategy");
  const auto config = body.value("config", nlohmann::json::object());
  StoredTree t;
  t.dataset = ds_id;
  t.strategy = name;
  if (name.rfind("noisy-", 0) == 0) {
    const auto rule = session_strategy_from_string(name) == SessionStrategy::NoisyGbs ? Strategy::Gbs
                                                                                     : Strategy::Gisa;
    const auto scfg = session_config_from_json(config, *d.data);
    const auto spec = NoiseSpec::make(*d.data, scfg.noise ? *scfg.noise
                                                          : d.data->noise.value_or(NoiseBlock{}));
    BuildConfig cfg;
    cfg.tie_break = scfg.tie_break;
    cfg.seed = scfg.seed;
    const auto tree = build_noisy_tree(*d.data, spec, rule, cfg);
    t.document = export_noisy_tree(tree, *d.data);
    t.evaluation = {{"expected_queries", tree.expected_queries},
                    {"epsilon_prime", spec.epsilon_prime},
                    {"nodes", tree.nodes.size()}};
  } else {
    const auto tree = build_tree(*d.data, strategy_from_string(name), build_config_from_json(config));
    t.document = export_tree(tree, *d.data);
    t.evaluation = to_json(evaluate_by_formula(tree, *d.data));
  }
  std::lock_guard<std::mutex> lock(mutex_);
  const auto id = "t" + std::to_string(next_tree_++);
  trees_[id] = t;
  return {201, {{"id", id}, {"dataset", ds_id}, {"strategy", name}, {"evaluation", t.evaluation}}};
}

ApiResponse Service::route(const std::string& method, const std::string& path,
                           const nlohmann::json& body) {
  static const std::regex dataset_re("^/api/datasets/([^/]+)$");
  static const std::regex session_re("^/api/sessions/([^/]+)$");
  static const std::regex answers_re("^/api/sessions/([^/]+)/answers$");
  static const std::regex transcript_re("^/api/sessions/([^/]+)/transcript$");
  static const std::regex tree_re("^/api/trees/([^/]+)$");
  static const std::regex evaluation_re("^/api/trees/([^/]+)/evaluation$");
  std::smatch m;
  auto only = [&](const char* allowed) {
    if (method != allowed)
      throw ApiResponse(error_response(405, "method_not_allowed", method + " " + path));
  };

  if (path == "/api/health") {
    only("GET");
    return {200, {{"status", "ok"}}};
  }
  if (path == "/api/datasets") {
    if (method == "GET") {
      nlohmann::json list = nlohmann::json::array();
      std::lock_guard<std::mutex> lock(mutex_);
      for (const auto& [id, d] : datasets_) list.push_back(dataset_summary(id, d));
      return {200, list};
    }
    only("POST");
    const bool wrapped = body.is_object() && body.contains("problem");
    const auto name = wrapped ? body.value("name", std::string()) : std::string();
    const auto id = add_dataset(dataset_from_json(wrapped ? body.at("problem") : body), name);
    return {201, dataset_summary(id, dataset(id))};
  }
  if (std::regex_match(path, m, dataset_re)) {
    only("GET");
    const auto d = dataset(m[1]);
    auto j = dataset_summary(m[1], d);
    j["document"] = dataset_to_json(*d.data);
    return {200, j};
  }
  if (path == "/api/sessions") {
    only("POST");
    return create_session(body);
  }
  if (std::regex_match(path, m, session_re)) {
    only("GET");
    const std::string id = m[1];
    return sessions_.with(id, [&](Session& s) {
      std::lock_guard<std::mutex> lock(mutex_);
      return ApiResponse{200, resource(id, s)};
    });
  }
  if (std::regex_match(path, m, answers_re)) {
    only("POST");
    return answer(m[1], body);
  }
  if (std::regex_match(path, m, transcript_re)) {
    only("GET");
    const std::string id = m[1];
    return sessions_.with(id, [&](Session& s) {
      auto t = s.transcript_json();
      std::lock_guard<std::mutex> lock(mutex_);
      t["dataset"] = session_dataset_.at(id);
      return ApiResponse{200, t};
    });
  }
  if (path == "/api/replay") {
    only("POST");
    const auto d = dataset(string_field(body, "dataset"));
    const auto s = replay(d.data, field(body, "transcript"));
    return {200, s.transcript_json()};
  }
  if (path == "/api/trees") {
    only("POST");
    return build(body);
  }
  if (std::regex_match(path, m, tree_re) || std::regex_match(path, m, evaluation_re)) {
    only("GET");
    const bool evaluation = std::regex_match(path, evaluation_re);
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = trees_.find(m[1]);
    if (it == trees_.end()) throw Error(ErrorCode::NotFound, "unknown tree '" + std::string(m[1]) + "'");
    return {200, evaluation ? it->second.evaluation : it->second.document};
  }
  return error_response(404, "not_found", "no route for " + method + " " + path);
}

ApiResponse Service::handle(const std::string& method, const std::string& path,
                            const std::string& body) {
  try {
    nlohmann::json parsed;
    if (!body.empty()) {
      parsed = nlohmann::json::parse(body, nullptr, false);
      if (parsed.is_discarded()) return error_response(400, "malformed", "request body is not JSON");
    }
    return route(method, path, parsed);
  } catch (const ApiResponse& r) {
    return r;
  } catch (const Error& e) {
    return error_response(http_status(e.code()), to_string(e.code()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return error_response(400, "malformed", e.what());
  }
}

std::pair<std::string, int> parse_address(const std::string& addr) {
  const auto colon = addr.rfind(':');
  std::string host = colon == std::string::npos ? "" : addr.substr(0, colon);
  const auto port_text = colon == std::string::npos ? addr : addr.substr(colon + 1);
  int port = 0;
  try {
    std::size_t used = 0;
    port = std::stoi(port_text, &used);
    if (used != port_text.size()) throw std::invalid_argument(port_text);
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, "bad address '" + addr + "', expected host:port");
  }
  if (port <= 0 || port > 65535) throw Error(ErrorCode::InvalidArgument, "port out of range");
  return {host.empty() ? "127.0.0.1" : host, port};
}

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(Service& service, const std::optional<std::filesystem::path>& static_dir)
    : impl_(std::make_unique<Impl>()) {
  auto forward = [&service](const httplib::Request& req, httplib::Response& res) {
    const auto r = service.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  impl_->server.Get(R"(/api/.*)", forward);
  impl_->server.Post(R"(/api/.*)", forward);
  if (static_dir) impl_->server.set_mount_point("/", static_dir->string());
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host)
                              : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound <= 0)
    throw Error(ErrorCode::InvalidArgument, "cannot listen on " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

void serve(Service& service, const std::string& host, int port,
           const std::optional<std::filesystem::path>& static_dir) {
  HttpServer server(service, static_dir);
  server.bind(host, port);
  server.run();
}

}  // namespace gql
