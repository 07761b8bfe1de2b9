#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "gql/session.hpp"

namespace gql {

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

/// JSON API over datasets, sessions and trees, independent of the transport.
///
///   GET  /api/health
///   POST /api/datasets                  problem document, or {"name", "problem"}
///   GET  /api/datasets, /api/datasets/{id}
///   POST /api/sessions                  {"dataset", "strategy", "config"?}
///   GET  /api/sessions/{id}
///   POST /api/sessions/{id}/answers     {"query", "response"}
///   GET  /api/sessions/{id}/transcript
///   POST /api/replay                    {"dataset", "transcript"}
///   POST /api/trees                     {"dataset", "strategy", "config"?}
///   GET  /api/trees/{id}, /api/trees/{id}/evaluation
///
/// Errors: 400 malformed, 404 unknown id, 409 protocol violation, 422 when
/// an answer eliminates every candidate (the session is then failed).
class Service {
 public:
  /// With a directory, every session event is appended to <dir>/<id>.jsonl.
  explicit Service(std::optional<std::filesystem::path> transcript_dir = std::nullopt);

  ApiResponse handle(const std::string& method, const std::string& path,
                     const std::string& body);

  /// Registers a dataset and returns its id.
  std::string add_dataset(Dataset ds, const std::string& name);

 private:
  struct StoredDataset {
    std::string name;
    std::shared_ptr<const Dataset> data;
  };
  struct StoredTree {
    std::string dataset;
    std::string strategy;
    nlohmann::json document;
    nlohmann::json evaluation;
  };

  ApiResponse route(const std::string& method, const std::string& path, const nlohmann::json& body);
  ApiResponse create_session(const nlohmann::json& body);
  ApiResponse answer(const std::string& id, const nlohmann::json& body);
  ApiResponse build(const nlohmann::json& body);
  StoredDataset dataset(const std::string& id) const;
  nlohmann::json dataset_summary(const std::string& id, const StoredDataset& d) const;
  nlohmann::json resource(const std::string& id, Session& s) const;
  void persist(const std::string& id, const nlohmann::json& event) const;

  std::optional<std::filesystem::path> transcript_dir_;
  mutable std::mutex mutex_;
  std::map<std::string, StoredDataset> datasets_;
  std::map<std::string, std::string> session_dataset_;
  std::map<std::string, StoredTree> trees_;
  int next_dataset_ = 1;
  int next_tree_ = 1;
  SessionStore sessions_;
};

/// HTTP transport for a Service, serving the API (and the directory
/// `static_dir` at /, when given).
class HttpServer {
 public:
  explicit HttpServer(Service& service,
                      const std::optional<std::filesystem::path>& static_dir = std::nullopt);
  ~HttpServer();

  /// Binds host:port (port 0 picks a free port); returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Blocking convenience wrapper: bind and run.
void serve(Service& service, const std::string& host, int port,
           const std::optional<std::filesystem::path>& static_dir = std::nullopt);

/// Splits "host:port" (host defaults to 127.0.0.1).
std::pair<std::string, int> parse_address(const std::string& addr);

}  // namespace gql
