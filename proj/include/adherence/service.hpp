#pragma once

// Read-only JSON service over frozen model artifacts.
//
// Handlers are plain functions of the request body so they can be exercised
// without a socket; bind_routes() wires them into an HTTP server.

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "adherence/models.hpp"

namespace httplib {
class Server;
}

namespace adherence::service {

struct Snapshot {
  std::map<ModelKind, LoadedModel> models;
  std::vector<std::filesystem::path> paths;
};

/// Loads every artifact; at least one must be an SLVM. Later artifacts of the
/// same kind replace earlier ones.
std::shared_ptr<const Snapshot> load_snapshot(const std::vector<std::filesystem::path>& paths);

struct Response {
  int status = 200;
  std::string body;
};

/// Rounds every floating-point number to 9 significant digits.
nlohmann::json round_numbers(const nlohmann::json& j);
/// Compact dump of round_numbers(j).
std::string dump(const nlohmann::json& j);

class Service {
 public:
  explicit Service(std::vector<std::filesystem::path> paths);

  [[nodiscard]] Response meta() const;
  [[nodiscard]] Response features() const;
  [[nodiscard]] Response predict(const std::string& body) const;
  [[nodiscard]] Response whatif(const std::string& body) const;
  /// Re-reads the artifact paths and swaps the snapshot; on failure the old
  /// snapshot stays in place and a 500 is returned.
  Response reload();

  [[nodiscard]] std::shared_ptr<const Snapshot> snapshot() const;

 private:
  std::vector<std::filesystem::path> paths_;
  mutable std::mutex mutex_;
  std::shared_ptr<const Snapshot> snapshot_;
};

void bind_routes(httplib::Server& server, Service& service);

/// Blocks until the server stops.
void serve(Service& service, const std::string& host, int port);

}  // namespace adherence::service
