#pragma once

#include "ballotgate/election.hpp"
#include "ballotgate/error.hpp"
#include "ballotgate/registry.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

namespace ballotgate {

/// Service and evaluation parameters. Paths are resolved relative to the
/// working directory.
struct ApiConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path registry_path = "registry.jsonl";
  std::filesystem::path ballot_path = "ballot.json";
  std::filesystem::path model_path = "model.json";
  std::filesystem::path cascade_path;  // empty: frames are taken as face crops
  std::filesystem::path audit_path = "audit.jsonl";
  double face_threshold = 0.90;
  double fp_threshold = 0.90;
  int k = 1;
  int m = 40;      // eigen components
  int d = 1764;    // face vector length, side * side
  int q_max = 3;
  double r_tol = 10.0;
  double theta_tol = 15.0;
  std::int64_t session_timeout_s = 120;

  int side() const;

  /// Throws invalid_config: thresholds outside [0,1], k < 1, d not a perfect
  /// square, non-positive sizes or tolerances.
  void validate() const;

  RegistryConfig registry_config() const;
  ElectionConfig election_config() const;
};

/// Missing keys keep their defaults; unknown keys are rejected.
ApiConfig config_from_json(std::string_view text);
std::string config_to_json(const ApiConfig& config);
ApiConfig load_config(const std::filesystem::path& path);

/// JSON-over-HTTP front end for an election. Every response body carries
/// "schema_version"; failures are {error_code, message} with a 4xx/5xx status.
class ApiServer {
public:
  static constexpr int schema_version = 1;

  explicit ApiServer(Election& election);
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  /// Blocks until stop(). Returns false if the address cannot be bound.
  bool listen(const std::string& host, int port);

  /// Binds an ephemeral port and returns it (or -1); serve with
  /// listen_after_bind().
  int bind_to_any_port(const std::string& host);
  bool listen_after_bind();

  void stop();
  void wait_until_ready() const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// HTTP status for an error code.
int http_status(Errc code);

/// Everything `serve` needs, loaded from a config: model, optional detector,
/// registry (created empty if the file is missing), ballot and audit log.
struct Service {
  std::unique_ptr<Registry> registry;
  std::unique_ptr<AuditLog> audit;
  std::unique_ptr<Election> election;
};

/// The registry key comes from BALLOTGATE_SECRET.
Service open_service(const ApiConfig& config);
Service open_service(const ApiConfig& config, Key key);

} // namespace ballotgate
