#include "ballotgate/gateway.hpp"

#include "ballotgate/detector.hpp"
#include "ballotgate/error.hpp"
#include "ballotgate/image_io.hpp"

#include "httplib.h"
#include "json.hpp"

#include <charconv>
#include <cmath>
#include <set>

namespace ballotgate {

using ojson = nlohmann::ordered_json;

int ApiConfig::side() const {
  int s = static_cast<int>(std::lround(std::sqrt(static_cast<double>(d))));
  return s;
}

void ApiConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(Errc::invalid_config, what); };
  if (!(face_threshold >= 0.0 && face_threshold <= 1.0)) fail("face_threshold must be in [0,1]");
  if (!(fp_threshold >= 0.0 && fp_threshold <= 1.0)) fail("fp_threshold must be in [0,1]");
  if (k < 1) fail("k must be at least 1");
  if (m < 1) fail("m must be at least 1");
  if (q_max < 1) fail("q_max must be at least 1");
  if (d < 1 || side() * side() != d) fail("d must be a perfect square, got " + std::to_string(d));
  if (!(r_tol > 0.0)) fail("r_tol must be positive");
  if (!(theta_tol > 0.0 && theta_tol <= 180.0)) fail("theta_tol must be in (0,180]");
  if (session_timeout_s < 1) fail("session_timeout_s must be positive");
  if (port < 0 || port > 65535) fail("port out of range");
}

RegistryConfig ApiConfig::registry_config() const {
  RegistryConfig rc;
  rc.face_threshold = face_threshold;
  rc.fp_threshold = fp_threshold;
  rc.face_side = side();
  rc.q_max = q_max;
  rc.k = k;
  rc.match.r_tol = r_tol;
  rc.match.theta_tol = theta_tol;
  return rc;
}

ElectionConfig ApiConfig::election_config() const { return ElectionConfig{session_timeout_s}; }

ApiConfig config_from_json(std::string_view text) {
  ApiConfig c;
  try {
    auto doc = nlohmann::json::parse(text);
    if (!doc.is_object()) throw Error(Errc::malformed_input, "config must be a JSON object");
    static const std::set<std::string> known{
        "host", "port", "registry_path", "ballot_path", "model_path", "cascade_path",
        "audit_path", "face_threshold", "fp_threshold", "k", "m", "d", "q_max", "r_tol",
        "theta_tol", "session_timeout_s"};
    for (const auto& [key, value] : doc.items())
      if (!known.count(key)) throw Error(Errc::invalid_config, "unknown config key " + key);
    auto get = [&](const char* key, auto& field) {
      if (doc.contains(key)) field = doc.at(key).get<std::decay_t<decltype(field)>>();
    };
    auto get_path = [&](const char* key, std::filesystem::path& field) {
      if (doc.contains(key)) field = doc.at(key).get<std::string>();
    };
    get("host", c.host);
    get("port", c.port);
    get_path("registry_path", c.registry_path);
    get_path("ballot_path", c.ballot_path);
    get_path("model_path", c.model_path);
    get_path("cascade_path", c.cascade_path);
    get_path("audit_path", c.audit_path);
    get("face_threshold", c.face_threshold);
    get("fp_threshold", c.fp_threshold);
    get("k", c.k);
    get("m", c.m);
    get("d", c.d);
    get("q_max", c.q_max);
    get("r_tol", c.r_tol);
    get("theta_tol", c.theta_tol);
    get("session_timeout_s", c.session_timeout_s);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::malformed_input, std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string config_to_json(const ApiConfig& c) {
  ojson doc;
  doc["host"] = c.host;
  doc["port"] = c.port;
  doc["registry_path"] = c.registry_path.string();
  doc["ballot_path"] = c.ballot_path.string();
  doc["model_path"] = c.model_path.string();
  doc["cascade_path"] = c.cascade_path.string();
  doc["audit_path"] = c.audit_path.string();
  doc["face_threshold"] = c.face_threshold;
  doc["fp_threshold"] = c.fp_threshold;
  doc["k"] = c.k;
  doc["m"] = c.m;
  doc["d"] = c.d;
  doc["q_max"] = c.q_max;
  doc["r_tol"] = c.r_tol;
  doc["theta_tol"] = c.theta_tol;
  doc["session_timeout_s"] = c.session_timeout_s;
  return doc.dump(2);
}

ApiConfig load_config(const std::filesystem::path& path) {
  return config_from_json(read_file(path));
}

int http_status(Errc code) {
  switch (code) {
    case Errc::malformed_input:
    case Errc::dimension:
    case Errc::bounds:
    case Errc::face_not_found:
    case Errc::blank_fingerprint:
    case Errc::unknown_candidate:
      return 400;
    case Errc::already_voted:
      return 403;
    case Errc::unknown_session:
    case Errc::unknown_voter:
      return 404;
    case Errc::duplicate:
    case Errc::not_verified:
    case Errc::wrong_state:
      return 409;
    case Errc::session_expired:
      return 410;
    default:
      return 500;
  }
}

namespace {

ojson envelope() {
  ojson doc;
  doc["schema_version"] = ApiServer::schema_version;
  return doc;
}

void send(httplib::Response& res, int status, const ojson& doc) {
  res.status = status;
  res.set_content(doc.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, std::string_view message,
                ojson extra = ojson::object()) {
  auto doc = envelope();
  doc["error_code"] = code;
  doc["message"] = message;
  for (auto& [k, v] : extra.items()) doc[k] = v;
  send(res, status, doc);
}

GrayImage image_from(const std::string& bytes) {
  return decode_image(std::span(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()));
}

// Multipart field `name`, or the raw body when the request is not multipart.
GrayImage upload(const httplib::Request& req, const char* name) {
  if (req.is_multipart_form_data()) {
    if (!req.has_file(name))
      throw Error(Errc::malformed_input, std::string("missing multipart field '") + name + "'");
    return image_from(req.get_file_value(name).content);
  }
  if (req.body.empty()) throw Error(Errc::malformed_input, "request carries no image");
  return image_from(req.body);
}

ojson event_json(const AuditEvent& e) {
  ojson doc;
  doc["seq"] = e.seq;
  doc["kind"] = audit_kind_name(e.kind);
  doc["at"] = e.at;
  doc["session_id"] = e.session_id;
  doc["voter_no"] = e.voter_no ? ojson(*e.voter_no) : ojson(nullptr);
  doc["detail"] = e.detail;
  return doc;
}

} // namespace

struct ApiServer::Impl {
  Election& election;
  httplib::Server http;

  explicit Impl(Election& el) : election(el) { routes(); }

  template <class F>
  httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const DuplicateError& e) {
        ojson extra;
        extra["duplicate_of"] = e.duplicate_of();
        extra["modality"] = modality_name(e.modality());
        extra["similarity"] = e.similarity();
        send_error(res, 409, errc_name(e.code()), e.what(), extra);
      } catch (const Error& e) {
        send_error(res, http_status(e.code()), errc_name(e.code()), e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
      }
    };
  }

  void step_response(httplib::Response& res, const StepResult& r, const char* rejected_code,
                     const char* what) {
    auto doc = envelope();
    doc["state"] = session_state_name(r.state);
    doc["similarity"] = r.similarity;
    if (r.accepted) {
      send(res, 200, doc);
    } else {
      doc["error_code"] = rejected_code;
      doc["message"] = std::string(what) + " rejected; the session is closed";
      send(res, 401, doc);
    }
  }

  void routes() {
    http.set_payload_max_length(32u << 20);

    http.Get("/api/health", guarded([](const httplib::Request&, httplib::Response& res) {
      auto doc = envelope();
      doc["status"] = "ok";
      send(res, 200, doc);
    }));

    http.Post("/api/enroll", guarded([this](const httplib::Request& req, httplib::Response& res) {
      if (!req.is_multipart_form_data())
        throw Error(Errc::malformed_input, "enrollment needs multipart fields 'face' and 'fingerprint'");
      auto face = upload(req, "face");
      auto finger = upload(req, "fingerprint");
      auto rec = election.enroll(face, finger);
      auto doc = envelope();
      doc["encrypted_id"] = rec.encrypted_id;
      doc["voter_no"] = rec.voter_no;
      send(res, 200, doc);
    }));

    http.Post("/api/session", guarded([this](const httplib::Request&, httplib::Response& res) {
      auto id = election.open_session();
      auto doc = envelope();
      doc["session_id"] = id;
      doc["state"] = session_state_name(SessionState::idle);
      send(res, 200, doc);
    }));

    http.Get("/api/session/:id", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto view = election.session(req.path_params.at("id"));
      auto doc = envelope();
      doc["session_id"] = view.id;
      doc["state"] = session_state_name(view.state);
      doc["started_at"] = view.started_at;
      doc["close_reason"] = view.close_reason;
      send(res, 200, doc);
    }));

    http.Post("/api/session/:id/thumb", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto& id = req.path_params.at("id");
      election.session(id);  // 404 before reading the upload
      auto r = election.verify_thumb(id, upload(req, "image"));
      step_response(res, r, "thumb_rejected", "thumb");
    }));

    http.Post("/api/session/:id/face", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto& id = req.path_params.at("id");
      election.session(id);
      auto r = election.verify_face(id, upload(req, "image"));
      step_response(res, r, "face_rejected", "face");
    }));

    http.Post("/api/session/:id/vote", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::string candidate;
      try {
        auto body = nlohmann::json::parse(req.body);
        candidate = body.at("candidate_id").get<std::string>();
      } catch (const nlohmann::json::exception&) {
        throw Error(Errc::malformed_input, "body must be {\"candidate_id\": \"...\"}");
      }
      auto r = election.cast_vote(req.path_params.at("id"), candidate);
      auto doc = envelope();
      doc["receipt"] = ojson{{"session_id", r.session_id}, {"candidate_id", r.candidate_id},
                             {"cast_at", r.cast_at}};
      send(res, 200, doc);
    }));

    http.Get("/api/tally", guarded([this](const httplib::Request&, httplib::Response& res) {
      auto t = election.tally();
      auto doc = envelope();
      doc["counts"] = ojson::object();
      for (const auto& c : election.ballot().candidates) doc["counts"][c.id] = t.counts.at(c.id);
      for (const auto& [id, n] : t.counts)
        if (!doc["counts"].contains(id)) doc["counts"][id] = n;
      doc["turnout"] = t.turnout;
      send(res, 200, doc);
    }));

    http.Get("/api/ballot", guarded([this](const httplib::Request&, httplib::Response& res) {
      const auto& b = election.ballot();
      auto doc = envelope();
      doc["election_name"] = b.election_name;
      doc["candidates"] = ojson::array();
      for (const auto& c : b.candidates) doc["candidates"].push_back(ojson{{"id", c.id}, {"name", c.name}});
      send(res, 200, doc);
    }));

    http.Get("/api/audit", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::uint64_t since = 0;
      if (req.has_param("since")) {
        auto v = req.get_param_value("since");
        auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), since);
        if (ec != std::errc() || end != v.data() + v.size())
          throw Error(Errc::malformed_input, "since must be a non-negative integer");
      }
      auto events = election.audit().since(since);
      auto doc = envelope();
      doc["events"] = ojson::array();
      for (const auto& e : events) doc["events"].push_back(event_json(e));
      doc["last_seq"] = election.audit().size();
      send(res, 200, doc);
    }));

    // Unmatched routes and anything else that ends up without a body.
    http.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
      send_error(res, res.status, res.status == 404 ? "not_found" : "http_error",
                 httplib::status_message(res.status));
      return httplib::Server::HandlerResponse::Handled;
    });
  }
};

ApiServer::ApiServer(Election& election) : impl_(std::make_unique<Impl>(election)) {}
ApiServer::~ApiServer() { stop(); }

bool ApiServer::listen(const std::string& host, int port) { return impl_->http.listen(host, port); }
int ApiServer::bind_to_any_port(const std::string& host) { return impl_->http.bind_to_any_port(host); }
bool ApiServer::listen_after_bind() { return impl_->http.listen_after_bind(); }
void ApiServer::stop() {
  if (impl_) impl_->http.stop();
}
void ApiServer::wait_until_ready() const { impl_->http.wait_until_ready(); }

Service open_service(const ApiConfig& config) { return open_service(config, key_from_env()); }

Service open_service(const ApiConfig& config, Key key) {
  config.validate();
  auto model = std::make_shared<const EigenModel>(load_model(config.model_path));
  if (model->dimension() != config.d)
    throw Error(Errc::invalid_config, "model has " + std::to_string(model->dimension()) +
                                          " dimensions but d is " + std::to_string(config.d));
  std::shared_ptr<const Cascade> detector;
  if (!config.cascade_path.empty())
    detector = std::make_shared<const Cascade>(load_cascade(config.cascade_path));

  Service s;
  s.registry = std::make_unique<Registry>(model, std::move(key), config.registry_config(), detector);
  if (std::filesystem::exists(config.registry_path)) s.registry->load(config.registry_path);
  s.registry->attach(config.registry_path);
  auto ballot = load_ballot(config.ballot_path);
  s.audit = std::make_unique<AuditLog>(config.audit_path);
  s.election = std::make_unique<Election>(*s.registry, std::move(ballot), *s.audit,
                                          config.election_config());
  return s;
}

} // namespace ballotgate
