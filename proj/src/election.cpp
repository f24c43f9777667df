#include "ballotgate/election.hpp"

#include "ballotgate/error.hpp"
#include "json_format.hpp"

#include <openssl/rand.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>

namespace ballotgate {

namespace {

std::int64_t system_seconds() {
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string fmt_sim(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string random_session_id() {
  unsigned char bytes[16];
  if (RAND_bytes(bytes, sizeof bytes) != 1) throw Error(Errc::io, "RAND_bytes failed");
  static const char digits[] = "0123456789abcdef";
  std::string out;
  for (unsigned char b : bytes) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0xF]);
  }
  return out;
}

} // namespace

bool Ballot::contains(std::string_view id) const {
  for (const auto& c : candidates)
    if (c.id == id) return true;
  return false;
}

Ballot ballot_from_json(std::string_view text) {
  Ballot b;
  try {
    auto doc = nlohmann::json::parse(text);
    b.election_name = doc.at("election_name").get<std::string>();
    for (const auto& c : doc.at("candidates"))
      b.candidates.push_back({c.at("id").get<std::string>(), c.at("name").get<std::string>()});
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::malformed_input, std::string("ballot: ") + e.what());
  }
  if (b.candidates.size() < 2) throw Error(Errc::invalid_config, "ballot needs at least two candidates");
  std::set<std::string> seen;
  for (const auto& c : b.candidates) {
    if (c.id.empty()) throw Error(Errc::invalid_config, "ballot: empty candidate id");
    if (!seen.insert(c.id).second)
      throw Error(Errc::invalid_config, "ballot: duplicate candidate id " + c.id);
  }
  return b;
}

std::string ballot_to_json(const Ballot& ballot) {
  detail::ojson doc;
  doc["election_name"] = ballot.election_name;
  doc["candidates"] = detail::ojson::array();
  for (const auto& c : ballot.candidates)
    doc["candidates"].push_back(detail::ojson{{"id", c.id}, {"name", c.name}});
  return doc.dump();
}

Ballot load_ballot(const std::filesystem::path& path) {
  return ballot_from_json(read_file(path));
}

const char* audit_kind_name(AuditKind k) {
  switch (k) {
    case AuditKind::thumb_rejected: return "ThumbRejected";
    case AuditKind::face_rejected: return "FaceRejected";
    case AuditKind::double_vote_attempt: return "DoubleVoteAttempt";
    case AuditKind::duplicate_enrollment: return "DuplicateEnrollment";
    case AuditKind::vote_cast: return "VoteCast";
  }
  return "?";
}

std::string audit_event_to_json(const AuditEvent& e) {
  detail::ojson doc;
  doc["seq"] = e.seq;
  doc["kind"] = audit_kind_name(e.kind);
  doc["at"] = e.at;
  doc["session_id"] = e.session_id;
  if (e.voter_no) doc["voter_no"] = *e.voter_no;
  else doc["voter_no"] = nullptr;
  doc["detail"] = e.detail;
  return doc.dump();
}

AuditEvent audit_event_from_json(std::string_view line) {
  try {
    auto doc = nlohmann::json::parse(line);
    AuditEvent e;
    e.seq = doc.at("seq").get<std::uint64_t>();
    auto kind = doc.at("kind").get<std::string>();
    bool known = false;
    for (auto k : {AuditKind::thumb_rejected, AuditKind::face_rejected, AuditKind::double_vote_attempt,
                   AuditKind::duplicate_enrollment, AuditKind::vote_cast}) {
      if (kind == audit_kind_name(k)) {
        e.kind = k;
        known = true;
      }
    }
    if (!known) throw Error(Errc::malformed_input, "unknown audit kind " + kind);
    e.at = doc.at("at").get<std::int64_t>();
    e.session_id = doc.at("session_id").get<std::string>();
    if (!doc.at("voter_no").is_null()) e.voter_no = doc.at("voter_no").get<std::int64_t>();
    e.detail = doc.at("detail").get<std::string>();
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(Errc::malformed_input, std::string("audit event: ") + ex.what());
  }
}

AuditLog::AuditLog(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(*path_);
  if (!in) return;
  std::string line;
  for (std::size_t i = 0; std::getline(in, line); ++i) {
    if (line.empty()) continue;
    AuditEvent e;
    try {
      e = audit_event_from_json(line);
    } catch (const Error& ex) {
      throw CorruptStoreError(i, ex.what());
    }
    if (e.seq != events_.size() + 1) throw CorruptStoreError(i, "audit sequence gap");
    events_.push_back(std::move(e));
  }
}

AuditEvent AuditLog::append(AuditKind kind, std::int64_t at, std::string session_id,
                            std::optional<std::int64_t> voter_no, std::string detail) {
  std::lock_guard lock(mutex_);
  AuditEvent e{events_.size() + 1, kind, at, std::move(session_id), voter_no, std::move(detail)};
  if (path_) {
    std::ofstream out(*path_, std::ios::app);
    out << audit_event_to_json(e) << '\n';
    out.flush();
    if (!out) throw Error(Errc::io, "cannot append audit log " + path_->string());
  }
  events_.push_back(e);
  return e;
}

std::vector<AuditEvent> AuditLog::since(std::uint64_t since) const {
  std::lock_guard lock(mutex_);
  if (since >= events_.size()) return {};
  return {events_.begin() + static_cast<std::ptrdiff_t>(since), events_.end()};
}

std::size_t AuditLog::size() const {
  std::lock_guard lock(mutex_);
  return events_.size();
}

const char* session_state_name(SessionState s) {
  switch (s) {
    case SessionState::idle: return "Idle";
    case SessionState::thumb_verified: return "ThumbVerified";
    case SessionState::fully_verified: return "FullyVerified";
    case SessionState::closed: return "Closed";
  }
  return "?";
}

Election::Election(Registry& registry, Ballot ballot, AuditLog& audit, ElectionConfig config)
    : registry_(registry), ballot_(std::move(ballot)), audit_(audit), config_(config),
      clock_(system_seconds) {
  if (config_.session_timeout_s <= 0)
    throw Error(Errc::invalid_config, "session timeout must be positive");
}

VoterRecord Election::enroll(const GrayImage& face, const GrayImage& fingerprint) {
  try {
    return registry_.enroll(face, fingerprint);
  } catch (const DuplicateError& e) {
    audit_.append(AuditKind::duplicate_enrollment, clock_(), {}, e.duplicate_of(),
                  std::string(modality_name(e.modality())) + " matches an enrolled voter");
    throw;
  }
}

VoterRecord Election::enroll_features(const FaceVector& face, FingerprintTemplate fingerprint) {
  try {
    return registry_.enroll_features(face, std::move(fingerprint));
  } catch (const DuplicateError& e) {
    audit_.append(AuditKind::duplicate_enrollment, clock_(), {}, e.duplicate_of(),
                  std::string(modality_name(e.modality())) + " matches an enrolled voter");
    throw;
  }
}

std::string Election::open_session() {
  auto s = std::make_shared<Session>();
  s->view.started_at = clock_();
  std::lock_guard lock(mutex_);
  do s->view.id = random_session_id();
  while (sessions_.count(s->view.id));
  sessions_[s->view.id] = s;
  return s->view.id;
}

std::shared_ptr<Election::Session> Election::find(const std::string& session_id) {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw Error(Errc::unknown_session, "no session " + session_id);
  return it->second;
}

void Election::check_expiry(Session& s) {
  if (s.view.state == SessionState::closed) {
    if (s.view.close_reason == "timeout")
      throw Error(Errc::session_expired, "session " + s.view.id + " timed out");
    return;
  }
  if (clock_() - s.view.started_at > config_.session_timeout_s) {
    move_to(s, SessionState::closed, "timeout");
    throw Error(Errc::session_expired, "session " + s.view.id + " timed out");
  }
}

void Election::move_to(Session& s, SessionState to, std::string reason) {
  std::lock_guard lock(mutex_);
  transitions_.push_back({s.view.id, s.view.state, to, s.view.voter_no});
  s.view.state = to;
  if (to == SessionState::closed) s.view.close_reason = std::move(reason);
}

template <class Verify>
StepResult Election::thumb_step(const std::string& session_id, Verify&& verify) {
  auto s = find(session_id);
  std::lock_guard lock(s->mutex);
  check_expiry(*s);
  if (s->view.state != SessionState::idle)
    throw Error(Errc::wrong_state, std::string("thumb verification in state ") +
                                       session_state_name(s->view.state));
  std::optional<FingerprintHit> hit;
  std::string why;
  try {
    hit = verify();
  } catch (const Error& e) {
    if (e.code() != Errc::blank_fingerprint) throw;
    why = e.what();
  }
  if (hit && hit->similarity >= registry_.config().fp_threshold) {
    s->view.voter_no = hit->voter_no;
    s->view.thumb_similarity = hit->similarity;
    move_to(*s, SessionState::thumb_verified);
    return {s->view.state, hit->similarity, true};
  }
  double sim = hit ? hit->similarity : 0.0;
  s->view.thumb_similarity = sim;
  if (why.empty()) why = "no enrolled print matches (best " + fmt_sim(sim) + ")";
  move_to(*s, SessionState::closed, "thumb rejected");
  audit_.append(AuditKind::thumb_rejected, clock_(), s->view.id, std::nullopt, why);
  return {s->view.state, sim, false};
}

StepResult Election::verify_thumb(const std::string& session_id, const GrayImage& probe) {
  return thumb_step(session_id, [&]() -> std::optional<FingerprintHit> {
    auto t = registry_.fingerprint_features(probe);
    if (t.minutiae.empty()) throw Error(Errc::blank_fingerprint, "no minutiae in the scan");
    return registry_.best_fingerprint(t);
  });
}

StepResult Election::verify_thumb(const std::string& session_id, const FingerprintTemplate& probe) {
  return thumb_step(session_id, [&]() -> std::optional<FingerprintHit> {
    if (probe.minutiae.empty()) throw Error(Errc::blank_fingerprint, "no minutiae in the scan");
    return registry_.best_fingerprint(probe);
  });
}

template <class Verify>
StepResult Election::face_step(const std::string& session_id, Verify&& verify) {
  auto s = find(session_id);
  std::lock_guard lock(s->mutex);
  check_expiry(*s);
  if (s->view.state != SessionState::thumb_verified)
    throw Error(Errc::wrong_state, std::string("face verification in state ") +
                                       session_state_name(s->view.state));
  std::optional<FaceCheck> check;
  std::string why;
  try {
    check = verify(*s->view.voter_no);
  } catch (const Error& e) {
    if (e.code() != Errc::face_not_found) throw;
    why = e.what();
  }
  if (check && check->accepted) {
    s->view.face_similarity = check->result.similarity;
    move_to(*s, SessionState::fully_verified);
    return {s->view.state, check->result.similarity, true};
  }
  double sim = check ? check->result.similarity : 0.0;
  s->view.face_similarity = sim;
  if (why.empty())
    why = check->identity_matches ? "similarity " + fmt_sim(sim) + " below threshold"
                                  : "face identified as a different voter";
  move_to(*s, SessionState::closed, "face rejected");
  audit_.append(AuditKind::face_rejected, clock_(), s->view.id, s->view.voter_no, why);
  return {s->view.state, sim, false};
}

StepResult Election::verify_face(const std::string& session_id, const GrayImage& frame) {
  return face_step(session_id, [&](std::int64_t voter) { return registry_.verify_face(voter, frame); });
}

StepResult Election::verify_face(const std::string& session_id, const FaceVector& face) {
  return face_step(session_id, [&](std::int64_t voter) { return registry_.verify_face(voter, face); });
}

VoteReceipt Election::cast_vote(const std::string& session_id, const std::string& candidate_id) {
  auto s = find(session_id);
  std::lock_guard lock(s->mutex);
  check_expiry(*s);
  if (s->view.state != SessionState::fully_verified)
    throw Error(Errc::not_verified, std::string("cannot vote in state ") +
                                        session_state_name(s->view.state));
  if (!ballot_.contains(candidate_id))
    throw Error(Errc::unknown_candidate, "no candidate " + candidate_id);
  try {
    registry_.cast(*s->view.voter_no, candidate_id);
  } catch (const Error& e) {
    if (e.code() != Errc::already_voted) throw;
    move_to(*s, SessionState::closed, "already voted");
    audit_.append(AuditKind::double_vote_attempt, clock_(), s->view.id, s->view.voter_no,
                  "voter has already cast a vote");
    throw;
  }
  VoteReceipt r{s->view.id, candidate_id, clock_()};
  move_to(*s, SessionState::closed, "voted");
  {
    std::lock_guard lock2(mutex_);
    receipts_.push_back(r);
  }
  // No voter number here: the receipt already ties this session to a candidate.
  audit_.append(AuditKind::vote_cast, r.cast_at, s->view.id, std::nullopt, "vote recorded");
  return r;
}

SessionView Election::session(const std::string& session_id) {
  auto s = find(session_id);
  std::lock_guard lock(s->mutex);
  try {
    check_expiry(*s);
  } catch (const Error&) {
    // reading an expired session reports it closed
  }
  return s->view;
}

Tally Election::tally() const {
  Tally t = registry_.tally();
  for (const auto& c : ballot_.candidates) t.counts.emplace(c.id, 0);
  return t;
}

std::vector<VoteReceipt> Election::receipts() const {
  std::lock_guard lock(mutex_);
  return receipts_;
}

std::vector<Transition> Election::transitions() const {
  std::lock_guard lock(mutex_);
  return transitions_;
}

} // namespace ballotgate
