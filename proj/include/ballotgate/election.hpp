#pragma once

#include "ballotgate/registry.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ballotgate {

struct Candidate {
  std::string id;
  std::string name;
};

struct Ballot {
  std::string election_name;
  std::vector<Candidate> candidates;

  bool contains(std::string_view id) const;
};

/// {election_name, candidates:[{id, name}]}; needs at least two candidates
/// with distinct ids.
Ballot ballot_from_json(std::string_view text);
std::string ballot_to_json(const Ballot& ballot);
Ballot load_ballot(const std::filesystem::path& path);

enum class AuditKind { thumb_rejected, face_rejected, double_vote_attempt, duplicate_enrollment, vote_cast };

const char* audit_kind_name(AuditKind k);  // "ThumbRejected", ...

struct AuditEvent {
  std::uint64_t seq = 0;  // 1-based, gap-free
  AuditKind kind = AuditKind::vote_cast;
  std::int64_t at = 0;
  std::string session_id;             // empty for enrollment events
  std::optional<std::int64_t> voter_no;
  std::string detail;
};

std::string audit_event_to_json(const AuditEvent& e);
AuditEvent audit_event_from_json(std::string_view line);

/// Append-only, optionally mirrored to a JSON-lines file. An existing file is
/// read back first so sequence numbers continue; a malformed line throws
/// CorruptStoreError with its index.
class AuditLog {
public:
  AuditLog() = default;
  explicit AuditLog(std::filesystem::path path);

  AuditEvent append(AuditKind kind, std::int64_t at, std::string session_id,
                    std::optional<std::int64_t> voter_no, std::string detail);

  /// Events with seq > `since`.
  std::vector<AuditEvent> since(std::uint64_t since) const;
  std::size_t size() const;

private:
  mutable std::mutex mutex_;
  std::vector<AuditEvent> events_;
  std::optional<std::filesystem::path> path_;
};

enum class SessionState { idle, thumb_verified, fully_verified, closed };

const char* session_state_name(SessionState s);  // "Idle", "ThumbVerified", ...

struct SessionView {
  std::string id;
  SessionState state = SessionState::idle;
  std::optional<std::int64_t> voter_no;
  double thumb_similarity = 0.0;
  double face_similarity = 0.0;
  std::int64_t started_at = 0;
  std::string close_reason;
};

struct StepResult {
  SessionState state = SessionState::closed;
  double similarity = 0.0;
  bool accepted = false;
};

struct VoteReceipt {
  std::string session_id;
  std::string candidate_id;
  std::int64_t cast_at = 0;
};

/// Recorded state change, kept in memory for invariant checks. It links a
/// session to a voter, never to a candidate.
struct Transition {
  std::string session_id;
  SessionState from;
  SessionState to;
  std::optional<std::int64_t> voter_no;
};

struct ElectionConfig {
  std::int64_t session_timeout_s = 120;
};

/// Voting sessions: thumb lookup, then face cross-verification of that
/// voter, then exactly one vote. Any rejection closes the session and writes
/// one audit event; a new session is needed to try again.
class Election {
public:
  using Clock = std::function<std::int64_t()>;

  Election(Registry& registry, Ballot ballot, AuditLog& audit, ElectionConfig config = {});

  void set_clock(Clock clock) { clock_ = std::move(clock); }

  Registry& registry() { return registry_; }
  const Ballot& ballot() const { return ballot_; }
  AuditLog& audit() { return audit_; }
  std::vector<AuditEvent> audit_events() const { return audit_.since(0); }

  /// Enrollment with the duplicate path logged.
  VoterRecord enroll(const GrayImage& face, const GrayImage& fingerprint);
  VoterRecord enroll_features(const FaceVector& face, FingerprintTemplate fingerprint);

  std::string open_session();

  StepResult verify_thumb(const std::string& session_id, const GrayImage& probe);
  StepResult verify_thumb(const std::string& session_id, const FingerprintTemplate& probe);
  StepResult verify_face(const std::string& session_id, const GrayImage& frame);
  StepResult verify_face(const std::string& session_id, const FaceVector& face);

  /// Throws not_verified unless FullyVerified, unknown_candidate (session stays
  /// open) or already_voted (session closes, DoubleVoteAttempt logged).
  VoteReceipt cast_vote(const std::string& session_id, const std::string& candidate_id);

  SessionView session(const std::string& session_id);

  /// Counts for every ballot candidate plus turnout.
  Tally tally() const;

  std::vector<VoteReceipt> receipts() const;
  std::vector<Transition> transitions() const;

private:
  struct Session {
    std::mutex mutex;
    SessionView view;
  };

  std::shared_ptr<Session> find(const std::string& session_id);
  // Expects the session mutex held. Closes expired sessions and throws
  // session_expired, now and on every later operation.
  void check_expiry(Session& s);
  void move_to(Session& s, SessionState to, std::string reason = {});

  template <class Verify>
  StepResult thumb_step(const std::string& session_id, Verify&& verify);
  template <class Verify>
  StepResult face_step(const std::string& session_id, Verify&& verify);

  Registry& registry_;
  Ballot ballot_;
  AuditLog& audit_;
  ElectionConfig config_;
  Clock clock_;

  mutable std::mutex mutex_;  // sessions_, receipts_, transitions_
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::vector<VoteReceipt> receipts_;
  std::vector<Transition> transitions_;
};

} // namespace ballotgate
