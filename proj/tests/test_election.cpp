#include "doctest.h"

#include "ballotgate/election.hpp"
#include "ballotgate/error.hpp"
#include "electorate.hpp"
#include "ballotgate/synthetic.hpp"

#include <filesystem>
#include <fstream>
#include <random>

using namespace ballotgate;

namespace {

const Ballot two_way{"test", {{"A", "Alpha"}, {"B", "Beta"}}};

int error_code(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return static_cast<int>(e.code());
  }
  return -1;
}

int code(Errc c) { return static_cast<int>(c); }

struct Booth {
  std::unique_ptr<Registry> registry;
  AuditLog audit;
  std::unique_ptr<Election> election;
  std::int64_t now = 1700000000;

  explicit Booth(int voters, Ballot ballot = two_way) {
    registry = synth::registry_from(synth::electorate(voters));
    election = std::make_unique<Election>(*registry, std::move(ballot), audit);
    election->set_clock([this] { return now; });
  }

  const synth::Probe& voter(int voter_no) const {
    return synth::electorate(static_cast<int>(registry->size())).voters.at(voter_no - 1);
  }
  const synth::Probe& stranger() const {
    return synth::electorate(static_cast<int>(registry->size())).strangers.at(0);
  }

  std::string verified(int voter_no) {
    auto id = election->open_session();
    REQUIRE(election->verify_thumb(id, voter(voter_no).thumb).accepted);
    REQUIRE(election->verify_face(id, voter(voter_no).face).accepted);
    return id;
  }
};

} // namespace

TEST_CASE("ballot definition") {
  auto b = ballot_from_json(
      R"({"election_name":"Ward 7","candidates":[{"id":"A","name":"Alpha"},{"id":"B","name":"Beta"}]})");
  CHECK(b.election_name == "Ward 7");
  REQUIRE(b.candidates.size() == 2);
  CHECK(b.candidates[1].name == "Beta");
  CHECK(b.contains("A"));
  CHECK_FALSE(b.contains("C"));
  auto back = ballot_from_json(ballot_to_json(b));
  CHECK(back.candidates.size() == 2);
  CHECK(back.candidates[0].id == "A");

  CHECK(error_code([] { ballot_from_json(R"({"election_name":"x","candidates":[{"id":"A","name":"a"}]})"); }) ==
        code(Errc::invalid_config));
  CHECK(error_code([] {
          ballot_from_json(
              R"({"election_name":"x","candidates":[{"id":"A","name":"a"},{"id":"A","name":"b"}]})");
        }) == code(Errc::invalid_config));
  CHECK(error_code([] { ballot_from_json("{"); }) == code(Errc::malformed_input));
  CHECK(error_code([] { ballot_from_json(R"({"candidates":[]})"); }) == code(Errc::malformed_input));
}

TEST_CASE("happy path: thumb, face, vote") {
  Booth booth(3);
  CHECK(booth.election->tally().counts == std::map<std::string, std::int64_t>{{"A", 0}, {"B", 0}});
  CHECK(booth.election->tally().turnout == 0);

  auto id = booth.election->open_session();
  CHECK(booth.election->session(id).state == SessionState::idle);
  auto t = booth.election->verify_thumb(id, booth.voter(2).thumb);
  CHECK(t.accepted);
  CHECK(t.state == SessionState::thumb_verified);
  CHECK(t.similarity >= 0.9);
  CHECK(booth.election->session(id).voter_no == 2);

  auto f = booth.election->verify_face(id, booth.voter(2).face);
  CHECK(f.accepted);
  CHECK(f.state == SessionState::fully_verified);
  CHECK(f.similarity >= 0.9);

  booth.now += 5;
  auto receipt = booth.election->cast_vote(id, "B");
  CHECK(receipt.session_id == id);
  CHECK(receipt.candidate_id == "B");
  CHECK(receipt.cast_at == 1700000005);
  CHECK(booth.election->session(id).state == SessionState::closed);
  CHECK(booth.election->tally().counts.at("B") == 1);
  CHECK(booth.election->tally().counts.at("A") == 0);
  CHECK(booth.election->tally().turnout == 1);
  CHECK(booth.registry->record(2)->has_voted);

  auto events = booth.audit.since(0);
  REQUIRE(events.size() == 1);
  CHECK(events[0].kind == AuditKind::vote_cast);
  CHECK(events[0].seq == 1);
  CHECK_FALSE(events[0].voter_no);
}

TEST_CASE("thumb rejection") {
  Booth booth(3);
  auto id = booth.election->open_session();
  auto t = booth.election->verify_thumb(id, booth.stranger().thumb);
  CHECK_FALSE(t.accepted);
  CHECK(t.state == SessionState::closed);
  CHECK(t.similarity < 0.9);
  auto events = booth.audit.since(0);
  REQUIRE(events.size() == 1);
  CHECK(events[0].kind == AuditKind::thumb_rejected);
  CHECK(events[0].session_id == id);

  // A blank scan is a rejection too.
  auto id2 = booth.election->open_session();
  auto blank = booth.election->verify_thumb(id2, GrayImage(160, 160, 255.0));
  CHECK_FALSE(blank.accepted);
  CHECK(blank.similarity == 0.0);
  CHECK(booth.audit.size() == 2);

  // Second thumb on the same session.
  auto id3 = booth.election->open_session();
  booth.election->verify_thumb(id3, booth.voter(1).thumb);
  CHECK(error_code([&] { booth.election->verify_thumb(id3, booth.voter(1).thumb); }) ==
        code(Errc::wrong_state));
  CHECK(booth.audit.size() == 2);
}

TEST_CASE("face cross-verification rejects another voter's face") {
  Booth booth(3);
  auto id = booth.election->open_session();
  REQUIRE(booth.election->verify_thumb(id, booth.voter(1).thumb).accepted);
  // Voter 2's face is genuine for voter 2 but not for the thumb's owner.
  CHECK(booth.registry->verify_face(2, booth.voter(2).face).accepted);
  auto f = booth.election->verify_face(id, booth.voter(2).face);
  CHECK_FALSE(f.accepted);
  CHECK(f.state == SessionState::closed);
  auto events = booth.audit.since(0);
  REQUIRE(events.size() == 1);
  CHECK(events[0].kind == AuditKind::face_rejected);
  CHECK(events[0].voter_no == 1);

  // No retry within the session.
  CHECK(error_code([&] { booth.election->verify_face(id, booth.voter(1).face); }) ==
        code(Errc::wrong_state));
}

TEST_CASE("unknown face and missing face are rejected") {
  Booth booth(3);
  auto id = booth.election->open_session();
  REQUIRE(booth.election->verify_thumb(id, booth.voter(3).thumb).accepted);
  auto f = booth.election->verify_face(id, booth.stranger().face);
  CHECK_FALSE(f.accepted);
  CHECK(f.similarity < 0.9);

  auto id2 = booth.election->open_session();
  REQUIRE(booth.election->verify_thumb(id2, booth.voter(3).thumb).accepted);
  auto flat = booth.election->verify_face(id2, GrayImage(42, 42, 128.0));
  CHECK_FALSE(flat.accepted);
  CHECK(booth.audit.size() == 2);
  for (const auto& e : booth.audit.since(0)) CHECK(e.kind == AuditKind::face_rejected);
}

TEST_CASE("cast requires full verification and a ballot candidate") {
  Booth booth(3);
  auto id = booth.election->open_session();
  CHECK(error_code([&] { booth.election->cast_vote(id, "A"); }) == code(Errc::not_verified));
  REQUIRE(booth.election->verify_thumb(id, booth.voter(1).thumb).accepted);
  CHECK(error_code([&] { booth.election->cast_vote(id, "A"); }) == code(Errc::not_verified));
  REQUIRE(booth.election->verify_face(id, booth.voter(1).face).accepted);

  CHECK(error_code([&] { booth.election->cast_vote(id, "Q"); }) == code(Errc::unknown_candidate));
  CHECK(booth.election->session(id).state == SessionState::fully_verified);
  CHECK(booth.election->tally().turnout == 0);
  booth.election->cast_vote(id, "A");
  CHECK(booth.election->tally().counts.at("A") == 1);
  CHECK(error_code([&] { booth.election->cast_vote(id, "A"); }) == code(Errc::not_verified));

  CHECK(error_code([&] { booth.election->cast_vote("nope", "A"); }) == code(Errc::unknown_session));
  CHECK(error_code([&] { booth.election->session("nope"); }) == code(Errc::unknown_session));
}

TEST_CASE("second session by the same voter") {
  Booth booth(3);
  booth.election->cast_vote(booth.verified(2), "A");
  auto before = booth.election->tally();

  auto id = booth.verified(2);
  CHECK(error_code([&] { booth.election->cast_vote(id, "B"); }) == code(Errc::already_voted));
  CHECK(booth.election->session(id).state == SessionState::closed);
  auto after = booth.election->tally();
  CHECK(after.counts == before.counts);
  CHECK(after.turnout == 1);
  auto events = booth.audit.since(1);
  REQUIRE(events.size() == 1);
  CHECK(events[0].kind == AuditKind::double_vote_attempt);
  CHECK(events[0].voter_no == 2);
  CHECK(booth.election->receipts().size() == 1);
}

TEST_CASE("tally A, A, B") {
  Booth booth(3);
  booth.election->cast_vote(booth.verified(1), "A");
  booth.election->cast_vote(booth.verified(2), "A");
  booth.election->cast_vote(booth.verified(3), "B");
  auto t = booth.election->tally();
  CHECK(t.counts == std::map<std::string, std::int64_t>{{"A", 2}, {"B", 1}});
  CHECK(t.turnout == 3);
}

TEST_CASE("every state and operation pair") {
  enum class Op { thumb, face, cast };
  const SessionState states[] = {SessionState::idle, SessionState::thumb_verified,
                                 SessionState::fully_verified, SessionState::closed};
  for (auto state : states) {
    for (auto op : {Op::thumb, Op::face, Op::cast}) {
      CAPTURE(session_state_name(state));
      CAPTURE(static_cast<int>(op));
      Booth booth(2);
      auto& el = *booth.election;
      auto id = el.open_session();
      if (state != SessionState::idle) REQUIRE(el.verify_thumb(id, booth.voter(1).thumb).accepted);
      if (state == SessionState::fully_verified || state == SessionState::closed)
        REQUIRE(el.verify_face(id, booth.voter(1).face).accepted);
      if (state == SessionState::closed) el.cast_vote(id, "A");
      REQUIRE(el.session(id).state == state);
      auto events = booth.audit.size();
      auto transitions = el.transitions().size();

      bool legal = (state == SessionState::idle && op == Op::thumb) ||
                   (state == SessionState::thumb_verified && op == Op::face) ||
                   (state == SessionState::fully_verified && op == Op::cast);
      int got = error_code([&] {
        switch (op) {
          case Op::thumb: el.verify_thumb(id, booth.voter(1).thumb); break;
          case Op::face: el.verify_face(id, booth.voter(1).face); break;
          case Op::cast: el.cast_vote(id, "B"); break;
        }
      });
      if (legal) {
        CHECK(got == -1);
        CHECK(el.transitions().size() == transitions + 1);
      } else {
        CHECK(got == code(op == Op::cast ? Errc::not_verified : Errc::wrong_state));
        CHECK(el.session(id).state == state);
        CHECK(booth.audit.size() == events);
        CHECK(el.transitions().size() == transitions);
      }
    }
  }
}

TEST_CASE("sessions time out after 120 s") {
  Booth booth(2);
  auto id = booth.election->open_session();
  booth.now += 120;
  REQUIRE(booth.election->verify_thumb(id, booth.voter(1).thumb).accepted);
  booth.now += 1;
  CHECK(error_code([&] { booth.election->verify_face(id, booth.voter(1).face); }) ==
        code(Errc::session_expired));
  auto view = booth.election->session(id);
  CHECK(view.state == SessionState::closed);
  CHECK(view.close_reason == "timeout");
  CHECK(error_code([&] { booth.election->cast_vote(id, "A"); }) == code(Errc::session_expired));
  CHECK(error_code([&] { booth.election->verify_thumb(id, booth.voter(1).thumb); }) ==
        code(Errc::session_expired));
  CHECK(booth.audit.size() == 0);

  // Reading an abandoned session closes it as well.
  auto idle = booth.election->open_session();
  booth.now += 500;
  CHECK(booth.election->session(idle).state == SessionState::closed);

  CHECK(error_code([&] { Election(*booth.registry, two_way, booth.audit, ElectionConfig{0}); }) ==
        code(Errc::invalid_config));
}

TEST_CASE("duplicate enrollment is audited") {
  Booth booth(2);
  auto p = synth::make_person(200);  // voter 1 of the electorate
  CHECK(error_code([&] { booth.election->enroll(p.face, p.finger); }) == code(Errc::duplicate));
  auto events = booth.audit.since(0);
  REQUIRE(events.size() == 1);
  CHECK(events[0].kind == AuditKind::duplicate_enrollment);
  CHECK(events[0].voter_no == 1);
  CHECK(events[0].session_id.empty());

  auto q = synth::make_person(4242);
  auto rec = booth.election->enroll(q.face, q.finger);
  CHECK(rec.voter_no == 3);
  CHECK(booth.audit.size() == 1);
}

TEST_CASE("audit log file is JSON lines with sequence numbers") {
  auto path = std::filesystem::temp_directory_path() / "ballotgate_test_audit.jsonl";
  std::filesystem::remove(path);
  AuditLog log(path);
  log.append(AuditKind::thumb_rejected, 10, "s1", std::nullopt, "no match");
  log.append(AuditKind::face_rejected, 11, "s2", 4, "low");
  CHECK(log.since(1).size() == 1);
  CHECK(log.since(1)[0].seq == 2);
  CHECK(log.since(5).empty());

  std::ifstream in(path);
  std::string l1, l2, extra;
  REQUIRE(std::getline(in, l1));
  REQUIRE(std::getline(in, l2));
  CHECK_FALSE(std::getline(in, extra));
  CHECK(l1 == R"({"seq":1,"kind":"ThumbRejected","at":10,"session_id":"s1","voter_no":null,"detail":"no match"})");
  CHECK(l2 == R"({"seq":2,"kind":"FaceRejected","at":11,"session_id":"s2","voter_no":4,"detail":"low"})");
  std::filesystem::remove(path);
}

TEST_CASE("tally conservation over 50 randomized sessions") {
  Booth booth(6, Ballot{"t", {{"A", "a"}, {"B", "b"}, {"C", "c"}}});
  const auto& e = synth::electorate(6);
  std::mt19937_64 rng(7);
  int rejections = 0;
  for (int i = 0; i < 50; ++i) {
    auto id = booth.election->open_session();
    int v = static_cast<int>(rng() % 6);
    const auto& thumb = rng() % 8 == 0 ? e.strangers[0] : e.voters[v];
    if (!booth.election->verify_thumb(id, thumb.thumb).accepted) {
      ++rejections;
      continue;
    }
    const auto& face = rng() % 8 == 0 ? e.voters[(v + 1) % 6] : e.voters[v];
    if (!booth.election->verify_face(id, face.face).accepted) {
      ++rejections;
      continue;
    }
    try {
      booth.election->cast_vote(id, std::string(1, static_cast<char>('A' + rng() % 3)));
    } catch (const Error& err) {
      REQUIRE(err.code() == Errc::already_voted);
      ++rejections;
    }
  }
  CHECK(synth::check_workflow(*booth.election, *booth.registry, rejections) == "");
  CHECK(booth.election->tally().turnout > 0);
}

TEST_CASE("concurrent randomized schedules keep the workflow properties") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto report = synth::run_random_schedule(synth::electorate(6), seed);
    CAPTURE(seed);
    CHECK(report.failure == "");
    CHECK(report.sessions == 24);
  }
}
