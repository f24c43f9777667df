#include "ballotgate/registry.hpp"

#include "ballotgate/error.hpp"
#include "json_format.hpp"
#include "template_json.hpp"

#include <openssl/evp.h>
#include <openssl/hmac.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>

namespace ballotgate {

namespace {

constexpr int store_version = 1;
constexpr const char* store_format = "ballotgate-registry";

std::string to_hex(const unsigned char* p, std::size_t n) {
  static const char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(digits[p[i] >> 4]);
    out.push_back(digits[p[i] & 0xF]);
  }
  return out;
}

std::int64_t system_seconds() {
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string label_of(std::int64_t voter_no) { return std::to_string(voter_no); }

detail::ojson record_to_ojson(const VoterRecord& r) {
  detail::ojson doc;
  doc["voter_no"] = r.voter_no;
  doc["encrypted_id"] = r.encrypted_id;
  doc["has_voted"] = r.has_voted;
  doc["enrolled_at"] = r.enrolled_at;
  detail::ojson coords = detail::ojson::array();
  for (Eigen::Index i = 0; i < r.face.coords.size(); ++i) coords.push_back(r.face.coords[i]);
  doc["face"] = detail::ojson{{"identity", r.face.identity}, {"coords", std::move(coords)}};
  doc["fingerprint"] = detail::fingerprint_to_ojson(r.fingerprint);
  return doc;
}

VoterRecord record_from_json(const nlohmann::json& doc, int components) {
  VoterRecord r;
  r.voter_no = doc.at("voter_no").get<std::int64_t>();
  r.encrypted_id = doc.at("encrypted_id").get<std::string>();
  r.has_voted = doc.at("has_voted").get<bool>();
  r.enrolled_at = doc.at("enrolled_at").get<std::int64_t>();
  const auto& face = doc.at("face");
  r.face.identity = face.at("identity").get<std::string>();
  auto coords = face.at("coords").get<std::vector<double>>();
  if (static_cast<int>(coords.size()) != components) {
    throw Error(Errc::consistency, "face template has " + std::to_string(coords.size()) +
                                       " coordinates, model has " + std::to_string(components));
  }
  r.face.coords = Eigen::Map<Eigen::VectorXd>(coords.data(), components);
  r.fingerprint = detail::fingerprint_from_ojson(doc.at("fingerprint"));
  return r;
}

} // namespace

bool operator==(const VoterRecord& a, const VoterRecord& b) {
  return a.voter_no == b.voter_no && a.encrypted_id == b.encrypted_id &&
         a.face.identity == b.face.identity && a.face.coords.size() == b.face.coords.size() &&
         a.face.coords == b.face.coords && a.fingerprint == b.fingerprint &&
         a.has_voted == b.has_voted && a.enrolled_at == b.enrolled_at;
}

std::string encrypt_id(std::int64_t counter, std::span<const unsigned char> key) {
  if (key.empty()) throw Error(Errc::empty_key, "encryption key is empty");
  const std::string decimal = std::to_string(counter);
  for (std::uint32_t attempt = 0;; ++attempt) {
    std::string msg = "voter:" + decimal + ":" + std::to_string(attempt);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()),
             reinterpret_cast<const unsigned char*>(msg.data()), msg.size(), digest,
             &len) == nullptr) {
      throw Error(Errc::consistency, "HMAC-SHA256 failed");
    }
    std::string id = to_hex(digest, 16);
    if (id.find(decimal) == std::string::npos) return id;
  }
}

Key key_from_hex(std::string_view hex) {
  if (hex.empty()) throw Error(Errc::empty_key, "encryption key is empty");
  if (hex.size() % 2 != 0) throw Error(Errc::invalid_config, "hex key has odd length");
  Key key;
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    auto nibble = [&](char c) -> int {
      if (c >= '0' && c <= '9') return c - '0';
      if (c >= 'a' && c <= 'f') return c - 'a' + 10;
      if (c >= 'A' && c <= 'F') return c - 'A' + 10;
      throw Error(Errc::invalid_config, "key is not hex");
    };
    key.push_back(static_cast<unsigned char>(nibble(hex[i]) * 16 + nibble(hex[i + 1])));
  }
  return key;
}

Key key_from_env() {
  const char* v = std::getenv("BALLOTGATE_SECRET");
  if (v == nullptr || *v == '\0') {
    throw Error(Errc::empty_key, "BALLOTGATE_SECRET is not set");
  }
  return key_from_hex(v);
}

FaceVector FaceCropper::operator()(const GrayImage& frame) const {
  if (frame.empty()) throw Error(Errc::face_not_found, "empty face image");
  if (detector_) {
    auto hits = detect_faces(frame, *detector_);
    if (hits.empty()) throw Error(Errc::face_not_found, "no face detected");
    return face_vector(crop(frame, hits.front().box), side_);
  }
  auto px = frame.pixels();
  auto [lo, hi] = std::minmax_element(px.begin(), px.end());
  if (*lo == *hi) throw Error(Errc::face_not_found, "face image is flat");
  return face_vector(frame, side_);
}

Registry::Registry(std::shared_ptr<const EigenModel> model, Key key, RegistryConfig config,
                   std::shared_ptr<const Cascade> detector)
    : model_(std::move(model)),
      key_(std::move(key)),
      config_(config),
      cropper_(config.face_side, std::move(detector)),
      clock_(system_seconds),
      gallery_(model_, config.q_max, config.k) {
  if (key_.empty()) throw Error(Errc::empty_key, "encryption key is empty");
  if (model_->dimension() != config_.face_side * config_.face_side) {
    throw Error(Errc::invalid_config,
                "eigen model has " + std::to_string(model_->dimension()) +
                    " dimensions but face crops have " +
                    std::to_string(config_.face_side * config_.face_side));
  }
}

void Registry::attach(std::filesystem::path path) {
  std::unique_lock lock(mutex_);
  path_ = std::move(path);
  persist_locked();
}

FingerprintTemplate Registry::fingerprint_features(const GrayImage& scan) const {
  return make_fingerprint_template(scan, config_.fp_block, config_.minutiae);
}

VoterRecord Registry::enroll(const GrayImage& face, const GrayImage& fingerprint) {
  FaceVector fv = cropper_(face);
  return enroll_features(fv, fingerprint_features(fingerprint));
}

VoterRecord Registry::enroll_features(const FaceVector& face, FingerprintTemplate fingerprint) {
  if (fingerprint.minutiae.empty()) {
    throw Error(Errc::blank_fingerprint, "no minutiae found in the fingerprint scan");
  }
  Coords coords = project(*model_, face);

  std::unique_lock lock(mutex_);
  for (const auto& r : records_) {
    double s = match_templates(fingerprint, r.fingerprint, config_.match).similarity;
    if (s >= config_.fp_threshold) throw DuplicateError(r.voter_no, Modality::fingerprint, s);
  }
  for (const auto& r : records_) {
    double s = gallery_.similarity_to(r.face.identity, coords);
    if (s >= config_.face_threshold) throw DuplicateError(r.voter_no, Modality::face, s);
  }

  VoterRecord rec;
  rec.voter_no = next_counter_;
  rec.encrypted_id = encrypt_id(rec.voter_no, key_);
  rec.face = FaceTemplate{label_of(rec.voter_no), std::move(coords)};
  rec.fingerprint = std::move(fingerprint);
  rec.enrolled_at = clock_();
  records_.push_back(rec);
  ++next_counter_;
  try {
    gallery_.add(rec.face);
    persist_locked();
  } catch (...) {
    records_.pop_back();
    --next_counter_;
    rebuild_gallery_locked();
    throw;
  }
  return rec;
}

std::optional<FingerprintHit> Registry::lookup_by_fingerprint(const GrayImage& probe) const {
  return lookup_by_fingerprint(fingerprint_features(probe));
}

std::optional<FingerprintHit> Registry::lookup_by_fingerprint(
    const FingerprintTemplate& probe) const {
  auto best = best_fingerprint(probe);
  if (best && best->similarity >= config_.fp_threshold) return best;
  return std::nullopt;
}

std::optional<FingerprintHit> Registry::best_fingerprint(const FingerprintTemplate& probe) const {
  std::shared_lock lock(mutex_);
  std::optional<FingerprintHit> best;
  for (const auto& r : records_) {
    double s = match_templates(probe, r.fingerprint, config_.match).similarity;
    if (!best || s > best->similarity) best = FingerprintHit{r.voter_no, s};
  }
  return best;
}

FaceCheck Registry::verify_face(std::int64_t voter_no, const GrayImage& frame) const {
  return verify_face(voter_no, cropper_(frame));
}

FaceCheck Registry::verify_face(std::int64_t voter_no, const FaceVector& face) const {
  std::shared_lock lock(mutex_);
  FaceCheck check;
  check.result = gallery_.verify(face, config_.face_threshold);
  check.identity_matches = check.result.candidate == label_of(voter_no);
  check.accepted = check.identity_matches && check.result.accepted;
  return check;
}

void Registry::cast(std::int64_t voter_no, const std::string& candidate_id) {
  std::unique_lock lock(mutex_);
  auto it = std::find_if(records_.begin(), records_.end(),
                         [&](const VoterRecord& r) { return r.voter_no == voter_no; });
  if (it == records_.end()) {
    throw Error(Errc::unknown_voter, "no voter number " + std::to_string(voter_no));
  }
  if (it->has_voted) {
    throw Error(Errc::already_voted, "voter " + std::to_string(voter_no) + " has already voted");
  }
  it->has_voted = true;
  ++votes_[candidate_id];
  try {
    persist_locked();
  } catch (...) {
    it->has_voted = false;
    if (--votes_[candidate_id] == 0) votes_.erase(candidate_id);
    throw;
  }
}

Tally Registry::tally() const {
  std::shared_lock lock(mutex_);
  Tally t;
  t.counts = votes_;
  for (const auto& r : records_) t.turnout += r.has_voted ? 1 : 0;
  return t;
}

std::vector<VoterRecord> Registry::records() const {
  std::shared_lock lock(mutex_);
  return records_;
}

std::optional<VoterRecord> Registry::record(std::int64_t voter_no) const {
  std::shared_lock lock(mutex_);
  for (const auto& r : records_) {
    if (r.voter_no == voter_no) return r;
  }
  return std::nullopt;
}

std::size_t Registry::size() const {
  std::shared_lock lock(mutex_);
  return records_.size();
}

std::int64_t Registry::next_counter() const {
  std::shared_lock lock(mutex_);
  return next_counter_;
}

std::pair<double, double> Registry::max_pairwise_similarity() const {
  std::shared_lock lock(mutex_);
  double face = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    for (std::size_t j = 0; j < records_.size(); ++j) {
      if (i == j) continue;
      face = std::max(face, gallery_.similarity_to(records_[i].face.identity,
                                                   records_[j].face.coords));
      if (j > i) {
        fp = std::max(fp, match_templates(records_[i].fingerprint, records_[j].fingerprint,
                                          config_.match)
                              .similarity);
      }
    }
  }
  return {face, fp};
}

std::string Registry::serialize() const {
  std::shared_lock lock(mutex_);
  return serialize_locked();
}

std::string Registry::serialize_locked() const {
  detail::ojson header;
  header["format"] = store_format;
  header["version"] = store_version;
  header["next_counter"] = next_counter_;
  header["record_count"] = records_.size();
  header["face_components"] = model_->components();
  header["tally"] = detail::ojson::object();
  for (const auto& [cand, n] : votes_) header["tally"][cand] = n;
  std::string out = detail::dump17(header);
  out.push_back('\n');
  for (const auto& r : records_) {
    detail::dump17(record_to_ojson(r), out);
    out.push_back('\n');
  }
  return out;
}

void Registry::deserialize(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    if (!line.empty()) lines.push_back(line);
    pos = nl + 1;
  }
  if (lines.empty()) throw Error(Errc::corrupt_store, "store has no header line");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(lines[0]);
    if (header.at("format").get<std::string>() != store_format) {
      throw Error(Errc::corrupt_store, "not a voter store");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::corrupt_store, std::string("unreadable store header: ") + e.what());
  }
  std::int64_t next = 0;
  std::size_t count = 0;
  std::map<std::string, std::int64_t> votes;
  try {
    if (header.at("version").get<int>() != store_version) {
      throw Error(Errc::version_mismatch,
                  "store version " + header.at("version").dump() + " is not supported");
    }
    next = header.at("next_counter").get<std::int64_t>();
    count = header.at("record_count").get<std::size_t>();
    if (header.at("face_components").get<int>() != model_->components()) {
      throw Error(Errc::consistency, "store was written for a different eigen model");
    }
    votes = header.at("tally").get<std::map<std::string, std::int64_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::corrupt_store, std::string("bad store header: ") + e.what());
  }

  std::vector<VoterRecord> records;
  for (std::size_t i = 0; i < count; ++i) {
    if (i + 1 >= lines.size()) throw CorruptStoreError(i, "record is missing (file truncated)");
    try {
      records.push_back(record_from_json(nlohmann::json::parse(lines[i + 1]),
                                         model_->components()));
    } catch (const nlohmann::json::exception& e) {
      throw CorruptStoreError(i, e.what());
    } catch (const Error& e) {
      throw CorruptStoreError(i, e.what());
    }
    const auto& r = records.back();
    if (i > 0 && r.voter_no <= records[i - 1].voter_no) {
      throw CorruptStoreError(i, "voter numbers are not increasing");
    }
    if (r.face.identity != label_of(r.voter_no)) {
      throw CorruptStoreError(i, "face identity does not match voter number");
    }
  }
  if (lines.size() > count + 1) throw CorruptStoreError(count, "unexpected extra record");
  const std::int64_t expected_next = records.empty() ? 1 : records.back().voter_no + 1;
  if (next != expected_next) {
    throw Error(Errc::corrupt_store, "next_counter " + std::to_string(next) +
                                         " does not follow the last voter number");
  }
  std::int64_t voted = 0, counted = 0;
  for (const auto& r : records) voted += r.has_voted ? 1 : 0;
  for (const auto& [cand, n] : votes) counted += n;
  if (voted != counted) throw Error(Errc::corrupt_store, "tally does not match voter flags");

  std::unique_lock lock(mutex_);
  records_ = std::move(records);
  next_counter_ = next;
  votes_ = std::move(votes);
  rebuild_gallery_locked();
}

void Registry::save(const std::filesystem::path& path) const {
  std::shared_lock lock(mutex_);
  write_file_atomic(path, serialize_locked());
}

void Registry::load(const std::filesystem::path& path) { deserialize(read_file(path)); }

void Registry::persist_locked() const {
  if (path_) write_file_atomic(*path_, serialize_locked());
}

void Registry::rebuild_gallery_locked() {
  gallery_.clear();
  for (const auto& r : records_) gallery_.add(r.face);
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io, "cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.flush();
    if (!out) throw Error(Errc::io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(Errc::io, "cannot replace " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

} // namespace ballotgate
