#pragma once

#include "ballotgate/detector.hpp"
#include "ballotgate/facerec.hpp"
#include "ballotgate/fingerprint.hpp"
#include "ballotgate/imaging.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ballotgate {

using Key = std::vector<unsigned char>;

/// HMAC-SHA256 of the counter, truncated to 128 bits and hex encoded. If the
/// hex happens to contain the counter's decimal digits, an attempt number is
/// mixed in and the digest recomputed until it does not.
std::string encrypt_id(std::int64_t counter, std::span<const unsigned char> key);

Key key_from_hex(std::string_view hex);

/// Reads BALLOTGATE_SECRET. Throws empty_key when it is unset or empty.
Key key_from_env();

struct RegistryConfig {
  double face_threshold = 0.90;
  double fp_threshold = 0.90;
  int face_side = 42;        // crop side; the eigen model must have side^2 dims
  int q_max = 3;
  int k = 1;
  int fp_block = 16;
  MinutiaeOptions minutiae;
  MatchOptions match;
};

struct VoterRecord {
  std::int64_t voter_no = 0;
  std::string encrypted_id;
  FaceTemplate face;
  FingerprintTemplate fingerprint;
  bool has_voted = false;
  std::int64_t enrolled_at = 0;  // UTC seconds

  friend bool operator==(const VoterRecord& a, const VoterRecord& b);
};

struct FingerprintHit {
  std::int64_t voter_no = 0;
  double similarity = 0.0;
};

struct FaceCheck {
  VerifyResult result;         // stage 1 and 2 of the cascade
  bool identity_matches = false;  // KNN candidate is the expected voter
  bool accepted = false;          // identity_matches && result.accepted
};

struct Tally {
  std::map<std::string, std::int64_t> counts;
  std::int64_t turnout = 0;
};

/// Turns a camera frame into a face vector. Without a detector the frame is
/// taken as an already cropped face.
class FaceCropper {
public:
  FaceCropper(int side, std::shared_ptr<const Cascade> detector = nullptr)
      : side_(side), detector_(std::move(detector)) {}

  /// Throws face_not_found when nothing is detected (or the frame is flat).
  FaceVector operator()(const GrayImage& frame) const;

  int side() const { return side_; }

private:
  int side_;
  std::shared_ptr<const Cascade> detector_;
};

/// Voter store. Enrollment and vote flags go through one writer lock; lookups
/// share a reader lock. When a path is attached every mutation is persisted
/// atomically before it returns.
class Registry {
public:
  using Clock = std::function<std::int64_t()>;

  Registry(std::shared_ptr<const EigenModel> model, Key key, RegistryConfig config = {},
           std::shared_ptr<const Cascade> detector = nullptr);

  const RegistryConfig& config() const { return config_; }
  const EigenModel& model() const { return *model_; }
  std::shared_ptr<const EigenModel> shared_model() const { return model_; }

  void set_clock(Clock clock) { clock_ = std::move(clock); }
  std::int64_t now() const { return clock_(); }

  /// Persist to `path` after every mutation from now on.
  void attach(std::filesystem::path path);
  const std::optional<std::filesystem::path>& attached_path() const { return path_; }

  FaceVector face_features(const GrayImage& frame) const { return cropper_(frame); }
  FingerprintTemplate fingerprint_features(const GrayImage& scan) const;

  /// Builds both templates and appends a record unless either biometric
  /// already matches some record (fingerprint checked first). Throws
  /// DuplicateError, face_not_found or blank_fingerprint.
  VoterRecord enroll(const GrayImage& face, const GrayImage& fingerprint);
  VoterRecord enroll_features(const FaceVector& face, FingerprintTemplate fingerprint);

  /// Highest-similarity record if it reaches the fingerprint threshold; ties go
  /// to the lower voter number.
  std::optional<FingerprintHit> lookup_by_fingerprint(const GrayImage& probe) const;
  std::optional<FingerprintHit> lookup_by_fingerprint(const FingerprintTemplate& probe) const;

  /// Best-scoring record regardless of the threshold; empty store gives none.
  std::optional<FingerprintHit> best_fingerprint(const FingerprintTemplate& probe) const;

  /// Cascaded verification whose KNN candidate must also be `voter_no`.
  FaceCheck verify_face(std::int64_t voter_no, const GrayImage& frame) const;
  FaceCheck verify_face(std::int64_t voter_no, const FaceVector& face) const;

  /// Marks the voter and counts the vote in one step. Throws already_voted
  /// (nothing changes) or unknown_voter.
  void cast(std::int64_t voter_no, const std::string& candidate_id);

  Tally tally() const;
  std::vector<VoterRecord> records() const;
  std::optional<VoterRecord> record(std::int64_t voter_no) const;
  std::size_t size() const;
  std::int64_t next_counter() const;

  /// Largest cross-record similarity per modality; used to check the dedup
  /// postcondition.
  std::pair<double, double> max_pairwise_similarity() const;

  void save(const std::filesystem::path& path) const;

  /// Replaces the contents with the store at `path`. Throws io,
  /// version_mismatch or CorruptStoreError.
  void load(const std::filesystem::path& path);

  std::string serialize() const;
  void deserialize(std::string_view text);

private:
  void persist_locked() const;
  std::string serialize_locked() const;
  void rebuild_gallery_locked();

  std::shared_ptr<const EigenModel> model_;
  Key key_;
  RegistryConfig config_;
  FaceCropper cropper_;
  Clock clock_;
  std::optional<std::filesystem::path> path_;

  mutable std::shared_mutex mutex_;
  std::vector<VoterRecord> records_;
  std::int64_t next_counter_ = 1;
  std::map<std::string, std::int64_t> votes_;
  FaceGallery gallery_;
};

/// Writes `text` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view text);
std::string read_file(const std::filesystem::path& path);

} // namespace ballotgate
