#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ballotgate {

enum class Errc {
  dimension,
  bounds,
  training,
  insufficient_data,
  not_thinned,
  consistency,
  empty_gallery,
  empty_key,
  duplicate,
  face_not_found,
  blank_fingerprint,
  io,
  version_mismatch,
  corrupt_store,
  wrong_state,
  not_verified,
  already_voted,
  unknown_candidate,
  unknown_session,
  session_expired,
  invalid_config,
  malformed_input,
  empty_dataset,
  unknown_voter,
};

/// Stable machine-readable name, used as `error_code` in API responses.
std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

private:
  Errc code_;
};

enum class Modality { face, fingerprint };

std::string_view modality_name(Modality m);

/// Raised by enrollment when either biometric already belongs to a record.
class DuplicateError : public Error {
public:
  DuplicateError(std::int64_t duplicate_of, Modality modality, double similarity);

  std::int64_t duplicate_of() const noexcept { return duplicate_of_; }
  Modality modality() const noexcept { return modality_; }
  double similarity() const noexcept { return similarity_; }

private:
  std::int64_t duplicate_of_;
  Modality modality_;
  double similarity_;
};

/// Store load failure pointing at the first unreadable record (0-based).
class CorruptStoreError : public Error {
public:
  CorruptStoreError(std::size_t record_index, const std::string& detail);

  std::size_t record_index() const noexcept { return record_index_; }

private:
  std::size_t record_index_;
};

} // namespace ballotgate
