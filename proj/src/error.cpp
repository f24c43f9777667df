#include "ballotgate/error.hpp"

namespace ballotgate {

std::string_view errc_name(Errc code) {
  switch (code) {
  case Errc::dimension: return "dimension_error";
  case Errc::bounds: return "bounds_error";
  case Errc::training: return "training_error";
  case Errc::insufficient_data: return "insufficient_data";
  case Errc::not_thinned: return "not_thinned";
  case Errc::consistency: return "internal_consistency";
  case Errc::empty_gallery: return "empty_gallery";
  case Errc::empty_key: return "empty_key";
  case Errc::duplicate: return "duplicate_enrollment";
  case Errc::face_not_found: return "face_not_found";
  case Errc::blank_fingerprint: return "blank_fingerprint";
  case Errc::io: return "io_error";
  case Errc::version_mismatch: return "version_mismatch";
  case Errc::corrupt_store: return "corrupt_store";
  case Errc::wrong_state: return "wrong_state";
  case Errc::not_verified: return "not_verified";
  case Errc::already_voted: return "already_voted";
  case Errc::unknown_candidate: return "unknown_candidate";
  case Errc::unknown_session: return "unknown_session";
  case Errc::session_expired: return "session_expired";
  case Errc::invalid_config: return "invalid_config";
  case Errc::malformed_input: return "malformed_input";
  case Errc::empty_dataset: return "empty_dataset";
  case Errc::unknown_voter: return "unknown_voter";
  }
  return "unknown";
}

std::string_view modality_name(Modality m) {
  return m == Modality::face ? "face" : "fingerprint";
}

DuplicateError::DuplicateError(std::int64_t duplicate_of, Modality modality,
                               double similarity)
    : Error(Errc::duplicate,
            "duplicate registration: " + std::string(modality_name(modality)) +
                " matches voter " + std::to_string(duplicate_of)),
      duplicate_of_(duplicate_of), modality_(modality), similarity_(similarity) {}

CorruptStoreError::CorruptStoreError(std::size_t record_index,
                                     const std::string& detail)
    : Error(Errc::corrupt_store, "corrupted record " +
                                     std::to_string(record_index) + ": " + detail),
      record_index_(record_index) {}

} // namespace ballotgate
