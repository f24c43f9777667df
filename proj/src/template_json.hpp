#pragma once

#include "ballotgate/facerec.hpp"
#include "ballotgate/fingerprint.hpp"
#include "json_format.hpp"

namespace ballotgate::detail {

ojson fingerprint_to_ojson(const FingerprintTemplate& t);
FingerprintTemplate fingerprint_from_ojson(const nlohmann::json& doc);

} // namespace ballotgate::detail
