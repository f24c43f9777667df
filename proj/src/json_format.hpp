#pragma once

// JSON emission with reals written as %.17g so serialized models reproduce
// every bit of their doubles. Parsing goes through nlohmann::json as usual.

#include "json.hpp"

#include <string>

namespace ballotgate::detail {

using ojson = nlohmann::ordered_json;

void dump17(const ojson& value, std::string& out);

inline std::string dump17(const ojson& value) {
  std::string out;
  dump17(value, out);
  return out;
}

} // namespace ballotgate::detail
