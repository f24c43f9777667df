#include "json_format.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace ballotgate::detail {

namespace {

void dump_real(double v, std::string& out) {
  if (!std::isfinite(v)) throw std::domain_error("cannot serialize non-finite real");
  char buf[32];
  int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string_view s(buf, static_cast<std::size_t>(n));
  out.append(s);
  // Keep the value typed as a real when it happens to be integral.
  if (s.find_first_of(".eE") == std::string_view::npos) out.append(".0");
}

} // namespace

void dump17(const ojson& value, std::string& out) {
  switch (value.type()) {
  case ojson::value_t::object: {
    out.push_back('{');
    bool first = true;
    for (const auto& [key, item] : value.items()) {
      if (!first) out.push_back(',');
      first = false;
      out.append(ojson(key).dump());
      out.push_back(':');
      dump17(item, out);
    }
    out.push_back('}');
    break;
  }
  case ojson::value_t::array: {
    out.push_back('[');
    bool first = true;
    for (const auto& item : value) {
      if (!first) out.push_back(',');
      first = false;
      dump17(item, out);
    }
    out.push_back(']');
    break;
  }
  case ojson::value_t::number_float:
    dump_real(value.get<double>(), out);
    break;
  default:
    out.append(value.dump());
    break;
  }
}

} // namespace ballotgate::detail
