#pragma once

#include <stdexcept>
#include <string>

namespace fmds {

enum class Errc {
  invalid_domain,
  invalid_count,
  out_of_domain,
  dimension_mismatch,
  degenerate_series,
  insufficient_data,
  non_symmetric,
  out_of_range,
  non_orthogonal,
  singular_system,
  empty_input,
  parse_error,
  unknown_label,
  invalid_config,
};

inline const char *to_string(Errc code) {
  switch (code) {
  case Errc::invalid_domain: return "invalid-domain";
  case Errc::invalid_count: return "invalid-count";
  case Errc::out_of_domain: return "out-of-domain";
  case Errc::dimension_mismatch: return "dimension-mismatch";
  case Errc::degenerate_series: return "degenerate-series";
  case Errc::insufficient_data: return "insufficient-data";
  case Errc::non_symmetric: return "non-symmetric";
  case Errc::out_of_range: return "out-of-range";
  case Errc::non_orthogonal: return "non-orthogonal";
  case Errc::singular_system: return "singular-system";
  case Errc::empty_input: return "empty-input";
  case Errc::parse_error: return "parse-error";
  case Errc::unknown_label: return "unknown-label";
  case Errc::invalid_config: return "invalid-config";
  }
  return "unknown";
}

/// Exception carrying a machine-checkable error category.
class Error : public std::runtime_error {
public:
  Error(Errc code, const std::string &what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  Errc code() const noexcept { return code_; }

private:
  Errc code_;
};

} // namespace fmds
