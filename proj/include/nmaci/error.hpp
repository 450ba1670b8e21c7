#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nmaci {

/// Machine-readable failure categories, surfaced by the CLI as exit payloads.
enum class ErrorCode {
  invalid_input,
  disconnected_network,
  rank_deficient,
  duplicate_study,
  invalid_covariance,
  inadmissible_theta,
  not_positive_definite,
  kind_mismatch,
  degenerate_interval,
  refit_failure,
  quantile_out_of_range,
  parse_error,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_input: return "invalid_input";
    case ErrorCode::disconnected_network: return "disconnected_network";
    case ErrorCode::rank_deficient: return "rank_deficient";
    case ErrorCode::duplicate_study: return "duplicate_study";
    case ErrorCode::invalid_covariance: return "invalid_covariance";
    case ErrorCode::inadmissible_theta: return "inadmissible_theta";
    case ErrorCode::not_positive_definite: return "not_positive_definite";
    case ErrorCode::kind_mismatch: return "kind_mismatch";
    case ErrorCode::degenerate_interval: return "degenerate_interval";
    case ErrorCode::refit_failure: return "refit_failure";
    case ErrorCode::quantile_out_of_range: return "quantile_out_of_range";
    case ErrorCode::parse_error: return "parse_error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace nmaci
