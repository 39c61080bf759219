#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mpln {

enum class ErrorCode {
  parse_error,
  negative_count,
  non_integer_count,
  duplicate_id,
  duplicate_name,
  empty_input,
  zero_library_size,
  nonpositive_offset,
  length_mismatch,
  invalid_argument,
  not_positive_definite,
  zero_variance,
  empty_component,
  all_restarts_failed,
  all_cells_failed,
  exhausted_redraws,
  unknown_preset,
  dimension_mismatch,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so that
/// callers (and the CLI's exit-code mapping) can branch without parsing text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mpln
