#include "mplnbc/error.hpp"

namespace mpln {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::parse_error: return "ParseError";
    case ErrorCode::negative_count: return "NegativeCount";
    case ErrorCode::non_integer_count: return "NonIntegerCount";
    case ErrorCode::duplicate_id: return "DuplicateId";
    case ErrorCode::duplicate_name: return "DuplicateName";
    case ErrorCode::empty_input: return "EmptyInput";
    case ErrorCode::zero_library_size: return "ZeroLibrarySize";
    case ErrorCode::nonpositive_offset: return "NonpositiveOffset";
    case ErrorCode::length_mismatch: return "LengthMismatch";
    case ErrorCode::invalid_argument: return "InvalidArgument";
    case ErrorCode::not_positive_definite: return "NotPositiveDefinite";
    case ErrorCode::zero_variance: return "ZeroVariance";
    case ErrorCode::empty_component: return "EmptyComponent";
    case ErrorCode::all_restarts_failed: return "AllRestartsFailed";
    case ErrorCode::all_cells_failed: return "AllCellsFailed";
    case ErrorCode::exhausted_redraws: return "ExhaustedRedraws";
    case ErrorCode::unknown_preset: return "UnknownPreset";
    case ErrorCode::dimension_mismatch: return "DimensionMismatch";
  }
  return "Error";
}

}  // namespace mpln
