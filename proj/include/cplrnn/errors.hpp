#pragma once

#include <stdexcept>
#include <string>

namespace cplrnn {

enum class ErrorCode {
  singular_region_matrix,   // region matrix condition estimate past the cap
  near_defective,           // eigenvalue gap too small for a stable adjoint
  imaginary_residue,        // conjugate symmetry violated at evaluation
  search_inconclusive,      // root search hit max depth with no verified root
  degenerate_gradient,      // too many discarded segments in one backward pass
  non_finite_loss,          // training loss left the finite range
  non_finite_state,         // generated trajectory left the finite range
  invalid_itinerary,        // converged orbit leaves its region early
  no_convergence,           // boundary-value solve did not reach tolerance
  embed_requires_regular,   // delay embedding needs a regular time grid
  minimum_refractory,       // LIF reset/threshold configuration degenerate
  histogram_too_large,      // m^N exceeds the bin-count guard
  io_error,
  bad_config,
};

inline const char* error_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::singular_region_matrix: return "SINGULAR_REGION_MATRIX";
    case ErrorCode::near_defective: return "NEAR_DEFECTIVE";
    case ErrorCode::imaginary_residue: return "IMAGINARY_RESIDUE";
    case ErrorCode::search_inconclusive: return "SEARCH_INCONCLUSIVE";
    case ErrorCode::degenerate_gradient: return "DEGENERATE_GRADIENT";
    case ErrorCode::non_finite_loss: return "NON_FINITE_LOSS";
    case ErrorCode::non_finite_state: return "NON_FINITE_STATE";
    case ErrorCode::invalid_itinerary: return "INVALID_ITINERARY";
    case ErrorCode::no_convergence: return "NO_CONVERGENCE";
    case ErrorCode::embed_requires_regular: return "EMBED_REQUIRES_REGULAR";
    case ErrorCode::minimum_refractory: return "MINIMUM_REFRACTORY";
    case ErrorCode::histogram_too_large: return "HISTOGRAM_TOO_LARGE";
    case ErrorCode::io_error: return "IO_ERROR";
    case ErrorCode::bad_config: return "BAD_CONFIG";
  }
  return "UNKNOWN";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_name(code)) + ": " + what),
        code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cplrnn
