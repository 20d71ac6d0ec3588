#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace iclabel {

enum class Errc {
  usage,
  invalid_argument,
  // features
  degenerate_montage,
  interpolation_rank,
  insufficient_data,
  invalid_rate,
  undefined_autocorrelation,
  invalid_recording,
  // network
  shape_mismatch,
  numeric_instability,
  non_finite_gradient,
  empty_dataset,
  divergence,
  // crowd labels
  malformed_submission,
  configuration,
  invalid_prior,
  empty_result,
  // metrics
  empty_input,
  undefined_curve,
  undefined_point,
  id_mismatch,
  // files
  format,
  io,
};

std::string_view to_string(Errc code) noexcept;

// Process exit status for an error category: 1 usage, 2 data, 3 numeric.
int exit_code(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace iclabel
