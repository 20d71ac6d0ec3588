#include "iclabel/labels.hpp"

#include <cmath>
#include <numeric>

#include "iclabel/error.hpp"

namespace iclabel {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::usage: return "usage";
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::degenerate_montage: return "degenerate-montage";
    case Errc::interpolation_rank: return "interpolation-rank";
    case Errc::insufficient_data: return "insufficient-data";
    case Errc::invalid_rate: return "invalid-rate";
    case Errc::undefined_autocorrelation: return "undefined-autocorrelation";
    case Errc::invalid_recording: return "invalid-recording";
    case Errc::shape_mismatch: return "shape-mismatch";
    case Errc::numeric_instability: return "numeric-instability";
    case Errc::non_finite_gradient: return "non-finite-gradient";
    case Errc::empty_dataset: return "empty-dataset";
    case Errc::divergence: return "divergence";
    case Errc::malformed_submission: return "malformed-submission";
    case Errc::configuration: return "configuration";
    case Errc::invalid_prior: return "invalid-prior";
    case Errc::empty_result: return "empty-result";
    case Errc::empty_input: return "empty-input";
    case Errc::undefined_curve: return "undefined-curve";
    case Errc::undefined_point: return "undefined-point";
    case Errc::id_mismatch: return "id-mismatch";
    case Errc::format: return "format";
    case Errc::io: return "io";
  }
  return "unknown";
}

int exit_code(Errc code) noexcept {
  switch (code) {
    case Errc::usage:
    case Errc::configuration:
      return 1;
    case Errc::numeric_instability:
    case Errc::non_finite_gradient:
    case Errc::divergence:
      return 3;
    default:
      return 2;
  }
}

std::string_view category_name(Category c) noexcept {
  return kCategoryNames[static_cast<std::size_t>(c)];
}

std::optional<Category> category_from_key(std::string_view key) noexcept {
  for (std::size_t i = 0; i < kNumCategories; ++i) {
    if (kCategoryKeys[i] == key) return static_cast<Category>(i);
  }
  return std::nullopt;
}

LabelVector LabelVector::uniform() {
  LabelVector v;
  v.p.fill(1.0 / kNumCategories);
  return v;
}

LabelVector LabelVector::one_hot(Category c) {
  LabelVector v;
  v.p[static_cast<std::size_t>(c)] = 1.0;
  return v;
}

double LabelVector::sum() const { return std::accumulate(p.begin(), p.end(), 0.0); }

Category LabelVector::argmax() const {
  return static_cast<Category>(iclabel::argmax(p));
}

bool LabelVector::is_valid(double tol) const {
  for (double x : p) {
    if (!std::isfinite(x) || x < 0.0) return false;
  }
  return std::abs(sum() - 1.0) <= tol;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<double> normalized(std::span<const double> values) {
  const double total = std::accumulate(values.begin(), values.end(), 0.0);
  if (!(total > 0.0)) throw Error(Errc::invalid_argument, "cannot normalize a vector with no mass");
  std::vector<double> out(values.begin(), values.end());
  for (double& x : out) x /= total;
  return out;
}

}  // namespace iclabel
