#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace iclabel {

// The seven IC source categories, in canonical order.
enum class Category : std::size_t {
  brain = 0,
  muscle,
  eye,
  heart,
  line_noise,
  channel_noise,
  other,
};

inline constexpr std::size_t kNumCategories = 7;

inline constexpr std::array<std::string_view, kNumCategories> kCategoryNames = {
    "Brain", "Muscle", "Eye", "Heart", "Line Noise", "Channel Noise", "Other"};

// Column keys used by CSV files (labels, votes).
inline constexpr std::array<std::string_view, kNumCategories> kCategoryKeys = {
    "brain", "muscle", "eye", "heart", "line_noise", "channel_noise", "other"};

std::string_view category_name(Category c) noexcept;
std::optional<Category> category_from_key(std::string_view key) noexcept;

// Compositional label: non-negative, sums to one.
struct LabelVector {
  std::array<double, kNumCategories> p{};

  static LabelVector uniform();
  static LabelVector one_hot(Category c);

  double& operator[](std::size_t i) { return p[i]; }
  double operator[](std::size_t i) const { return p[i]; }
  double operator[](Category c) const { return p[static_cast<std::size_t>(c)]; }

  double sum() const;
  // Lowest index wins ties.
  Category argmax() const;
  // True when all entries are finite, non-negative and sum to 1 within tol.
  bool is_valid(double tol = 1e-6) const;

  friend bool operator==(const LabelVector&, const LabelVector&) = default;
};

// Lowest index wins ties.
std::size_t argmax(std::span<const double> values);

// Scales a non-negative vector to unit sum. Throws Errc::invalid_argument when the
// vector has no mass.
std::vector<double> normalized(std::span<const double> values);

}  // namespace iclabel
