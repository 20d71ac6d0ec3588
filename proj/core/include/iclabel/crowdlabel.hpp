#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "iclabel/labels.hpp"

// Crowd-label aggregation: a collapsed Gibbs sampler over one latent true
// category per vote, jointly estimating component labels and per-labeler
// confusion matrices (7 true categories x 8 responses, the last being "?").
namespace iclabel::crowd {

inline constexpr std::size_t kNumResponses = 8;
inline constexpr std::size_t kQuestionMark = 7;
inline constexpr std::array<std::string_view, kNumResponses> kResponseKeys = {
    "brain", "muscle", "eye", "heart", "line_noise", "channel_noise", "other", "question_mark"};

using ConfusionMatrix = Eigen::Matrix<double, kNumCategories, kNumResponses, Eigen::RowMajor>;

struct Vote {
  std::string labeler_id;
  std::string component_id;
  std::size_t response = 0;  // 0..6 category, 7 "?"
  double weight = 1.0;       // in (0, 1]
  bool is_expert = false;
};
using VoteSet = std::vector<Vote>;

// One website submission, possibly selecting several responses.
struct Submission {
  std::string labeler_id;
  std::string component_id;
  std::array<bool, kNumResponses> selected{};
  bool is_expert = false;
};

// A submission selecting k responses becomes k votes of weight 1/k.
VoteSet expand_submissions(std::span<const Submission> submissions);

// Drops every vote of labelers who labeled fewer than min_components distinct
// components.
VoteSet filter_labelers(const VoteSet& votes, std::size_t min_components = 10);

struct LabelerPrior {
  ConfusionMatrix confusion_prior;

  // Throws Errc::invalid_prior unless every entry is finite and > 0.
  void validate() const;
};

struct ClassPrior {
  std::array<double, kNumCategories> alpha{};

  void validate() const;
};

enum class PriorMode { training_experts, training_unknown, test_experts };

LabelerPrior default_priors(PriorMode mode);
ClassPrior training_class_prior();
ClassPrior test_class_prior();

// Which prior table experts get; everyone else gets the unknown-skill prior.
enum class DatasetMode { training, test };
std::map<std::string, LabelerPrior> assign_priors(const VoteSet& votes, DatasetMode mode);
ClassPrior class_prior_for(DatasetMode mode);

struct GibbsConfig {
  std::size_t burn_in = 200;
  std::size_t sampling_epochs = 800;
  std::uint64_t seed = 0;
};

struct CrowdResult {
  std::vector<std::string> component_ids;
  std::vector<LabelVector> labels;  // parallel to component_ids
  std::map<std::string, ConfusionMatrix> labeler_confusions;
  // Weighted (category, response) counts per labeler after the last epoch.
  std::map<std::string, ConfusionMatrix> final_counts;
  std::size_t epochs = 0;
  std::uint64_t seed = 0;
};

// Components in `roster` that received no votes get the normalized class prior.
// Output order: roster first, then voted components in order of first appearance.
CrowdResult cllda_fit(const VoteSet& votes, const std::map<std::string, LabelerPrior>& priors,
                      const ClassPrior& class_prior, const GibbsConfig& config = {},
                      std::span<const std::string> roster = {});

std::string_view to_string(DatasetMode mode);

}  // namespace iclabel::crowd
