#include "iclabel/crowdlabel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <unordered_map>

#include "iclabel/error.hpp"

namespace iclabel::crowd {
namespace {

LabelerPrior diagonal_prior(double diagonal, double off_diagonal) {
  LabelerPrior prior;
  prior.confusion_prior.setConstant(off_diagonal);
  for (std::size_t k = 0; k < kNumCategories; ++k) {
    prior.confusion_prior(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)) = diagonal;
  }
  return prior;
}

struct IndexedVote {
  std::size_t component;
  std::size_t labeler;
  std::size_t response;
  double weight;
  std::size_t z;
};

}  // namespace

VoteSet expand_submissions(std::span<const Submission> submissions) {
  VoteSet votes;
  for (std::size_t s = 0; s < submissions.size(); ++s) {
    const auto& sub = submissions[s];
    const auto k = static_cast<std::size_t>(
        std::count(sub.selected.begin(), sub.selected.end(), true));
    if (k == 0) {
      throw Error(Errc::malformed_submission, "submission " + std::to_string(s) + " by " +
                                                  sub.labeler_id + " on " + sub.component_id +
                                                  " selects no response");
    }
    const double weight = 1.0 / static_cast<double>(k);
    for (std::size_t r = 0; r < kNumResponses; ++r) {
      if (!sub.selected[r]) continue;
      votes.push_back({sub.labeler_id, sub.component_id, r, weight, sub.is_expert});
    }
  }
  return votes;
}

VoteSet filter_labelers(const VoteSet& votes, std::size_t min_components) {
  std::map<std::string, std::set<std::string>> seen;
  for (const auto& v : votes) seen[v.labeler_id].insert(v.component_id);
  VoteSet kept;
  for (const auto& v : votes) {
    if (seen[v.labeler_id].size() >= min_components) kept.push_back(v);
  }
  return kept;
}

void LabelerPrior::validate() const {
  for (Eigen::Index k = 0; k < confusion_prior.rows(); ++k) {
    for (Eigen::Index r = 0; r < confusion_prior.cols(); ++r) {
      const double b = confusion_prior(k, r);
      if (!std::isfinite(b) || b <= 0.0) {
        throw Error(Errc::invalid_prior, "labeler prior entry (" + std::to_string(k) + ", " +
                                             std::to_string(r) + ") must be positive, got " +
                                             std::to_string(b));
      }
    }
  }
}

void ClassPrior::validate() const {
  for (std::size_t k = 0; k < kNumCategories; ++k) {
    if (!std::isfinite(alpha[k]) || alpha[k] <= 0.0) {
      throw Error(Errc::invalid_prior, "class prior for " + std::string(kCategoryKeys[k]) +
                                           " must be positive, got " + std::to_string(alpha[k]));
    }
  }
}

LabelerPrior default_priors(PriorMode mode) {
  switch (mode) {
    case PriorMode::training_experts: return diagonal_prior(50.01, 0.01);
    case PriorMode::training_unknown: return diagonal_prior(1.25, 0.25);
    case PriorMode::test_experts: return diagonal_prior(5.0, 0.01);
  }
  throw Error(Errc::invalid_argument, "unknown prior mode");
}

ClassPrior training_class_prior() {
  return {{0.002973, 0.001766, 0.00079, 0.00015, 0.000573, 0.00073, 0.003022}};
}

ClassPrior test_class_prior() {
  return {{0.002263, 0.001537, 0.001753, 0.000155, 0.00063, 0.001839, 0.001822}};
}

std::map<std::string, LabelerPrior> assign_priors(const VoteSet& votes, DatasetMode mode) {
  const auto expert = default_priors(mode == DatasetMode::training ? PriorMode::training_experts
                                                                   : PriorMode::test_experts);
  const auto unknown = default_priors(PriorMode::training_unknown);
  std::map<std::string, bool> is_expert;
  for (const auto& v : votes) is_expert[v.labeler_id] = is_expert[v.labeler_id] || v.is_expert;
  std::map<std::string, LabelerPrior> priors;
  for (const auto& [id, e] : is_expert) priors.emplace(id, e ? expert : unknown);
  return priors;
}

ClassPrior class_prior_for(DatasetMode mode) {
  return mode == DatasetMode::training ? training_class_prior() : test_class_prior();
}

std::string_view to_string(DatasetMode mode) {
  return mode == DatasetMode::training ? "training" : "test";
}

CrowdResult cllda_fit(const VoteSet& votes, const std::map<std::string, LabelerPrior>& priors,
                      const ClassPrior& class_prior, const GibbsConfig& config,
                      std::span<const std::string> roster) {
  class_prior.validate();
  if (votes.empty()) throw Error(Errc::empty_result, "no votes to aggregate");
  if (config.sampling_epochs == 0) {
    throw Error(Errc::configuration, "sampling_epochs must be positive");
  }

  CrowdResult result;
  result.seed = config.seed;
  result.epochs = config.burn_in + config.sampling_epochs;

  std::unordered_map<std::string, std::size_t> component_index;
  auto add_component = [&](const std::string& id) {
    if (component_index.emplace(id, result.component_ids.size()).second) {
      result.component_ids.push_back(id);
    }
  };
  for (const auto& id : roster) add_component(id);
  for (const auto& v : votes) add_component(v.component_id);

  std::vector<std::string> labeler_ids;
  std::unordered_map<std::string, std::size_t> labeler_index;
  for (const auto& v : votes) {
    if (labeler_index.emplace(v.labeler_id, labeler_ids.size()).second) {
      labeler_ids.push_back(v.labeler_id);
    }
  }
  std::vector<ConfusionMatrix> prior(labeler_ids.size());
  std::vector<std::array<double, kNumCategories>> prior_row_sum(labeler_ids.size());
  for (std::size_t l = 0; l < labeler_ids.size(); ++l) {
    const auto it = priors.find(labeler_ids[l]);
    if (it == priors.end()) {
      throw Error(Errc::configuration, "labeler " + labeler_ids[l] + " has no prior");
    }
    it->second.validate();
    prior[l] = it->second.confusion_prior;
    for (std::size_t k = 0; k < kNumCategories; ++k) {
      prior_row_sum[l][k] = prior[l].row(static_cast<Eigen::Index>(k)).sum();
    }
  }

  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> any_category(0, kNumCategories - 1);

  std::vector<IndexedVote> indexed;
  indexed.reserve(votes.size());
  for (const auto& v : votes) {
    if (v.response >= kNumResponses) {
      throw Error(Errc::malformed_submission, "vote by " + v.labeler_id + " has response " +
                                                  std::to_string(v.response));
    }
    if (!(v.weight > 0.0 && v.weight <= 1.0)) {
      throw Error(Errc::malformed_submission, "vote by " + v.labeler_id + " on " +
                                                  v.component_id + " has weight outside (0, 1]");
    }
    const std::size_t z = v.response < kNumCategories ? v.response : any_category(rng);
    indexed.push_back({component_index.at(v.component_id), labeler_index.at(v.labeler_id),
                       v.response, v.weight, z});
  }

  const std::size_t n_components = result.component_ids.size();
  std::vector<std::array<double, kNumCategories>> n(n_components);
  std::vector<ConfusionMatrix> m(labeler_ids.size());
  std::vector<std::array<double, kNumCategories>> m_row(labeler_ids.size());

  // Counts are rebuilt every epoch so fractional weights cannot drift.
  auto rebuild_counts = [&] {
    for (auto& row : n) row.fill(0.0);
    for (auto& mat : m) mat.setZero();
    for (auto& row : m_row) row.fill(0.0);
    for (const auto& v : indexed) {
      n[v.component][v.z] += v.weight;
      m[v.labeler](static_cast<Eigen::Index>(v.z), static_cast<Eigen::Index>(v.response)) +=
          v.weight;
      m_row[v.labeler][v.z] += v.weight;
    }
  };

  std::vector<std::array<double, kNumCategories>> label_sum(n_components);
  for (auto& row : label_sum) row.fill(0.0);
  std::vector<ConfusionMatrix> confusion_sum(labeler_ids.size(), ConfusionMatrix::Zero());

  std::vector<std::size_t> order(indexed.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::array<double, kNumCategories> weight{};

  for (std::size_t epoch = 0; epoch < result.epochs; ++epoch) {
    rebuild_counts();
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t idx : order) {
      auto& v = indexed[idx];
      auto& nc = n[v.component];
      auto& ml = m[v.labeler];
      auto& ml_row = m_row[v.labeler];
      const auto r = static_cast<Eigen::Index>(v.response);
      nc[v.z] -= v.weight;
      ml(static_cast<Eigen::Index>(v.z), r) -= v.weight;
      ml_row[v.z] -= v.weight;

      double total = 0.0;
      for (std::size_t k = 0; k < kNumCategories; ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        const double class_term = class_prior.alpha[k] + std::max(nc[k], 0.0);
        const double response_term = prior[v.labeler](kk, r) + std::max(ml(kk, r), 0.0);
        const double row_term = prior_row_sum[v.labeler][k] + std::max(ml_row[k], 0.0);
        weight[k] = class_term * response_term / row_term;
        total += weight[k];
      }
      double u = unit(rng) * total;
      std::size_t z = kNumCategories - 1;
      for (std::size_t k = 0; k < kNumCategories; ++k) {
        if (u < weight[k]) {
          z = k;
          break;
        }
        u -= weight[k];
      }
      v.z = z;
      nc[z] += v.weight;
      ml(static_cast<Eigen::Index>(z), r) += v.weight;
      ml_row[z] += v.weight;
    }

    if (epoch < config.burn_in) continue;
    for (std::size_t c = 0; c < n_components; ++c) {
      double total = 0.0;
      for (std::size_t k = 0; k < kNumCategories; ++k) {
        total += class_prior.alpha[k] + std::max(n[c][k], 0.0);
      }
      for (std::size_t k = 0; k < kNumCategories; ++k) {
        label_sum[c][k] += (class_prior.alpha[k] + std::max(n[c][k], 0.0)) / total;
      }
    }
    for (std::size_t l = 0; l < labeler_ids.size(); ++l) {
      ConfusionMatrix pseudo = prior[l] + m[l].cwiseMax(0.0);
      for (Eigen::Index k = 0; k < pseudo.rows(); ++k) pseudo.row(k) /= pseudo.row(k).sum();
      confusion_sum[l] += pseudo;
    }
  }

  rebuild_counts();
  const double epochs = static_cast<double>(config.sampling_epochs);
  result.labels.resize(n_components);
  for (std::size_t c = 0; c < n_components; ++c) {
    double total = 0.0;
    for (std::size_t k = 0; k < kNumCategories; ++k) total += label_sum[c][k];
    for (std::size_t k = 0; k < kNumCategories; ++k) result.labels[c].p[k] = label_sum[c][k] / total;
  }
  for (std::size_t l = 0; l < labeler_ids.size(); ++l) {
    ConfusionMatrix avg = confusion_sum[l] / epochs;
    for (Eigen::Index k = 0; k < avg.rows(); ++k) avg.row(k) /= avg.row(k).sum();
    result.labeler_confusions.emplace(labeler_ids[l], avg);
    result.final_counts.emplace(labeler_ids[l], m[l]);
  }
  return result;
}

}  // namespace iclabel::crowd
