#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "second_opinion/data.hpp"

namespace second_opinion {

enum class Policy {
  IndepAlways,      // argmin/argmax of per-expert probabilities
  IndepThreshold,   // same, restricted to the opposite side of tau; may abstain
  InfluenceAlways,  // argmin/argmax of group influence
  InfluenceSigned,  // same, restricted to influence of the opposing sign; may abstain
  RandomBaseline,
  Oracle,           // label-peeking upper bound, evaluation only
};

std::string_view policy_name(Policy p);
/// Throws std::invalid_argument for an unknown name.
Policy parse_policy(std::string_view name);
/// The policies that may legitimately return no expert.
bool may_abstain(Policy p);

/// Scores are indexed by expert; nullopt marks an expert with no model in
/// this fold, which is never eligible.
using ExpertScores = std::vector<std::optional<double>>;

struct Recommendation {
  CaseId case_id;
  Policy policy = Policy::IndepAlways;
  std::optional<int> chosen;
  double score = 0.0;  // the chosen expert's deciding value; NaN when none
  int model_pred = 0;
};

// Ties go to the lowest expert index. Every function throws
// std::invalid_argument when `scores` is empty.

Recommendation indep_always(const CaseId& case_id, std::span<const std::optional<double>> probas, int model_pred);
Recommendation indep_threshold(const CaseId& case_id, std::span<const std::optional<double>> probas,
                               int model_pred, double tau);
Recommendation influence_always(const CaseId& case_id, std::span<const std::optional<double>> influence,
                                int model_pred);
Recommendation influence_signed(const CaseId& case_id, std::span<const std::optional<double>> influence,
                                int model_pred);

/// Uniform choice among `eligible`, a pure function of (seed, case id).
Recommendation random_baseline(const CaseId& case_id, std::span<const int> eligible, std::uint64_t seed,
                               int model_pred);

/// Picks the lowest-index expert whose recorded label differs from
/// model_pred. Used only to check the evaluation harness.
Recommendation oracle_choice(const CaseId& case_id, std::span<const std::optional<int>> labels, int model_pred);

/// case_id,policy,model_pred,chosen_expert,score
void write_recommendations_csv(std::ostream& out, const std::vector<Recommendation>& recs,
                               const std::vector<ExpertId>& experts);

}  // namespace second_opinion
