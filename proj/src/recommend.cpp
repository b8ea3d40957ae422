#include "second_opinion/recommend.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <utility>

#include "csv.hpp"

namespace second_opinion {
namespace {

constexpr std::array<std::pair<Policy, std::string_view>, 6> kPolicyNames{{
    {Policy::IndepAlways, "indep_always"},
    {Policy::IndepThreshold, "indep_threshold"},
    {Policy::InfluenceAlways, "influence_always"},
    {Policy::InfluenceSigned, "influence_signed"},
    {Policy::RandomBaseline, "random"},
    {Policy::Oracle, "oracle"},
}};

enum class Direction { Min, Max };

template <typename Eligible>
Recommendation pick(const CaseId& case_id, Policy policy, std::span<const std::optional<double>> scores,
                    int model_pred, Direction dir, Eligible eligible) {
  if (scores.empty()) throw std::invalid_argument("policy needs at least one expert score");
  Recommendation rec{case_id, policy, std::nullopt, std::numeric_limits<double>::quiet_NaN(), model_pred};
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!scores[i] || !eligible(*scores[i])) continue;
    const double s = *scores[i];
    const bool better = !rec.chosen || (dir == Direction::Min ? s < rec.score : s > rec.score);
    if (better) {
      rec.chosen = static_cast<int>(i);
      rec.score = s;
    }
  }
  return rec;
}

Direction opposing(int model_pred) { return model_pred == 1 ? Direction::Min : Direction::Max; }

// splitmix64 finalizer
std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::string_view policy_name(Policy p) {
  for (const auto& [policy, name] : kPolicyNames) {
    if (policy == p) return name;
  }
  return "unknown";
}

Policy parse_policy(std::string_view name) {
  for (const auto& [policy, n] : kPolicyNames) {
    if (n == name) return policy;
  }
  throw std::invalid_argument("unknown policy '" + std::string(name) + "'");
}

bool may_abstain(Policy p) { return p == Policy::IndepThreshold || p == Policy::InfluenceSigned; }

Recommendation indep_always(const CaseId& case_id, std::span<const std::optional<double>> probas, int model_pred) {
  return pick(case_id, Policy::IndepAlways, probas, model_pred, opposing(model_pred), [](double) { return true; });
}

Recommendation indep_threshold(const CaseId& case_id, std::span<const std::optional<double>> probas,
                               int model_pred, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("tau must be in (0, 1)");
  if (model_pred == 1) {
    return pick(case_id, Policy::IndepThreshold, probas, model_pred, Direction::Min,
                [tau](double f) { return f < tau; });
  }
  return pick(case_id, Policy::IndepThreshold, probas, model_pred, Direction::Max,
              [tau](double f) { return f > tau; });
}

Recommendation influence_always(const CaseId& case_id, std::span<const std::optional<double>> influence,
                                int model_pred) {
  return pick(case_id, Policy::InfluenceAlways, influence, model_pred, opposing(model_pred),
              [](double) { return true; });
}

Recommendation influence_signed(const CaseId& case_id, std::span<const std::optional<double>> influence,
                                int model_pred) {
  if (model_pred == 1) {
    return pick(case_id, Policy::InfluenceSigned, influence, model_pred, Direction::Min,
                [](double v) { return v < 0.0; });
  }
  return pick(case_id, Policy::InfluenceSigned, influence, model_pred, Direction::Max,
              [](double v) { return v > 0.0; });
}

Recommendation random_baseline(const CaseId& case_id, std::span<const int> eligible, std::uint64_t seed,
                               int model_pred) {
  if (eligible.empty()) throw std::invalid_argument("random baseline needs at least one expert");
  const std::uint64_t h = mix(mix(seed) ^ fnv1a(case_id));
  // Multiply-shift maps the 64-bit draw onto [0, n).
  const auto slot = static_cast<std::size_t>((static_cast<unsigned __int128>(h) * eligible.size()) >> 64);
  Recommendation rec{case_id, Policy::RandomBaseline, eligible[slot], std::numeric_limits<double>::quiet_NaN(),
                     model_pred};
  return rec;
}

Recommendation oracle_choice(const CaseId& case_id, std::span<const std::optional<int>> labels, int model_pred) {
  Recommendation rec{case_id, Policy::Oracle, std::nullopt, std::numeric_limits<double>::quiet_NaN(), model_pred};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] && *labels[i] != model_pred) {
      rec.chosen = static_cast<int>(i);
      rec.score = *labels[i];
      break;
    }
  }
  return rec;
}

void write_recommendations_csv(std::ostream& out, const std::vector<Recommendation>& recs,
                               const std::vector<ExpertId>& experts) {
  out << "case_id,policy,model_pred,chosen_expert,score\n";
  for (const auto& r : recs) {
    out << csv::quote_if_needed(r.case_id) << ',' << policy_name(r.policy) << ',' << r.model_pred << ',';
    if (r.chosen) out << csv::quote_if_needed(experts.at(*r.chosen).display_name);
    out << ',';
    if (r.chosen && std::isfinite(r.score)) out << csv::fixed6(r.score);
    out << '\n';
  }
}

}  // namespace second_opinion
