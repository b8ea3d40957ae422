#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "second_opinion/data.hpp"
#include "second_opinion/glm.hpp"
#include "second_opinion/influence.hpp"
#include "second_opinion/preprocess.hpp"
#include "second_opinion/recommend.hpp"

namespace second_opinion {

enum class PcaOn { Cases, Assessments };

struct ModelSettings {
  double lambda = 1e-4;
  double tau = 0.5;
  /// Threshold for the per-expert threshold policy; defaults to tau.
  std::optional<double> expert_tau;
  bool calibrate = false;
  double tol = 1e-8;
  int max_iter = 100;
};

struct ExperimentConfig {
  Retain retain = Retain::fraction(0.95);
  PcaOn pca_on = PcaOn::Cases;
  ModelSettings model;
  int n_folds = 3;
  std::uint64_t seed = 42;
  bool grouped_folds = true;
  std::vector<Policy> policies{Policy::IndepAlways,     Policy::IndepThreshold, Policy::InfluenceAlways,
                               Policy::InfluenceSigned, Policy::RandomBaseline, Policy::Oracle};
  /// Folds evaluated concurrently; 0 means one thread per fold.
  int parallelism = 0;
};

/// Assignment of assessments to folds. With grouped folds every record of a
/// case shares its fold; otherwise records are dealt individually and a case
/// is evaluated in the fold of its first record.
struct FoldPlan {
  int n_folds = 3;
  std::uint64_t seed = 42;
  bool grouped = true;
  std::map<CaseId, int> assignment;  // evaluation fold of each case
  std::vector<int> record_fold;      // aligned with ds.records()
};

/// Seeded shuffle of case ids (or records when ungrouped), dealt round-robin.
/// Throws DataError when there are fewer units than folds.
FoldPlan make_folds(const PanelDataset& ds, int n_folds, std::uint64_t seed, bool grouped = true);

/// Models fit on one training split.
struct FoldModels {
  LogisticModel pooled;
  InfluenceEngine engine;
  std::vector<std::optional<LogisticModel>> experts;  // nullopt: excluded in this split
  std::vector<std::string> warnings;
};

/// Fits the preprocessing pipeline, the pooled model (with its influence
/// engine) and one model per expert on the given records only.
FoldModels train_models(const PanelDataset& ds, std::span<const std::size_t> train_records,
                        const ExperimentConfig& config);

struct CaseResult {
  CaseId case_id;
  int fold = 0;
  double model_proba = 0.0;
  int model_pred = 0;
  ExpertScores expert_probas;
  ExpertScores influence;
  std::vector<Recommendation> recommendations;  // one per configured policy
  bool disagreement = false;
};

struct ExpertTally {
  int times_chosen = 0;
  int times_correct = 0;
};

/// Scores over disagreement cases only. Abstentions count as incorrect.
struct EvaluationSummary {
  Policy policy = Policy::IndepAlways;
  std::vector<ExpertTally> per_expert;
  int n_eval_cases = 0;
  int n_pred1 = 0;
  int n_pred0 = 0;
  int correct = 0;
  int correct_pred1 = 0;
  int correct_pred0 = 0;
  int abstentions = 0;
  int missing_labels = 0;  // chosen expert had no recorded label
  double accuracy_overall = 0.0;
  double accuracy_pred1 = 0.0;  // NaN when no case was predicted 1
  double accuracy_pred0 = 0.0;
  std::string config_fingerprint;
};

/// Expected performance of uniform random selection among all k experts.
struct BaselineSummary {
  std::vector<double> opposing_rate;  // per expert, over evaluated cases with a label
  double chosen_freq = 0.0;           // 1/k
  double accuracy_overall = 0.0;
  double accuracy_pred1 = 0.0;
  double accuracy_pred0 = 0.0;
  int n_eval_cases = 0;
};

struct FoldInfo {
  int fold = 0;
  int n_train_records = 0;
  int n_test_cases = 0;
  Eigen::Index n_components = 0;
  double retained_fraction = 0.0;
  FitReport pooled_report;
  std::vector<std::optional<FitReport>> expert_reports;
};

struct ExperimentResult {
  std::vector<CaseResult> cases;  // dataset case order
  std::vector<EvaluationSummary> summaries;  // config.policies order
  BaselineSummary baseline;
  std::vector<FoldInfo> folds;
  std::vector<std::string> warnings;
};

/// Cross-validated recommendations for every case and their scores.
ExperimentResult run_experiment(const PanelDataset& ds, const ExperimentConfig& config,
                                const std::string& config_fingerprint = "");

/// Tallies one policy's recommendations over the disagreement cases.
EvaluationSummary summarize(const PanelDataset& ds, std::span<const CaseResult> cases, Policy policy,
                            const std::string& config_fingerprint = "");

/// Analytic random-selection scores for the given per-case predictions,
/// restricted to disagreement cases.
BaselineSummary score_baseline(const PanelDataset& ds, const std::map<CaseId, int>& predictions);

/// Writes table1.csv, figure1.csv, recommendations.csv and run_meta.json.
/// Everything is a function of (result, config), so reruns are byte-identical.
void emit_report(const PanelDataset& ds, const ExperimentResult& result, const nlohmann::json& resolved_config,
                 const std::filesystem::path& out_dir);

}  // namespace second_opinion
