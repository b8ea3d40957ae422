#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace second_opinion {

using CaseId = std::string;

struct ExpertId {
  int index = 0;
  std::string display_name;

  friend bool operator==(const ExpertId&, const ExpertId&) = default;
};

/// One expert's binary label on one case. Features are duplicated across the
/// records of a case; the long format is what the pooled model trains on.
struct AssessmentRecord {
  CaseId case_id;
  int expert = 0;
  std::vector<double> features;
  int label = 0;
};

/// Immutable long-format panel: one record per (case, expert) assessment.
class PanelDataset {
 public:
  PanelDataset() = default;
  /// Validates the invariants (feature widths, expert indices, at most one
  /// record per (case, expert), k >= 2) and throws DataError otherwise.
  PanelDataset(std::vector<AssessmentRecord> records, std::size_t n_features,
               std::vector<ExpertId> experts, std::vector<std::string> feature_names = {});

  const std::vector<AssessmentRecord>& records() const { return records_; }
  const std::vector<ExpertId>& experts() const { return experts_; }
  std::size_t n_features() const { return n_features_; }
  std::size_t n_experts() const { return experts_.size(); }
  /// Column names of the features; f0, f1, ... when none were given.
  const std::vector<std::string>& feature_names() const { return feature_names_; }

  /// Case ids in order of first appearance.
  const std::vector<CaseId>& cases() const { return cases_; }
  /// Record indices of each case, aligned with cases().
  const std::vector<std::vector<std::size_t>>& case_records() const { return case_records_; }
  std::size_t case_index(const CaseId& id) const;
  const std::vector<double>& case_features(std::size_t case_idx) const;
  /// The label expert `expert` gave case `case_idx`, if recorded.
  std::optional<int> label_of(std::size_t case_idx, int expert) const;

 private:
  std::vector<AssessmentRecord> records_;
  std::size_t n_features_ = 0;
  std::vector<ExpertId> experts_;
  std::vector<std::string> feature_names_;
  std::vector<CaseId> cases_;
  std::vector<std::vector<std::size_t>> case_records_;
  std::vector<std::pair<CaseId, std::size_t>> case_lookup_;  // sorted by id
};

struct WideSchema {
  std::vector<std::string> feature_columns;
  std::vector<std::string> expert_columns;
  std::optional<std::string> case_id_column;
};

/// Reads a header-first, comma-separated file with one row per case and one
/// column per expert. Empty expert cells are skipped (no record emitted).
PanelDataset load_wide_csv(const std::filesystem::path& path, const WideSchema& schema);

/// Header names of a CSV file, for resolving "all remaining columns" schemas.
std::vector<std::string> read_csv_header(const std::filesystem::path& path);

/// Cases whose recorded labels are not unanimous. Throws DataError when a
/// case has fewer than two records, since agreement is undefined there.
std::set<CaseId> disagreement_cases(const PanelDataset& ds);

struct SyntheticSpec {
  int k = 2;
  int n_cases = 100;
  int n_features = 2;
  std::vector<double> base_coeffs;
  std::vector<std::vector<double>> expert_offsets;
  double label_noise = 0.0;
  std::uint64_t seed = 0;
};

struct SyntheticPanel {
  PanelDataset dataset;
  /// base_coeffs + expert_offsets[i] for each expert.
  std::vector<std::vector<double>> expert_coeffs;
};

/// Standard-normal features; expert i says 1 with probability
/// sigmoid((base + offset_i) . x), then the label flips with probability
/// label_noise. One uniform draw per case is shared by the whole panel, so
/// experts with equal coefficients agree unless noise flips them; two experts
/// disagree before noise with probability |q_i - q_j|. Deterministic per seed.
SyntheticPanel generate_synthetic(const SyntheticSpec& spec);

/// Writes a panel back to wide format (case_id, f0.., expert names) so that
/// `synth` output can be reloaded with load_wide_csv. Reals use 17 significant
/// digits, so the round trip is exact.
void write_wide_csv(const PanelDataset& ds, const std::filesystem::path& path);

}  // namespace second_opinion
