#include "second_opinion/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <unordered_map>

#include "csv.hpp"
#include "second_opinion/errors.hpp"
#include "second_opinion/numeric.hpp"

namespace second_opinion {

PanelDataset::PanelDataset(std::vector<AssessmentRecord> records, std::size_t n_features,
                           std::vector<ExpertId> experts, std::vector<std::string> feature_names)
    : records_(std::move(records)),
      n_features_(n_features),
      experts_(std::move(experts)),
      feature_names_(std::move(feature_names)) {
  if (feature_names_.empty()) {
    for (std::size_t j = 0; j < n_features_; ++j) feature_names_.push_back("f" + std::to_string(j));
  }
  if (feature_names_.size() != n_features_) throw DataError("feature name count does not match n_features");
  if (experts_.size() < 2) {
    throw DataError("panel needs at least 2 experts, got " + std::to_string(experts_.size()));
  }
  for (std::size_t i = 0; i < experts_.size(); ++i) {
    if (experts_[i].index != static_cast<int>(i)) {
      throw DataError("expert indices must be contiguous from 0");
    }
  }
  if (records_.size() < experts_.size()) {
    throw DataError("panel has fewer records (" + std::to_string(records_.size()) +
                    ") than experts (" + std::to_string(experts_.size()) + ")");
  }

  std::unordered_map<CaseId, std::size_t> index;
  for (std::size_t r = 0; r < records_.size(); ++r) {
    const auto& rec = records_[r];
    if (rec.case_id.empty()) throw DataError("record " + std::to_string(r) + " has empty case id");
    if (rec.features.size() != n_features_) {
      throw DataError("record " + std::to_string(r) + " has " + std::to_string(rec.features.size()) +
                      " features, expected " + std::to_string(n_features_));
    }
    if (rec.expert < 0 || rec.expert >= static_cast<int>(experts_.size())) {
      throw DataError("record " + std::to_string(r) + " names unknown expert " + std::to_string(rec.expert));
    }
    if (rec.label != 0 && rec.label != 1) {
      throw DataError("record " + std::to_string(r) + " has non-binary label");
    }
    for (double v : rec.features) {
      if (!std::isfinite(v)) throw DataError("record " + std::to_string(r) + " has a non-finite feature");
    }
    auto [it, inserted] = index.try_emplace(rec.case_id, cases_.size());
    if (inserted) {
      cases_.push_back(rec.case_id);
      case_records_.emplace_back();
    }
    for (std::size_t other : case_records_[it->second]) {
      if (records_[other].expert == rec.expert) {
        throw DataError("duplicate assessment for case '" + rec.case_id + "' by expert " +
                        experts_[rec.expert].display_name);
      }
    }
    case_records_[it->second].push_back(r);
  }
  case_lookup_.assign(index.begin(), index.end());
  std::sort(case_lookup_.begin(), case_lookup_.end());
}

std::size_t PanelDataset::case_index(const CaseId& id) const {
  auto it = std::lower_bound(case_lookup_.begin(), case_lookup_.end(), id,
                             [](const auto& entry, const CaseId& key) { return entry.first < key; });
  if (it == case_lookup_.end() || it->first != id) throw DataError("unknown case id '" + id + "'");
  return it->second;
}

const std::vector<double>& PanelDataset::case_features(std::size_t case_idx) const {
  return records_[case_records_.at(case_idx).front()].features;
}

std::optional<int> PanelDataset::label_of(std::size_t case_idx, int expert) const {
  for (std::size_t r : case_records_.at(case_idx)) {
    if (records_[r].expert == expert) return records_[r].label;
  }
  return std::nullopt;
}

std::vector<std::string> read_csv_header(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  auto header = csv::next_line(in, true);
  if (!header) throw DataError(path.string() + " is empty");
  return csv::split_line(*header);
}

PanelDataset load_wide_csv(const std::filesystem::path& path, const WideSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  auto header_line = csv::next_line(in, true);
  if (!header_line) throw DataError(path.string() + " is empty");
  const auto header = csv::split_line(*header_line);

  auto column = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("schema error: missing column '" + name + "' in " + path.string());
    return static_cast<std::size_t>(it - header.begin());
  };
  std::vector<std::size_t> feature_cols;
  for (const auto& name : schema.feature_columns) feature_cols.push_back(column(name));
  std::vector<std::size_t> expert_cols;
  std::vector<ExpertId> experts;
  for (const auto& name : schema.expert_columns) {
    expert_cols.push_back(column(name));
    experts.push_back({static_cast<int>(experts.size()), name});
  }
  std::optional<std::size_t> id_col;
  if (schema.case_id_column) id_col = column(*schema.case_id_column);

  std::vector<AssessmentRecord> records;
  std::size_t row = 0;
  while (auto line = csv::next_line(in, false)) {
    ++row;
    const auto fields = csv::split_line(*line);
    if (fields.size() != header.size()) {
      throw DataError("parse error: row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                      " fields, header has " + std::to_string(header.size()));
    }
    std::vector<double> features;
    features.reserve(feature_cols.size());
    for (std::size_t c : feature_cols) {
      auto v = csv::parse_real(fields[c]);
      if (!v || !std::isfinite(*v)) {
        throw DataError("parse error: row " + std::to_string(row) + ", column '" + header[c] +
                        "': expected a finite number, got '" + fields[c] + "'");
      }
      features.push_back(*v);
    }
    CaseId id = id_col ? fields[*id_col] : std::to_string(row - 1);
    for (std::size_t e = 0; e < expert_cols.size(); ++e) {
      const auto& cell = fields[expert_cols[e]];
      if (cell.find_first_not_of(" \t") == std::string::npos) continue;  // missing assessment
      auto v = csv::parse_real(cell);
      if (!v || (*v != 0.0 && *v != 1.0)) {
        throw DataError("parse error: row " + std::to_string(row) + ", column '" + header[expert_cols[e]] +
                        "': expected 0 or 1, got '" + cell + "'");
      }
      records.push_back({id, static_cast<int>(e), features, static_cast<int>(*v)});
    }
  }
  return PanelDataset(std::move(records), feature_cols.size(), std::move(experts), schema.feature_columns);
}

std::set<CaseId> disagreement_cases(const PanelDataset& ds) {
  std::set<CaseId> out;
  const auto& recs = ds.records();
  for (std::size_t c = 0; c < ds.cases().size(); ++c) {
    const auto& idx = ds.case_records()[c];
    if (idx.size() < 2) {
      throw DataError("case '" + ds.cases()[c] + "' has a single assessment; agreement is undefined");
    }
    const int first = recs[idx.front()].label;
    if (std::any_of(idx.begin(), idx.end(), [&](std::size_t r) { return recs[r].label != first; })) {
      out.insert(ds.cases()[c]);
    }
  }
  return out;
}

SyntheticPanel generate_synthetic(const SyntheticSpec& spec) {
  if (spec.k < 2) throw DataError("synthetic spec: k must be >= 2");
  if (spec.n_cases < 1) throw DataError("synthetic spec: n_cases must be >= 1");
  if (spec.n_features < 1) throw DataError("synthetic spec: n_features must be >= 1");
  if (!(spec.label_noise >= 0.0 && spec.label_noise < 0.5)) {
    throw DataError("synthetic spec: label_noise must be in [0, 0.5)");
  }
  const auto n = static_cast<std::size_t>(spec.n_features);
  if (spec.base_coeffs.size() != n) throw DataError("synthetic spec: base_coeffs length must equal n_features");
  if (spec.expert_offsets.size() != static_cast<std::size_t>(spec.k)) {
    throw DataError("synthetic spec: need one offset vector per expert");
  }

  SyntheticPanel out;
  for (const auto& off : spec.expert_offsets) {
    if (off.size() != n) throw DataError("synthetic spec: offset length must equal n_features");
    std::vector<double> coeffs(n);
    for (std::size_t j = 0; j < n; ++j) coeffs[j] = spec.base_coeffs[j] + off[j];
    out.expert_coeffs.push_back(std::move(coeffs));
  }

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<AssessmentRecord> records;
  std::vector<ExpertId> experts;
  for (int e = 0; e < spec.k; ++e) experts.push_back({e, "e" + std::to_string(e)});
  for (int c = 0; c < spec.n_cases; ++c) {
    std::vector<double> x(n);
    for (auto& v : x) v = normal(rng);
    const double u = unif(rng);  // shared by the panel: identical experts agree
    for (int e = 0; e < spec.k; ++e) {
      double score = 0.0;
      for (std::size_t j = 0; j < n; ++j) score += out.expert_coeffs[e][j] * x[j];
      int label = u < sigmoid(score) ? 1 : 0;
      if (unif(rng) < spec.label_noise) label = 1 - label;
      records.push_back({"s" + std::to_string(c), e, x, label});
    }
  }
  out.dataset = PanelDataset(std::move(records), n, std::move(experts));
  return out;
}

void write_wide_csv(const PanelDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "case_id";
  for (const auto& name : ds.feature_names()) out << ',' << csv::quote_if_needed(name);
  for (const auto& e : ds.experts()) out << ',' << csv::quote_if_needed(e.display_name);
  out << '\n';
  for (std::size_t c = 0; c < ds.cases().size(); ++c) {
    out << csv::quote_if_needed(ds.cases()[c]);
    for (double v : ds.case_features(c)) out << ',' << csv::exact(v);
    for (const auto& e : ds.experts()) {
      out << ',';
      if (auto label = ds.label_of(c, e.index)) out << *label;
    }
    out << '\n';
  }
}

}  // namespace second_opinion
