#include "second_opinion/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "csv.hpp"
#include "second_opinion/errors.hpp"
#include "second_opinion/hash.hpp"

namespace second_opinion {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double ratio(int num, int den) { return den > 0 ? static_cast<double>(num) / den : kNaN; }

std::string cell(double v) { return std::isfinite(v) ? csv::fixed6(v) : std::string(); }

Eigen::VectorXd to_vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Unique cases among `records`, in order of first appearance.
std::vector<std::size_t> cases_of(const PanelDataset& ds, std::span<const std::size_t> records) {
  std::vector<std::size_t> out;
  std::set<std::size_t> seen;
  for (std::size_t r : records) {
    const std::size_t c = ds.case_index(ds.records()[r].case_id);
    if (seen.insert(c).second) out.push_back(c);
  }
  return out;
}

TrainingRows design_rows(const PanelDataset& ds, const Pipeline& pipeline, std::span<const std::size_t> records) {
  Eigen::MatrixXd raw(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(ds.n_features()));
  TrainingRows rows;
  rows.y.resize(raw.rows());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = ds.records()[records[i]];
    raw.row(static_cast<Eigen::Index>(i)) = to_vec(rec.features).transpose();
    rows.y(static_cast<Eigen::Index>(i)) = rec.label;
  }
  rows.X = pipeline.transform_rows(raw);
  return rows;
}

LogisticModel fit_model(const TrainingRows& rows, const Pipeline& pipeline, const ModelSettings& s, double tau) {
  FitOptions opts;
  opts.lambda = s.lambda;
  opts.tol = s.tol;
  opts.max_iter = s.max_iter;
  const FitResult fit = fit_weighted(rows, Eigen::VectorXd::Ones(rows.size()), opts);
  LogisticModel m;
  m.pipeline = pipeline;
  m.theta = fit.theta;
  m.lambda = s.lambda;
  m.tau = tau;
  m.report = fit.report;
  return m;
}

void calibrate(LogisticModel& model, const PanelDataset& ds, std::span<const std::size_t> records,
               std::vector<std::string>& warnings, const std::string& what) {
  Eigen::MatrixXd raw(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(ds.n_features()));
  Eigen::VectorXd y(raw.rows());
  for (std::size_t i = 0; i < records.size(); ++i) {
    raw.row(static_cast<Eigen::Index>(i)) = to_vec(ds.records()[records[i]].features).transpose();
    y(static_cast<Eigen::Index>(i)) = ds.records()[records[i]].label;
  }
  const CalibrationResult cal = calibrate_platt(model, raw, y);
  if (cal.applied) {
    model.calibration = cal.map;
  } else {
    warnings.push_back(what + ": " + cal.warning);
  }
}

bool is_disagreement(const PanelDataset& ds, std::size_t c) {
  const auto& idx = ds.case_records()[c];
  if (idx.size() < 2) return false;
  const int first = ds.records()[idx.front()].label;
  return std::any_of(idx.begin(), idx.end(), [&](std::size_t r) { return ds.records()[r].label != first; });
}

std::vector<std::optional<int>> labels_of(const PanelDataset& ds, std::size_t c) {
  std::vector<std::optional<int>> out(ds.n_experts());
  for (std::size_t e = 0; e < out.size(); ++e) out[e] = ds.label_of(c, static_cast<int>(e));
  return out;
}

}  // namespace

FoldPlan make_folds(const PanelDataset& ds, int n_folds, std::uint64_t seed, bool grouped) {
  if (n_folds < 2) throw ConfigError("n_folds must be >= 2");
  FoldPlan plan;
  plan.n_folds = n_folds;
  plan.seed = seed;
  plan.grouped = grouped;
  plan.record_fold.assign(ds.records().size(), 0);
  std::mt19937_64 rng(seed);

  if (grouped) {
    const auto n_cases = ds.cases().size();
    if (n_cases < static_cast<std::size_t>(n_folds)) {
      throw DataError("cannot split " + std::to_string(n_cases) + " cases into " + std::to_string(n_folds) +
                      " folds");
    }
    std::vector<std::size_t> order(n_cases);
    for (std::size_t i = 0; i < n_cases; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      const int fold = static_cast<int>(pos % static_cast<std::size_t>(n_folds));
      plan.assignment[ds.cases()[order[pos]]] = fold;
      for (std::size_t r : ds.case_records()[order[pos]]) plan.record_fold[r] = fold;
    }
  } else {
    const auto n_records = ds.records().size();
    if (n_records < static_cast<std::size_t>(n_folds)) {
      throw DataError("cannot split " + std::to_string(n_records) + " records into " + std::to_string(n_folds) +
                      " folds");
    }
    std::vector<std::size_t> order(n_records);
    for (std::size_t i = 0; i < n_records; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      plan.record_fold[order[pos]] = static_cast<int>(pos % static_cast<std::size_t>(n_folds));
    }
    for (std::size_t c = 0; c < ds.cases().size(); ++c) {
      plan.assignment[ds.cases()[c]] = plan.record_fold[ds.case_records()[c].front()];
    }
  }
  return plan;
}

FoldModels train_models(const PanelDataset& ds, std::span<const std::size_t> train_records,
                        const ExperimentConfig& config) {
  FoldModels out;
  const auto k = ds.n_experts();

  std::vector<std::size_t> fit_records(train_records.begin(), train_records.end());
  std::vector<std::size_t> calib_records;
  if (config.model.calibrate) {
    // Hold out a fifth of the training cases for Platt scaling.
    auto train_cases = cases_of(ds, train_records);
    std::mt19937_64 rng(config.seed ^ 0x5ca1ab1eULL);
    std::shuffle(train_cases.begin(), train_cases.end(), rng);
    const std::size_t n_calib = std::max<std::size_t>(1, train_cases.size() / 5);
    const std::set<std::size_t> calib_cases(train_cases.begin(), train_cases.begin() + n_calib);
    fit_records.clear();
    for (std::size_t r : train_records) {
      const bool held = calib_cases.count(ds.case_index(ds.records()[r].case_id)) > 0;
      (held ? calib_records : fit_records).push_back(r);
    }
  }

  Eigen::MatrixXd basis;
  if (config.pca_on == PcaOn::Cases) {
    const auto cases = cases_of(ds, fit_records);
    basis.resize(static_cast<Eigen::Index>(cases.size()), static_cast<Eigen::Index>(ds.n_features()));
    for (std::size_t i = 0; i < cases.size(); ++i) {
      basis.row(static_cast<Eigen::Index>(i)) = to_vec(ds.case_features(cases[i])).transpose();
    }
  } else {
    basis.resize(static_cast<Eigen::Index>(fit_records.size()), static_cast<Eigen::Index>(ds.n_features()));
    for (std::size_t i = 0; i < fit_records.size(); ++i) {
      basis.row(static_cast<Eigen::Index>(i)) = to_vec(ds.records()[fit_records[i]].features).transpose();
    }
  }
  const Pipeline pipeline = fit_pipeline(basis, config.retain);

  const TrainingRows rows = design_rows(ds, pipeline, fit_records);
  std::vector<int> labeler(fit_records.size());
  for (std::size_t i = 0; i < fit_records.size(); ++i) labeler[i] = ds.records()[fit_records[i]].expert;

  out.pooled = fit_model(rows, pipeline, config.model, config.model.tau);
  out.engine = InfluenceEngine::build(out.pooled, rows, labeler, k);
  if (config.model.calibrate) calibrate(out.pooled, ds, calib_records, out.warnings, "pooled model");

  const double expert_tau = config.model.expert_tau.value_or(config.model.tau);
  out.experts.resize(k);
  for (std::size_t e = 0; e < k; ++e) {
    const auto& name = ds.experts()[e].display_name;
    std::vector<std::size_t> mine;
    for (std::size_t i = 0; i < fit_records.size(); ++i) {
      if (labeler[i] == static_cast<int>(e)) mine.push_back(fit_records[i]);
    }
    if (mine.empty()) {
      out.warnings.push_back("expert " + name + " has no training assessments in this split; excluded");
      continue;
    }
    const TrainingRows own = design_rows(ds, pipeline, mine);
    const double positives = own.y.sum();
    if (positives == 0.0 || positives == static_cast<double>(own.size())) {
      out.warnings.push_back("expert " + name +
                             " gave a single label on every training case in this split; per-expert model "
                             "excluded");
      continue;
    }
    LogisticModel model = fit_model(own, pipeline, config.model, expert_tau);
    model.expert = ds.experts()[e];
    if (config.model.calibrate) {
      std::vector<std::size_t> own_calib;
      for (std::size_t r : calib_records) {
        if (ds.records()[r].expert == static_cast<int>(e)) own_calib.push_back(r);
      }
      calibrate(model, ds, own_calib, out.warnings, "expert " + name);
    }
    out.experts[e] = std::move(model);
  }
  return out;
}

EvaluationSummary summarize(const PanelDataset& ds, std::span<const CaseResult> cases, Policy policy,
                            const std::string& config_fingerprint) {
  EvaluationSummary s;
  s.policy = policy;
  s.per_expert.resize(ds.n_experts());
  s.config_fingerprint = config_fingerprint;
  for (const auto& cr : cases) {
    if (!cr.disagreement) continue;
    auto rec = std::find_if(cr.recommendations.begin(), cr.recommendations.end(),
                            [&](const Recommendation& r) { return r.policy == policy; });
    if (rec == cr.recommendations.end()) continue;
    ++s.n_eval_cases;
    (cr.model_pred == 1 ? s.n_pred1 : s.n_pred0)++;
    if (!rec->chosen) {
      ++s.abstentions;
      continue;
    }
    auto& tally = s.per_expert[*rec->chosen];
    ++tally.times_chosen;
    const auto label = ds.label_of(ds.case_index(cr.case_id), *rec->chosen);
    if (!label) {
      ++s.missing_labels;
      continue;
    }
    if (*label != cr.model_pred) {
      ++tally.times_correct;
      ++s.correct;
      (cr.model_pred == 1 ? s.correct_pred1 : s.correct_pred0)++;
    }
  }
  s.accuracy_overall = ratio(s.correct, s.n_eval_cases);
  s.accuracy_pred1 = ratio(s.correct_pred1, s.n_pred1);
  s.accuracy_pred0 = ratio(s.correct_pred0, s.n_pred0);
  return s;
}

BaselineSummary score_baseline(const PanelDataset& ds, const std::map<CaseId, int>& predictions) {
  BaselineSummary b;
  const auto k = ds.n_experts();
  b.chosen_freq = 1.0 / static_cast<double>(k);
  std::vector<int> opposed(k, 0), labeled(k, 0);
  double sum = 0.0, sum1 = 0.0, sum0 = 0.0;
  int n1 = 0, n0 = 0;
  for (std::size_t c = 0; c < ds.cases().size(); ++c) {
    if (!is_disagreement(ds, c)) continue;
    auto it = predictions.find(ds.cases()[c]);
    if (it == predictions.end()) {
      throw DataError("baseline: no prediction for disagreement case '" + ds.cases()[c] + "'");
    }
    const int pred = it->second;
    int differing = 0;
    for (std::size_t e = 0; e < k; ++e) {
      const auto label = ds.label_of(c, static_cast<int>(e));
      if (!label) continue;
      ++labeled[e];
      if (*label != pred) {
        ++opposed[e];
        ++differing;
      }
    }
    const double frac = differing / static_cast<double>(k);
    sum += frac;
    if (pred == 1) {
      sum1 += frac;
      ++n1;
    } else {
      sum0 += frac;
      ++n0;
    }
    ++b.n_eval_cases;
  }
  b.opposing_rate.resize(k);
  for (std::size_t e = 0; e < k; ++e) b.opposing_rate[e] = ratio(opposed[e], labeled[e]);
  b.accuracy_overall = b.n_eval_cases > 0 ? sum / b.n_eval_cases : kNaN;
  b.accuracy_pred1 = n1 > 0 ? sum1 / n1 : kNaN;
  b.accuracy_pred0 = n0 > 0 ? sum0 / n0 : kNaN;
  return b;
}

ExperimentResult run_experiment(const PanelDataset& ds, const ExperimentConfig& config,
                                const std::string& config_fingerprint) {
  if (config.policies.empty()) throw ConfigError("at least one policy is required");
  const FoldPlan plan = make_folds(ds, config.n_folds, config.seed, config.grouped_folds);
  const auto k = ds.n_experts();
  const double expert_tau = config.model.expert_tau.value_or(config.model.tau);

  struct FoldOutput {
    std::vector<CaseResult> cases;
    FoldInfo info;
    std::vector<std::string> warnings;
    std::exception_ptr error;
  };
  std::vector<FoldOutput> outputs(static_cast<std::size_t>(config.n_folds));

  auto run_fold = [&](int f) {
    auto& out = outputs[static_cast<std::size_t>(f)];
    try {
      std::vector<std::size_t> train;
      for (std::size_t r = 0; r < ds.records().size(); ++r) {
        if (plan.record_fold[r] != f) train.push_back(r);
      }
      FoldModels models = train_models(ds, train, config);
      for (auto& w : models.warnings) out.warnings.push_back("fold " + std::to_string(f) + ": " + w);

      std::vector<int> eligible;
      for (std::size_t e = 0; e < k; ++e) {
        if (models.engine.group_gradients()[e]) eligible.push_back(static_cast<int>(e));
      }

      for (std::size_t c = 0; c < ds.cases().size(); ++c) {
        if (plan.assignment.at(ds.cases()[c]) != f) continue;
        CaseResult cr;
        cr.case_id = ds.cases()[c];
        cr.fold = f;
        cr.disagreement = is_disagreement(ds, c);
        const Eigen::VectorXd design = models.pooled.pipeline.transform(to_vec(ds.case_features(c)));
        cr.model_proba = models.pooled.proba_from_design(design);
        cr.model_pred = cr.model_proba >= models.pooled.tau ? 1 : 0;
        cr.expert_probas.resize(k);
        for (std::size_t e = 0; e < k; ++e) {
          if (models.experts[e]) cr.expert_probas[e] = models.experts[e]->proba_from_design(design);
        }
        cr.influence = models.engine.influence(design);

        for (Policy p : config.policies) {
          switch (p) {
            case Policy::IndepAlways:
              cr.recommendations.push_back(indep_always(cr.case_id, cr.expert_probas, cr.model_pred));
              break;
            case Policy::IndepThreshold:
              cr.recommendations.push_back(indep_threshold(cr.case_id, cr.expert_probas, cr.model_pred, expert_tau));
              break;
            case Policy::InfluenceAlways:
              cr.recommendations.push_back(influence_always(cr.case_id, cr.influence, cr.model_pred));
              break;
            case Policy::InfluenceSigned:
              cr.recommendations.push_back(influence_signed(cr.case_id, cr.influence, cr.model_pred));
              break;
            case Policy::RandomBaseline:
              cr.recommendations.push_back(random_baseline(cr.case_id, eligible, config.seed, cr.model_pred));
              break;
            case Policy::Oracle:
              cr.recommendations.push_back(oracle_choice(cr.case_id, labels_of(ds, c), cr.model_pred));
              break;
          }
        }
        out.cases.push_back(std::move(cr));
      }

      out.info.fold = f;
      out.info.n_train_records = static_cast<int>(train.size());
      out.info.n_test_cases = static_cast<int>(out.cases.size());
      out.info.n_components = models.pooled.pipeline.output_dim();
      out.info.retained_fraction = models.pooled.pipeline.pca.retained_fraction;
      out.info.pooled_report = models.pooled.report;
      for (const auto& m : models.experts) {
        out.info.expert_reports.push_back(m ? std::optional<FitReport>(m->report) : std::nullopt);
      }
    } catch (...) {
      out.error = std::current_exception();
    }
  };

  const int threads = std::clamp(config.parallelism > 0 ? config.parallelism : config.n_folds, 1, config.n_folds);
  if (threads == 1) {
    for (int f = 0; f < config.n_folds; ++f) run_fold(f);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (int f = next++; f < config.n_folds; f = next++) run_fold(f);
      });
    }
    for (auto& th : pool) th.join();
  }

  ExperimentResult result;
  for (auto& out : outputs) {
    if (out.error) std::rethrow_exception(out.error);
  }
  std::vector<const CaseResult*> by_case(ds.cases().size(), nullptr);
  for (auto& out : outputs) {
    for (auto& cr : out.cases) by_case[ds.case_index(cr.case_id)] = &cr;
    result.folds.push_back(out.info);
    result.warnings.insert(result.warnings.end(), out.warnings.begin(), out.warnings.end());
  }
  for (const auto* cr : by_case) result.cases.push_back(*cr);

  for (Policy p : config.policies) result.summaries.push_back(summarize(ds, result.cases, p, config_fingerprint));
  std::map<CaseId, int> preds;
  for (const auto& cr : result.cases) preds[cr.case_id] = cr.model_pred;
  result.baseline = score_baseline(ds, preds);
  return result;
}

void emit_report(const PanelDataset& ds, const ExperimentResult& result, const nlohmann::json& resolved_config,
                 const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::map<std::string, std::string> files;

  {
    std::ostringstream t;
    t << "policy,overall,pred1,pred0,n_eval,n_pred1,n_pred0,abstention_rate\n";
    for (const auto& s : result.summaries) {
      t << policy_name(s.policy) << ',' << cell(s.accuracy_overall) << ',' << cell(s.accuracy_pred1) << ','
        << cell(s.accuracy_pred0) << ',' << s.n_eval_cases << ',' << s.n_pred1 << ',' << s.n_pred0 << ','
        << cell(ratio(s.abstentions, s.n_eval_cases)) << '\n';
    }
    const auto& b = result.baseline;
    int n1 = 0, n0 = 0;
    for (const auto& cr : result.cases) {
      if (cr.disagreement) (cr.model_pred == 1 ? n1 : n0)++;
    }
    t << "random_analytic," << cell(b.accuracy_overall) << ',' << cell(b.accuracy_pred1) << ','
      << cell(b.accuracy_pred0) << ',' << b.n_eval_cases << ',' << n1 << ',' << n0 << ','
      << csv::fixed6(0.0) << '\n';
    files["table1.csv"] = t.str();
  }
  {
    std::ostringstream f;
    f << "policy,expert,chosen_freq,correct_freq,correct_rate\n";
    for (const auto& s : result.summaries) {
      for (std::size_t e = 0; e < s.per_expert.size(); ++e) {
        const auto& tally = s.per_expert[e];
        f << policy_name(s.policy) << ',' << csv::quote_if_needed(ds.experts()[e].display_name) << ','
          << cell(ratio(tally.times_chosen, s.n_eval_cases)) << ','
          << cell(ratio(tally.times_correct, s.n_eval_cases)) << ','
          << cell(ratio(tally.times_correct, tally.times_chosen)) << '\n';
      }
    }
    const auto& b = result.baseline;
    for (std::size_t e = 0; e < b.opposing_rate.size(); ++e) {
      f << "random_analytic," << csv::quote_if_needed(ds.experts()[e].display_name) << ','
        << cell(b.n_eval_cases > 0 ? b.chosen_freq : kNaN) << ','
        << cell(b.n_eval_cases > 0 ? b.chosen_freq * b.opposing_rate[e] : kNaN) << ','
        << cell(b.opposing_rate[e]) << '\n';
    }
    files["figure1.csv"] = f.str();
  }
  {
    std::ostringstream r;
    r << "case_id,policy,model_pred,chosen_expert,score,fold,model_proba,disagreement,correct\n";
    for (const auto& cr : result.cases) {
      const std::size_t c = ds.case_index(cr.case_id);
      for (const auto& rec : cr.recommendations) {
        r << csv::quote_if_needed(cr.case_id) << ',' << policy_name(rec.policy) << ',' << rec.model_pred << ',';
        if (rec.chosen) r << csv::quote_if_needed(ds.experts()[*rec.chosen].display_name);
        r << ',' << (rec.chosen ? cell(rec.score) : std::string()) << ',' << cr.fold << ','
          << csv::fixed6(cr.model_proba) << ',' << (cr.disagreement ? 1 : 0) << ',';
        if (cr.disagreement) {
          const auto label = rec.chosen ? ds.label_of(c, *rec.chosen) : std::nullopt;
          r << ((label && *label != rec.model_pred) ? 1 : 0);
        }
        r << '\n';
      }
    }
    files["recommendations.csv"] = r.str();
  }

  nlohmann::json meta;
  meta["config"] = resolved_config;
  meta["config_fingerprint"] = sha1_hex(resolved_config.dump());
  int n_disagree = 0;
  for (const auto& cr : result.cases) n_disagree += cr.disagreement ? 1 : 0;
  meta["dataset"] = {{"n_records", ds.records().size()},
                     {"n_cases", ds.cases().size()},
                     {"n_experts", ds.n_experts()},
                     {"n_features", ds.n_features()},
                     {"n_disagreement_cases", n_disagree}};
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& fi : result.folds) {
    nlohmann::json experts = nlohmann::json::array();
    for (const auto& r : fi.expert_reports) {
      experts.push_back(r ? nlohmann::json{{"iterations", r->iterations},
                                           {"final_grad_norm", r->final_grad_norm},
                                           {"converged", r->converged}}
                          : nlohmann::json(nullptr));
    }
    folds.push_back({{"fold", fi.fold},
                     {"n_train_records", fi.n_train_records},
                     {"n_test_cases", fi.n_test_cases},
                     {"n_components", fi.n_components},
                     {"retained_fraction", fi.retained_fraction},
                     {"pooled_fit", {{"iterations", fi.pooled_report.iterations},
                                     {"final_grad_norm", fi.pooled_report.final_grad_norm},
                                     {"converged", fi.pooled_report.converged}}},
                     {"expert_fits", experts}});
  }
  meta["folds"] = folds;
  meta["warnings"] = result.warnings;
  std::string all_ids;
  nlohmann::json outputs;
  for (const auto& [name, content] : files) {
    const auto id = git_blob_id(content);
    outputs[name] = id;
    all_ids += id;
  }
  meta["outputs"] = outputs;
  meta["content_hash"] = sha1_hex(all_ids);
  files["run_meta.json"] = meta.dump(2) + "\n";

  for (const auto& [name, content] : files) {
    std::ofstream out(out_dir / name, std::ios::binary);
    if (!out) throw DataError("cannot write " + (out_dir / name).string());
    out << content;
  }
}

}  // namespace second_opinion
