// Command-line driver: train, recommend, evaluate, synth.
//
// Exit codes: 0 success, 1 configuration or usage error, 2 data error,
// 3 numerical failure. Each failure prints one diagnostic line on stderr.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "second_opinion/artifact.hpp"
#include "second_opinion/config.hpp"
#include "second_opinion/data.hpp"
#include "second_opinion/errors.hpp"
#include "second_opinion/eval.hpp"
#include "second_opinion/hash.hpp"
#include "second_opinion/recommend.hpp"
#include "csv.hpp"

namespace fs = std::filesystem;
using namespace second_opinion;

namespace {

constexpr const char* kOutputEnv = "SECOND_OPINION_OUTPUT_DIR";

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
};

RunConfig load_run_config(const CommonArgs& args) {
  nlohmann::json doc = read_config_file(args.config_path);
  for (const auto& o : args.overrides) apply_override(doc, o);
  RunConfig cfg = parse_run_config(doc, fs::path(args.config_path).parent_path());
  if (const char* env = std::getenv(kOutputEnv); env && *env) cfg.output_dir = env;
  if (!args.out_dir.empty()) cfg.output_dir = args.out_dir;
  return cfg;
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

Eigen::VectorXd to_vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

ModelArtifact pooled_artifact(const PanelDataset& ds, const FoldModels& models) {
  return {models.pooled, models.engine, ds.experts(), ds.feature_names()};
}

int cmd_evaluate(const CommonArgs& args) {
  const RunConfig cfg = load_run_config(args);
  const PanelDataset ds = load_panel(cfg.data);
  const nlohmann::json resolved = resolved_config(cfg);
  const ExperimentResult result = run_experiment(ds, cfg.experiment, sha1_hex(resolved.dump()));
  print_warnings(result.warnings);
  emit_report(ds, result, resolved, cfg.output_dir);

  std::cout << "policy            overall   pred1     pred0     n_eval\n";
  auto show = [](double v) { return std::isfinite(v) ? csv::fixed6(v) : std::string("   -    "); };
  for (const auto& s : result.summaries) {
    std::string name(policy_name(s.policy));
    name.resize(18, ' ');
    std::cout << name << show(s.accuracy_overall) << "  " << show(s.accuracy_pred1) << "  "
              << show(s.accuracy_pred0) << "  " << s.n_eval_cases << '\n';
  }
  std::string name = "random_analytic";
  name.resize(18, ' ');
  std::cout << name << show(result.baseline.accuracy_overall) << "  " << show(result.baseline.accuracy_pred1)
            << "  " << show(result.baseline.accuracy_pred0) << "  " << result.baseline.n_eval_cases << '\n';
  std::cout << "reports written to " << cfg.output_dir.string() << '\n';
  return 0;
}

int cmd_train(const CommonArgs& args) {
  const RunConfig cfg = load_run_config(args);
  const PanelDataset ds = load_panel(cfg.data);
  const auto& ex = cfg.experiment;
  fs::create_directories(cfg.output_dir);

  auto write_set = [&](const fs::path& dir, const FoldModels& models) {
    fs::create_directories(dir);
    save_artifact(pooled_artifact(ds, models), dir / "pooled.json");
    for (std::size_t e = 0; e < models.experts.size(); ++e) {
      if (!models.experts[e]) continue;
      save_artifact({*models.experts[e], std::nullopt, ds.experts(), ds.feature_names()},
                    dir / ("expert_" + std::to_string(e) + ".json"));
    }
  };

  const FoldPlan plan = make_folds(ds, ex.n_folds, ex.seed, ex.grouped_folds);
  nlohmann::json folds_doc = {{"n_folds", plan.n_folds}, {"seed", plan.seed}, {"grouped", plan.grouped}};
  nlohmann::json assignment = nlohmann::json::object();
  for (const auto& [case_id, fold] : plan.assignment) assignment[case_id] = fold;
  folds_doc["assignment"] = assignment;

  for (int f = 0; f < plan.n_folds; ++f) {
    std::vector<std::size_t> train;
    for (std::size_t r = 0; r < ds.records().size(); ++r) {
      if (plan.record_fold[r] != f) train.push_back(r);
    }
    FoldModels models = train_models(ds, train, ex);
    for (auto& w : models.warnings) w = "fold " + std::to_string(f) + ": " + w;
    print_warnings(models.warnings);
    write_set(cfg.output_dir / ("fold" + std::to_string(f)), models);
  }

  std::vector<std::size_t> all(ds.records().size());
  for (std::size_t r = 0; r < all.size(); ++r) all[r] = r;
  const FoldModels full = train_models(ds, all, ex);
  print_warnings(full.warnings);
  write_set(cfg.output_dir / "full", full);

  std::ofstream(cfg.output_dir / "folds.json", std::ios::binary) << folds_doc.dump(1) << '\n';
  std::ofstream(cfg.output_dir / "train_config.json", std::ios::binary) << resolved_config(cfg).dump(2) << '\n';
  std::cout << "artifacts written to " << cfg.output_dir.string() << '\n';
  return 0;
}

struct RecommendArgs {
  std::string models_dir;
  std::string input;
  std::string case_id_column;
  std::string influence_out;
  std::uint64_t seed = 42;
  double expert_tau = 0.0;
};

int cmd_recommend(const RecommendArgs& args) {
  const fs::path dir(args.models_dir);
  const ModelArtifact pooled = load_artifact(dir / "pooled.json");
  if (!pooled.influence) throw DataError((dir / "pooled.json").string() + " carries no influence state");
  const auto& experts = pooled.experts;
  const std::size_t k = experts.size();
  std::vector<std::optional<LogisticModel>> expert_models(k);
  for (std::size_t e = 0; e < k; ++e) {
    const fs::path p = dir / ("expert_" + std::to_string(e) + ".json");
    if (fs::exists(p)) expert_models[e] = load_artifact(p).model;
  }
  const double expert_tau = args.expert_tau > 0.0 ? args.expert_tau : pooled.model.tau;
  if (!(expert_tau > 0.0 && expert_tau < 1.0)) throw ConfigError("--expert-tau must be in (0, 1)");

  std::ifstream in(args.input);
  if (!in) throw DataError("cannot open " + args.input);
  std::vector<std::string> header;
  if (auto line = csv::next_line(in, true)) header = csv::split_line(*line);
  std::vector<std::size_t> cols;
  for (const auto& name : pooled.feature_names) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("input is missing feature column '" + name + "'");
    cols.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  std::optional<std::size_t> id_col;
  if (!args.case_id_column.empty()) {
    auto it = std::find(header.begin(), header.end(), args.case_id_column);
    if (it == header.end()) throw DataError("input is missing case id column '" + args.case_id_column + "'");
    id_col = static_cast<std::size_t>(it - header.begin());
  }

  std::vector<int> eligible;
  for (std::size_t e = 0; e < k; ++e) {
    if (pooled.influence->group_gradients()[e]) eligible.push_back(static_cast<int>(e));
  }

  std::ostringstream out;
  out << "case_id,model_proba,model_pred";
  for (Policy p : {Policy::IndepAlways, Policy::IndepThreshold, Policy::InfluenceAlways, Policy::InfluenceSigned,
                   Policy::RandomBaseline}) {
    out << ',' << policy_name(p);
  }
  for (const auto& e : experts) out << ',' << csv::quote_if_needed("influence_" + e.display_name);
  for (const auto& e : experts) out << ',' << csv::quote_if_needed("proba_" + e.display_name);
  out << '\n';

  std::vector<InfluenceReport> reports;
  std::size_t row = 0;
  while (auto line = csv::next_line(in, false)) {
    ++row;
    const auto fields = csv::split_line(*line);
    if (fields.size() != header.size()) {
      throw DataError("input row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                      " fields, header has " + std::to_string(header.size()));
    }
    std::vector<double> x;
    for (std::size_t c : cols) {
      auto v = csv::parse_real(fields[c]);
      if (!v || !std::isfinite(*v)) {
        throw DataError("input row " + std::to_string(row) + ", column '" + header[c] + "' is not a finite number");
      }
      x.push_back(*v);
    }
    const CaseId id = id_col ? fields[*id_col] : std::to_string(row - 1);
    const InfluenceReport rep = prediction_influence(pooled.model, *pooled.influence, id, to_vec(x));
    ExpertScores probas(k);
    for (std::size_t e = 0; e < k; ++e) {
      if (expert_models[e]) probas[e] = predict_proba(*expert_models[e], to_vec(x));
    }
    const int pred = rep.model_pred;
    const std::vector<Recommendation> recs{
        indep_always(id, probas, pred), indep_threshold(id, probas, pred, expert_tau),
        influence_always(id, rep.values, pred), influence_signed(id, rep.values, pred),
        random_baseline(id, eligible, args.seed, pred)};

    out << csv::quote_if_needed(id) << ',' << csv::exact(rep.model_proba) << ',' << pred;
    for (const auto& r : recs) {
      out << ',';
      if (r.chosen) out << csv::quote_if_needed(experts[*r.chosen].display_name);
    }
    for (const auto& v : rep.values) out << ',' << (v ? csv::exact(*v) : std::string());
    for (const auto& p : probas) out << ',' << (p ? csv::exact(*p) : std::string());
    out << '\n';
    reports.push_back(rep);
  }

  if (!args.influence_out.empty()) {
    std::ofstream inf(args.influence_out, std::ios::binary);
    if (!inf) throw DataError("cannot write " + args.influence_out);
    write_influence_csv(inf, reports, experts);
  }
  std::cout << out.str();
  return 0;
}

int cmd_synth(const CommonArgs& args) {
  const RunConfig cfg = load_run_config(args);
  if (!cfg.data.synthetic) throw ConfigError("config: 'synth' needs a 'data.synthetic' section");
  const SyntheticPanel panel = generate_synthetic(*cfg.data.synthetic);
  fs::create_directories(cfg.output_dir);
  write_wide_csv(panel.dataset, cfg.output_dir / "panel.csv");

  nlohmann::json truth = {{"spec", synthetic_spec_json(*cfg.data.synthetic)},
                          {"expert_coeffs", panel.expert_coeffs}};
  std::ofstream(cfg.output_dir / "truth.json", std::ios::binary) << truth.dump(1) << '\n';

  // A config that evaluates the emitted file through the CSV path.
  nlohmann::json run = resolved_config(cfg);
  std::vector<std::string> expert_cols;
  for (const auto& e : panel.dataset.experts()) expert_cols.push_back(e.display_name);
  run["data"] = {{"path", "panel.csv"},
                 {"schema", {{"feature_columns", panel.dataset.feature_names()},
                             {"expert_columns", expert_cols},
                             {"case_id_column", "case_id"}}}};
  run["output"]["dir"] = (cfg.output_dir / "report").generic_string();
  std::ofstream(cfg.output_dir / "config.json", std::ios::binary) << run.dump(2) << '\n';
  std::cout << "wrote " << panel.dataset.cases().size() << " cases ("
            << panel.dataset.records().size() << " assessments) to " << (cfg.output_dir / "panel.csv").string()
            << '\n';
  return 0;
}

template <typename F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Second-opinion recommendation from expert panels"};
  app.require_subcommand(1);

  auto add_common = [](CLI::App* sub, CommonArgs& args) {
    sub->add_option("-c,--config", args.config_path, "Run configuration (JSON)")->required();
    sub->add_option("--set", args.overrides, "Override a scalar config field, e.g. model.lambda=0.001");
    sub->add_option("-o,--out", args.out_dir, "Output directory (overrides config and environment)");
  };

  CommonArgs eval_args, train_args, synth_args;
  auto* evaluate = app.add_subcommand("evaluate", "Cross-validated disagreement-retrieval evaluation");
  add_common(evaluate, eval_args);
  auto* train = app.add_subcommand("train", "Fit pooled and per-expert models, per fold and on all data");
  add_common(train, train_args);
  auto* synth = app.add_subcommand("synth", "Write a synthetic expert panel as CSV");
  add_common(synth, synth_args);

  RecommendArgs rec_args;
  auto* recommend = app.add_subcommand("recommend", "Recommend second opinions for new cases");
  recommend->add_option("-m,--models", rec_args.models_dir, "Directory with pooled.json and expert_<i>.json")
      ->required();
  recommend->add_option("-i,--input", rec_args.input, "CSV with the model's feature columns")->required();
  recommend->add_option("--case-id-column", rec_args.case_id_column, "Input column holding case ids");
  recommend->add_option("--influence-out", rec_args.influence_out, "Also write per-expert influence rows here");
  recommend->add_option("--seed", rec_args.seed, "Seed of the random-selection column");
  recommend->add_option("--expert-tau", rec_args.expert_tau, "Threshold for the per-expert threshold policy");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (*evaluate) return guarded([&] { return cmd_evaluate(eval_args); });
  if (*train) return guarded([&] { return cmd_train(train_args); });
  if (*synth) return guarded([&] { return cmd_synth(synth_args); });
  return guarded([&] { return cmd_recommend(rec_args); });
}
