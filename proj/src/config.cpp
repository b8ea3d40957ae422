#include "second_opinion/config.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <set>

#include "second_opinion/errors.hpp"

namespace second_opinion {
namespace {

using nlohmann::json;

void only_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError("config: unknown key '" + (where.empty() ? key : where + "." + key) + "'");
    }
  }
}

template <typename T>
T get(const json& obj, const char* key, const std::string& where, T fallback) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: '" + where + "." + key + "' has the wrong type");
  }
}

double positive_real(const json& obj, const char* key, const std::string& where, double fallback) {
  const double v = get<double>(obj, key, where, fallback);
  if (!(v > 0.0)) throw ConfigError("config: '" + where + "." + key + "' must be > 0");
  return v;
}

double unit_interval(const json& obj, const char* key, const std::string& where, double fallback) {
  const double v = get<double>(obj, key, where, fallback);
  if (!(v > 0.0 && v < 1.0)) throw ConfigError("config: '" + where + "." + key + "' must be in (0, 1)");
  return v;
}

}  // namespace

json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  if (value.is_structured()) throw ConfigError("override '" + key + "' must be a scalar");

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' is malformed");
    if (dot == std::string::npos) {
      if (node->contains(part) && (*node)[part].is_structured()) {
        throw ConfigError("override '" + key + "' targets a non-scalar field");
      }
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part)) (*node)[part] = json::object();
    node = &(*node)[part];
    if (!node->is_object()) throw ConfigError("override key '" + key + "' passes through a scalar");
    start = dot + 1;
  }
}

SyntheticSpec parse_synthetic_spec(const json& j) {
  const std::string w = "data.synthetic";
  only_keys(j, w, {"k", "n_cases", "n_features", "base_coeffs", "expert_offsets", "label_noise", "seed"});
  SyntheticSpec s;
  s.k = get<int>(j, "k", w, 2);
  s.n_cases = get<int>(j, "n_cases", w, 100);
  s.n_features = get<int>(j, "n_features", w, 2);
  s.base_coeffs = get<std::vector<double>>(j, "base_coeffs", w, std::vector<double>(std::max(s.n_features, 0), 1.0));
  s.expert_offsets = get<std::vector<std::vector<double>>>(
      j, "expert_offsets", w, std::vector<std::vector<double>>(std::max(s.k, 0), std::vector<double>(std::max(s.n_features, 0), 0.0)));
  s.label_noise = get<double>(j, "label_noise", w, 0.0);
  s.seed = get<std::uint64_t>(j, "seed", w, 0);
  if (s.k < 2) throw ConfigError("config: 'data.synthetic.k' must be >= 2");
  if (s.n_cases < 1) throw ConfigError("config: 'data.synthetic.n_cases' must be >= 1");
  if (s.n_features < 1) throw ConfigError("config: 'data.synthetic.n_features' must be >= 1");
  if (!(s.label_noise >= 0.0 && s.label_noise < 0.5)) {
    throw ConfigError("config: 'data.synthetic.label_noise' must be in [0, 0.5)");
  }
  if (s.base_coeffs.size() != static_cast<std::size_t>(s.n_features)) {
    throw ConfigError("config: 'data.synthetic.base_coeffs' must have n_features entries");
  }
  if (s.expert_offsets.size() != static_cast<std::size_t>(s.k)) {
    throw ConfigError("config: 'data.synthetic.expert_offsets' must have k entries");
  }
  for (const auto& off : s.expert_offsets) {
    if (off.size() != static_cast<std::size_t>(s.n_features)) {
      throw ConfigError("config: every 'data.synthetic.expert_offsets' entry must have n_features values");
    }
  }
  return s;
}

json synthetic_spec_json(const SyntheticSpec& s) {
  return {{"k", s.k},
          {"n_cases", s.n_cases},
          {"n_features", s.n_features},
          {"base_coeffs", s.base_coeffs},
          {"expert_offsets", s.expert_offsets},
          {"label_noise", s.label_noise},
          {"seed", s.seed}};
}

RunConfig parse_run_config(const json& doc, const std::filesystem::path& base_dir) {
  only_keys(doc, "", {"data", "preprocess", "model", "eval", "output"});
  RunConfig cfg;

  if (!doc.contains("data")) throw ConfigError("config: missing 'data' section");
  const json& data = doc.at("data");
  only_keys(data, "data", {"path", "schema", "synthetic"});
  if (data.contains("synthetic") == data.contains("path")) {
    throw ConfigError("config: 'data' needs exactly one of 'path' or 'synthetic'");
  }
  if (data.contains("synthetic")) {
    if (data.contains("schema")) throw ConfigError("config: 'data.schema' is not used with 'data.synthetic'");
    cfg.data.synthetic = parse_synthetic_spec(data.at("synthetic"));
  } else {
    std::filesystem::path p = get<std::string>(data, "path", "data", "");
    if (p.empty()) throw ConfigError("config: 'data.path' must be a non-empty string");
    cfg.data.path = p.is_absolute() || base_dir.empty() ? p : base_dir / p;
    if (!data.contains("schema")) throw ConfigError("config: 'data.schema' is required with 'data.path'");
    const json& schema = data.at("schema");
    only_keys(schema, "data.schema", {"feature_columns", "expert_columns", "case_id_column", "ignore_columns"});
    const json& features = schema.contains("feature_columns") ? schema.at("feature_columns") : json("rest");
    if (features.is_string()) {
      if (features != "rest") throw ConfigError("config: 'data.schema.feature_columns' must be a list or \"rest\"");
      cfg.data.features_are_rest = true;
    } else {
      cfg.data.feature_columns = get<std::vector<std::string>>(schema, "feature_columns", "data.schema", {});
    }
    cfg.data.expert_columns = get<std::vector<std::string>>(schema, "expert_columns", "data.schema", {});
    if (cfg.data.expert_columns.size() < 2) {
      throw ConfigError("config: 'data.schema.expert_columns' needs at least 2 columns");
    }
    if (schema.contains("case_id_column") && !schema.at("case_id_column").is_null()) {
      cfg.data.case_id_column = get<std::string>(schema, "case_id_column", "data.schema", "");
    }
    cfg.data.ignore_columns = get<std::vector<std::string>>(schema, "ignore_columns", "data.schema", {});
  }

  auto& ex = cfg.experiment;
  const json empty = json::object();
  const json& pre = doc.contains("preprocess") ? doc.at("preprocess") : empty;
  only_keys(pre, "preprocess", {"retain", "pca_on"});
  if (pre.contains("retain")) {
    const json& r = pre.at("retain");
    if (r.is_number_integer()) {
      ex.retain = Retain::count(r.get<int>());
      if (r.get<int>() < 1) throw ConfigError("config: 'preprocess.retain' count must be >= 1");
    } else if (r.is_number_float()) {
      ex.retain = Retain::fraction(r.get<double>());
      const double f = r.get<double>();
      if (!(f > 0.0 && f <= 1.0)) throw ConfigError("config: 'preprocess.retain' fraction must be in (0, 1]");
    } else {
      throw ConfigError("config: 'preprocess.retain' must be a fraction or a component count");
    }
  }
  const std::string pca_on = get<std::string>(pre, "pca_on", "preprocess", "cases");
  if (pca_on == "cases") {
    ex.pca_on = PcaOn::Cases;
  } else if (pca_on == "assessments") {
    ex.pca_on = PcaOn::Assessments;
  } else {
    throw ConfigError("config: 'preprocess.pca_on' must be \"cases\" or \"assessments\"");
  }

  const json& model = doc.contains("model") ? doc.at("model") : empty;
  only_keys(model, "model", {"lambda", "tau", "expert_tau", "calibrate", "tol", "max_iter"});
  ex.model.lambda = get<double>(model, "lambda", "model", 1e-4);
  if (!(ex.model.lambda >= 0.0)) throw ConfigError("config: 'model.lambda' must be >= 0");
  ex.model.tau = unit_interval(model, "tau", "model", 0.5);
  if (model.contains("expert_tau") && !model.at("expert_tau").is_null()) {
    ex.model.expert_tau = unit_interval(model, "expert_tau", "model", 0.5);
  }
  ex.model.calibrate = get<bool>(model, "calibrate", "model", false);
  ex.model.tol = positive_real(model, "tol", "model", 1e-8);
  ex.model.max_iter = get<int>(model, "max_iter", "model", 100);
  if (ex.model.max_iter < 1) throw ConfigError("config: 'model.max_iter' must be >= 1");

  const json& ev = doc.contains("eval") ? doc.at("eval") : empty;
  only_keys(ev, "eval", {"n_folds", "seed", "grouped_folds", "policies", "parallelism"});
  ex.n_folds = get<int>(ev, "n_folds", "eval", 3);
  if (ex.n_folds < 2) throw ConfigError("config: 'eval.n_folds' must be >= 2");
  ex.seed = get<std::uint64_t>(ev, "seed", "eval", 42);
  ex.grouped_folds = get<bool>(ev, "grouped_folds", "eval", true);
  if (ev.contains("policies")) {
    ex.policies.clear();
    std::set<Policy> seen;
    for (const auto& name : get<std::vector<std::string>>(ev, "policies", "eval", {})) {
      Policy p;
      try {
        p = parse_policy(name);
      } catch (const std::invalid_argument&) {
        throw ConfigError("config: 'eval.policies' has unknown policy '" + name + "'");
      }
      if (seen.insert(p).second) ex.policies.push_back(p);
    }
    if (ex.policies.empty()) throw ConfigError("config: 'eval.policies' must not be empty");
  }
  ex.parallelism = get<int>(ev, "parallelism", "eval", 0);
  if (ex.parallelism < 0) throw ConfigError("config: 'eval.parallelism' must be >= 0");

  const json& output = doc.contains("output") ? doc.at("output") : empty;
  only_keys(output, "output", {"dir"});
  cfg.output_dir = get<std::string>(output, "dir", "output", "out");
  return cfg;
}

json resolved_config(const RunConfig& c) {
  json data;
  if (c.data.synthetic) {
    data["synthetic"] = synthetic_spec_json(*c.data.synthetic);
  } else {
    data["path"] = c.data.path ? c.data.path->generic_string() : "";
    json schema;
    schema["feature_columns"] = c.data.features_are_rest ? json("rest") : json(c.data.feature_columns);
    schema["expert_columns"] = c.data.expert_columns;
    schema["case_id_column"] = c.data.case_id_column ? json(*c.data.case_id_column) : json(nullptr);
    schema["ignore_columns"] = c.data.ignore_columns;
    data["schema"] = schema;
  }
  const auto& ex = c.experiment;
  json retain = std::holds_alternative<int>(ex.retain.value) ? json(std::get<int>(ex.retain.value))
                                                             : json(std::get<double>(ex.retain.value));
  json policies = json::array();
  for (Policy p : ex.policies) policies.push_back(std::string(policy_name(p)));
  return {
      {"data", data},
      {"preprocess", {{"retain", retain}, {"pca_on", ex.pca_on == PcaOn::Cases ? "cases" : "assessments"}}},
      {"model",
       {{"lambda", ex.model.lambda},
        {"tau", ex.model.tau},
        {"expert_tau", ex.model.expert_tau ? json(*ex.model.expert_tau) : json(nullptr)},
        {"calibrate", ex.model.calibrate},
        {"tol", ex.model.tol},
        {"max_iter", ex.model.max_iter}}},
      {"eval",
       {{"n_folds", ex.n_folds},
        {"seed", ex.seed},
        {"grouped_folds", ex.grouped_folds},
        {"policies", policies},
        {"parallelism", ex.parallelism}}},
      {"output", {{"dir", c.output_dir.generic_string()}}},
  };
}

PanelDataset load_panel(const DataSource& source) {
  if (source.synthetic) return generate_synthetic(*source.synthetic).dataset;
  if (!source.path) throw ConfigError("config: no data source");
  WideSchema schema;
  schema.expert_columns = source.expert_columns;
  schema.case_id_column = source.case_id_column;
  if (source.features_are_rest) {
    std::set<std::string> claimed(source.expert_columns.begin(), source.expert_columns.end());
    claimed.insert(source.ignore_columns.begin(), source.ignore_columns.end());
    if (source.case_id_column) claimed.insert(*source.case_id_column);
    for (const auto& name : read_csv_header(*source.path)) {
      if (!claimed.count(name)) schema.feature_columns.push_back(name);
    }
  } else {
    schema.feature_columns = source.feature_columns;
  }
  if (schema.feature_columns.empty()) throw DataError("schema selects no feature columns");
  return load_wide_csv(*source.path, schema);
}

}  // namespace second_opinion
