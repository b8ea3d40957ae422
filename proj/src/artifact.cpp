#include "second_opinion/artifact.hpp"

#include <fstream>
#include <sstream>

#include "second_opinion/errors.hpp"

namespace second_opinion {
namespace {

using nlohmann::json;

constexpr const char* kFormat = "second_opinion.model";

json vec_json(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Eigen::VectorXd json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json mat_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_json(m.row(r).transpose()));
  return rows;
}

Eigen::MatrixXd json_mat(const json& j, Eigen::Index cols) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), cols);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const Eigen::VectorXd row = json_vec(j.at(r));
    if (row.size() != cols) throw DataError("artifact matrix row has wrong length");
    m.row(r) = row.transpose();
  }
  return m;
}

json expert_json(const ExpertId& e) { return {{"index", e.index}, {"name", e.display_name}}; }
ExpertId json_expert(const json& j) { return {j.at("index").get<int>(), j.at("name").get<std::string>()}; }

}  // namespace

json to_json(const ModelArtifact& a) {
  const auto& m = a.model;
  json j;
  j["format"] = kFormat;
  j["version"] = kArtifactVersion;
  j["kind"] = a.influence ? "pooled" : (m.expert ? "expert" : "model");
  j["expert"] = m.expert ? expert_json(*m.expert) : json(nullptr);
  json experts = json::array();
  for (const auto& e : a.experts) experts.push_back(expert_json(e));
  j["experts"] = experts;
  j["feature_names"] = a.feature_names;
  j["pipeline"] = {
      {"standardizer", {{"means", vec_json(m.pipeline.standardizer.means)},
                        {"stds", vec_json(m.pipeline.standardizer.stds)}}},
      {"pca", {{"components", mat_json(m.pipeline.pca.components)},
               {"explained_variance", vec_json(m.pipeline.pca.explained_variance)},
               {"retained_fraction", m.pipeline.pca.retained_fraction}}},
  };
  j["theta"] = vec_json(m.theta);
  j["lambda"] = m.lambda;
  j["tau"] = m.tau;
  j["calibration"] = m.calibration ? json{{"a", m.calibration->a}, {"b", m.calibration->b}} : json(nullptr);
  j["fit_report"] = {{"iterations", m.report.iterations},
                     {"final_grad_norm", m.report.final_grad_norm},
                     {"converged", m.report.converged}};
  if (a.influence) {
    const auto& e = *a.influence;
    json groups = json::array();
    for (std::size_t h = 0; h < e.n_experts(); ++h) {
      groups.push_back({{"expert", static_cast<int>(h)},
                        {"rows", e.group_sizes()[h]},
                        {"gradient", e.group_gradients()[h] ? vec_json(*e.group_gradients()[h]) : json(nullptr)}});
    }
    j["influence"] = {{"n_train", e.n_train()},
                      {"hessian_cholesky_lower", mat_json(e.cholesky_lower())},
                      {"group_gradients", groups}};
  } else {
    j["influence"] = nullptr;
  }
  return j;
}

ModelArtifact artifact_from_json(const json& j) {
  try {
    if (j.at("format") != kFormat) throw DataError("not a model artifact (format tag mismatch)");
    if (j.at("version").get<int>() != kArtifactVersion) {
      throw DataError("unsupported artifact version " + j.at("version").dump());
    }
    ModelArtifact a;
    for (const auto& e : j.at("experts")) a.experts.push_back(json_expert(e));
    a.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    auto& m = a.model;
    if (!j.at("expert").is_null()) m.expert = json_expert(j.at("expert"));
    const auto& pl = j.at("pipeline");
    m.pipeline.standardizer.means = json_vec(pl.at("standardizer").at("means"));
    m.pipeline.standardizer.stds = json_vec(pl.at("standardizer").at("stds"));
    const Eigen::Index n = m.pipeline.standardizer.means.size();
    if (m.pipeline.standardizer.stds.size() != n || static_cast<Eigen::Index>(a.feature_names.size()) != n) {
      throw DataError("artifact standardizer shape mismatch");
    }
    m.pipeline.pca.components = json_mat(pl.at("pca").at("components"), n);
    m.pipeline.pca.explained_variance = json_vec(pl.at("pca").at("explained_variance"));
    m.pipeline.pca.retained_fraction = pl.at("pca").at("retained_fraction").get<double>();
    m.theta = json_vec(j.at("theta"));
    if (m.theta.size() != m.pipeline.pca.n_components() + 1) throw DataError("artifact theta shape mismatch");
    m.lambda = j.at("lambda").get<double>();
    m.tau = j.at("tau").get<double>();
    if (!j.at("calibration").is_null()) {
      m.calibration = PlattMap{j["calibration"].at("a").get<double>(), j["calibration"].at("b").get<double>()};
    }
    const auto& fr = j.at("fit_report");
    m.report = {fr.at("iterations").get<int>(), fr.at("final_grad_norm").get<double>(),
                fr.at("converged").get<bool>()};
    if (!j.at("influence").is_null()) {
      const auto& inf = j["influence"];
      std::vector<std::optional<Eigen::VectorXd>> groups;
      std::vector<int> sizes;
      for (const auto& g : inf.at("group_gradients")) {
        sizes.push_back(g.at("rows").get<int>());
        if (g.at("gradient").is_null()) {
          groups.emplace_back();
        } else {
          groups.emplace_back(json_vec(g["gradient"]));
        }
      }
      a.influence = InfluenceEngine::from_parts(m.theta, m.lambda,
                                                json_mat(inf.at("hessian_cholesky_lower"), m.theta.size()),
                                                std::move(groups), std::move(sizes),
                                                inf.at("n_train").get<Eigen::Index>());
    }
    return a;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed model artifact: ") + e.what());
  }
}

void save_artifact(const ModelArtifact& artifact, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json(artifact).dump(1) << '\n';
}

ModelArtifact load_artifact(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return artifact_from_json(j);
}

}  // namespace second_opinion
