#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "json.hpp"
#include "second_opinion/glm.hpp"
#include "second_opinion/influence.hpp"

namespace second_opinion {

inline constexpr int kArtifactVersion = 1;

/// A saved model: the fitted logistic model and, for pooled models, the
/// cached influence state (Cholesky factor of the Hessian plus per-expert
/// group gradients) so recommendations need no access to training data.
struct ModelArtifact {
  LogisticModel model;
  std::optional<InfluenceEngine> influence;
  std::vector<ExpertId> experts;  // the panel the model was trained against
  std::vector<std::string> feature_names;  // raw input columns, in pipeline order
};

nlohmann::json to_json(const ModelArtifact& artifact);
/// Throws DataError for a wrong format tag, version, or shape.
ModelArtifact artifact_from_json(const nlohmann::json& j);

/// JSON doubles are written with round-trip precision, so a reloaded model
/// predicts bit-identically.
void save_artifact(const ModelArtifact& artifact, const std::filesystem::path& path);
ModelArtifact load_artifact(const std::filesystem::path& path);

}  // namespace second_opinion
