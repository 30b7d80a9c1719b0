#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "evalign/core.hpp"
#include "evalign/linalg.hpp"
#include "evalign/projection.hpp"

namespace evalign {

/// Inputs to the outcome predictor: the query, the anchor of its predicted
/// type, and the normalized mean of the retrieved references.
struct EvidenceBundle {
  Vec query;
  Vec anchor;
  Vec reference_mean;
  std::vector<double> top_k_scores;
  AbnormalityType predicted_type = AbnormalityType::normal;

  std::size_t dim() const { return query.size(); }
  Vec features() const;  // [query | anchor | reference_mean]
};

EvidenceBundle build_evidence(std::span<const double> query, AbnormalityType predicted,
                              const AnchorMap& anchors, std::span<const Vec> references,
                              std::span<const double> scores);

/// Logistic regression over the 3P evidence features.
struct DiagnosisHead {
  Vec weights;
  double bias = 0.0;
  Task task = Task::dementia;

  bool operator==(const DiagnosisHead&) const = default;
};

inline constexpr double kProbabilityFloor = 1e-12;

double sigmoid(double z);

/// Probability of the positive class, clamped to [1e-12, 1 - 1e-12].
double predict(const DiagnosisHead& head, const EvidenceBundle& bundle);

inline constexpr double kDecisionThreshold = 0.5;

struct HeadTrainConfig {
  double lr = 0.5;
  std::size_t epochs = 500;
  std::uint64_t seed = 0;
};

/// Mean binary cross-entropy over the examples.
double head_loss(const DiagnosisHead& head, std::span<const EvidenceBundle> bundles,
                 std::span<const int> labels);

/// Gradient of head_loss; returned as a head holding d/dw and d/db.
DiagnosisHead head_gradient(const DiagnosisHead& head, std::span<const EvidenceBundle> bundles,
                            std::span<const int> labels);

/// Full-batch gradient descent from a seeded small-uniform start. Throws
/// Error(data) unless both labels occur.
DiagnosisHead train_head(std::span<const EvidenceBundle> bundles, std::span<const int> labels,
                         Task task, const HeadTrainConfig& config);

/// Smoothed P(positive | abnormality type).
struct ConditionalTable {
  std::array<double, kNumAbnormalityTypes> positive{};
  double alpha = 1.0;
  Task task = Task::dementia;

  bool operator==(const ConditionalTable&) const = default;
};

ConditionalTable fit_conditional(std::span<const std::pair<AbnormalityType, int>> cases,
                                 double alpha, Task task);

double predict_conditional(const ConditionalTable& table, AbnormalityType predicted);

nlohmann::json to_json(const DiagnosisHead& head);
DiagnosisHead head_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ConditionalTable& table);
ConditionalTable conditional_from_json(const nlohmann::json& j, Task task);

}  // namespace evalign
