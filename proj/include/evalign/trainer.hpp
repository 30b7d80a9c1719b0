#pragma once

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

struct TrainConfig {
  double tau = 0.07;
  double lambda_reg = 0.1;
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t epochs = 200;
  // 0, or anything >= N, means full batch.
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
  TextModality modality = TextModality::abnormality;

  bool operator==(const TrainConfig&) const = default;
};

/// Throws Error(usage) unless tau > 0, lr > 0, lambda_reg >= 0, momentum in [0, 1).
void validate(const TrainConfig& config);

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct TrainReport {
  std::vector<double> epoch_loss;
  double intra_class_cosine = 0.0;
  double inter_class_cosine = 0.0;
  double wall_seconds = 0.0;
};

nlohmann::json to_json(const TrainReport& report);

/// One training case in encoder space.
struct TrainExample {
  Vec image;
  Vec text;
  AbnormalityType type = AbnormalityType::normal;
};

struct TrainingSet {
  std::vector<TrainExample> examples;
  AnchorTexts anchors;
};

TrainingSet make_training_set(const DatasetManifest& manifest, TextModality modality);

/// S_ij = <img_i, txt_j>. Inputs must be unit-norm within 1e-4.
Matrix similarity_matrix(std::span<const Vec> imgs, std::span<const Vec> txts);

/// -(1/N) sum_i log softmax_j(S_ij / tau)[i], evaluated with per-row max
/// subtraction.
double info_nce_loss(const Matrix& similarities, double tau);

/// (1/N) sum_i (1 - <img_i, anchor_i>), in [0, 2] for unit inputs.
double category_regularizer(std::span<const Vec> imgs, std::span<const Vec> anchors);

struct LossGradient {
  double loss = 0.0;
  // Same shape as the parameters: d loss / d W and d loss / d b per head.
  ProjectionPair grad;
};

/// Total loss (InfoNCE + lambda * regularizer) evaluated forward-only via the
/// primitives above.
double total_loss(std::span<const TrainExample> batch, const AnchorTexts& anchors,
                  const ProjectionPair& pair, const TrainConfig& config);

/// Loss and exact analytic gradient through normalization and both heads.
LossGradient loss_gradient(std::span<const TrainExample> batch, const AnchorTexts& anchors,
                           const ProjectionPair& pair, const TrainConfig& config);

struct ClusterCosines {
  double intra = 0.0;
  double inter = 0.0;
  std::size_t intra_pairs = 0;
  std::size_t inter_pairs = 0;
};

/// Mean pairwise cosine over same-type and different-type pairs (i < j).
ClusterCosines cluster_cosines(std::span<const Vec> unit_vectors,
                               std::span<const AbnormalityType> types);

struct TrainResult {
  ProjectionPair pair;
  TrainReport report;
};

TrainResult train(const DatasetManifest& dataset, ProjectionPair pair, const TrainConfig& config);

}  // namespace evalign
