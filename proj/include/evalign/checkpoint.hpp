#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "evalign/diagnosis.hpp"
#include "evalign/projection.hpp"
#include "evalign/trainer.hpp"

namespace evalign {

inline constexpr int kCheckpointFormatVersion = 1;

/// Everything inference needs besides the reference manifest.
struct Checkpoint {
  ProjectionPair pair;
  TrainConfig train_config;
  AnchorTexts anchors;  // raw class anchor texts under train_config.modality
  std::optional<DiagnosisHead> dementia_head;
  std::optional<DiagnosisHead> ad_head;
  std::optional<ConditionalTable> dementia_table;
  std::optional<ConditionalTable> ad_table;

  const DiagnosisHead& head(Task task) const;
  const ConditionalTable& table(Task task) const;

  bool operator==(const Checkpoint&) const = default;
};

// {format_version, D, M, P, tau, vision: {W, b}, text: {W, b}, train_config,
//  anchors, diagnosis: {dementia, ad}, conditional: {dementia, ad}}
// W is row-major P x in_dim, flattened.
nlohmann::json to_json(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

std::string serialize_checkpoint(const Checkpoint& checkpoint);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace evalign
