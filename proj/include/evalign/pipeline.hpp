#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evalign/checkpoint.hpp"
#include "evalign/core.hpp"
#include "evalign/diagnosis.hpp"
#include "evalign/metrics.hpp"
#include "evalign/retrieval.hpp"
#include "evalign/trainer.hpp"

namespace evalign {

enum class Predictor { head, conditional };

Predictor parse_predictor(std::string_view code);

struct PipelineConfig {
  TrainConfig train;
  std::size_t proj_dim = 128;
  std::size_t k = 3;
  HeadTrainConfig head;
  double alpha = 1.0;
};

/// Trains the projection heads, then fits both diagnosis heads (on
/// leave-one-out evidence over the training set) and both conditional tables.
/// A task whose training labels are single-class gets no head.
Checkpoint fit_pipeline(const DatasetManifest& train, const PipelineConfig& config,
                        TrainReport* report = nullptr);

/// Query-side view over a checkpoint and its reference set.
class InferenceEngine {
 public:
  InferenceEngine(Checkpoint checkpoint, const DatasetManifest& references);

  const Checkpoint& checkpoint() const { return checkpoint_; }
  const ReferenceIndex& index() const { return index_; }
  const AnchorMap& anchors() const { return anchors_; }

  Vec embed(const CaseRecord& query) const;

  /// Classification plus the k nearest references; `exclude_id` drops one
  /// reference (leave-one-out).
  RetrievalResult retrieve(const CaseRecord& query, std::size_t k,
                           const std::string& exclude_id = {}) const;

  EvidenceBundle evidence(const CaseRecord& query, const RetrievalResult& result) const;

  double predict(const CaseRecord& query, const RetrievalResult& result, Task task,
                 Predictor predictor) const;

 private:
  Checkpoint checkpoint_;
  AnchorMap anchors_;
  ReferenceIndex index_;
};

struct CaseOutcome {
  RetrievalResult retrieval;
  double dementia_probability = 0.0;
  double ad_probability = 0.0;
};

struct EvaluationReport {
  MetricsReport abnormality;
  MetricsReport dementia;
  MetricsReport ad;
  std::vector<double> accuracy_at_k;   // index i is k = i + 1
  std::vector<double> precision_at_k;
  SimilaritySplit similarity;
  ErrorAnalysis errors;
  std::vector<CaseOutcome> cases;      // ordered by case id
};

/// Runs every test case through classification, retrieval and both
/// prediction tasks. Curves cover k = 1..min(max_curve_k, |index|).
EvaluationReport evaluate(const InferenceEngine& engine, const DatasetManifest& test,
                          std::size_t k, Predictor predictor, std::size_t max_curve_k = 10);

/// Writes {abnormality,dementia,ad}_report.{json,csv}, retrieval_analysis.json,
/// error_analysis.json and predictions.jsonl into `dir`.
void write_evaluation(const EvaluationReport& report, const std::filesystem::path& dir);

struct EmbeddingPoint {
  std::string id;
  AbnormalityType type = AbnormalityType::normal;
  double x = 0.0;
  double y = 0.0;
  bool is_anchor = false;
};

/// 2-D PCA of projected image embeddings and the four projected anchors.
std::vector<EmbeddingPoint> export_embedding_space(const Checkpoint& checkpoint,
                                                   const DatasetManifest& manifest,
                                                   std::uint64_t seed);

std::string embedding_csv(const std::vector<EmbeddingPoint>& points);

}  // namespace evalign
