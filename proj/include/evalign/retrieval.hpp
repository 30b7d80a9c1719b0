#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "evalign/core.hpp"
#include "evalign/linalg.hpp"
#include "evalign/projection.hpp"

namespace evalign {

struct ReferenceEntry {
  std::string id;
  AbnormalityType type = AbnormalityType::normal;
  DementiaLabel dementia = DementiaLabel::non_demented;
  Vec embedding;  // projected, unit-norm
  std::string description;
};

/// Frozen set of projected reference cases searched by exact brute force.
class ReferenceIndex {
 public:
  /// Throws Error(numeric) when an entry is not unit-norm within 1e-4.
  explicit ReferenceIndex(std::vector<ReferenceEntry> entries);

  static ReferenceIndex build(const DatasetManifest& references, const ProjectionPair& pair);

  std::span<const ReferenceEntry> entries() const { return entries_; }
  const ReferenceEntry& operator[](std::size_t i) const { return entries_[i]; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t dim() const { return entries_.empty() ? 0 : entries_.front().embedding.size(); }

 private:
  std::vector<ReferenceEntry> entries_;
};

/// Cosine in [-1, 1]; throws Error(numeric) on a zero vector.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

using ClassScores = std::array<double, kNumAbnormalityTypes>;

struct Classification {
  AbnormalityType predicted = AbnormalityType::normal;
  ClassScores scores{};
};

/// Argmax cosine over the four anchors; ties go to the earliest type in
/// canonical order. Throws Error(data) if an anchor is missing.
Classification classify_abnormality(std::span<const double> query, const AnchorMap& anchors);

struct Match {
  std::size_t index = 0;  // position in the ReferenceIndex
  std::string id;
  double similarity = 0.0;
  AbnormalityType type = AbnormalityType::normal;
  std::string description;
};

/// The k most similar entries, similarity descending then id ascending.
/// Returns the whole index when k exceeds its size.
std::vector<Match> retrieve_top_k(std::span<const double> query, const ReferenceIndex& index,
                                  std::size_t k);

struct RetrievalResult {
  std::string query_id;
  AbnormalityType gold = AbnormalityType::normal;
  AbnormalityType predicted = AbnormalityType::normal;
  ClassScores class_scores{};
  std::vector<Match> top_k;
};

nlohmann::json to_json(const RetrievalResult& r);

// Analytics over a set of retrieval results, counting abnormality-type
// matches between reference and gold.
double accuracy_at_k(std::span<const RetrievalResult> results, std::size_t k);
double precision_at_k(std::span<const RetrievalResult> results, std::size_t k);

struct ScoreSummary {
  std::size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct SimilaritySplit {
  std::vector<double> correct;
  std::vector<double> incorrect;
  std::optional<ScoreSummary> correct_summary;
  std::optional<ScoreSummary> incorrect_summary;
};

SimilaritySplit similarity_split(std::span<const RetrievalResult> results);

std::optional<ScoreSummary> summarize(std::span<const double> values);

nlohmann::json to_json(const SimilaritySplit& s);

}  // namespace evalign
