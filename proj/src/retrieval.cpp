#include "evalign/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "evalign/error.hpp"

namespace evalign {

ReferenceIndex::ReferenceIndex(std::vector<ReferenceEntry> entries) : entries_(std::move(entries)) {
  for (const ReferenceEntry& e : entries_) {
    if (std::abs(norm(e.embedding) - 1.0) > 1e-4)
      throw_numeric("reference '" + e.id + "' is not unit-norm");
    if (e.embedding.size() != entries_.front().embedding.size())
      throw_data("reference '" + e.id + "' has a different dimension");
  }
}

ReferenceIndex ReferenceIndex::build(const DatasetManifest& references, const ProjectionPair& pair) {
  std::vector<ReferenceEntry> entries;
  entries.reserve(references.size());
  for (const CaseRecord& c : references.cases)
    entries.push_back({c.id, c.abnormality, c.dementia,
                       l2_normalize(project_image(pair, to_vec<float>(c.image_embedding))),
                       c.description});
  return ReferenceIndex(std::move(entries));
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw_data("cosine_similarity: dimension mismatch");
  const double na = norm(a);
  const double nb = norm(b);
  if (!(na > kDegenerateNorm) || !(nb > kDegenerateNorm))
    throw_numeric("cosine_similarity: zero vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

Classification classify_abnormality(std::span<const double> query, const AnchorMap& anchors) {
  Classification out;
  bool first = true;
  for (AbnormalityType t : kAllAbnormalityTypes) {
    auto it = anchors.find(t);
    if (it == anchors.end())
      throw_data("missing anchor for type '" + std::string(to_code(t)) + "'");
    const double s = cosine_similarity(query, it->second);
    out.scores[index_of(t)] = s;
    // Strict comparison keeps the earliest type on ties.
    if (first || s > out.scores[index_of(out.predicted)]) out.predicted = t;
    first = false;
  }
  return out;
}

std::vector<Match> retrieve_top_k(std::span<const double> query, const ReferenceIndex& index,
                                  std::size_t k) {
  if (index.empty()) throw_data("retrieve_top_k: empty reference index");
  if (k < 1) throw_usage("k must be >= 1");
  std::vector<Match> all;
  all.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const ReferenceEntry& e = index[i];
    all.push_back({i, e.id, cosine_similarity(query, e.embedding), e.type, e.description});
  }
  const std::size_t take = std::min(k, all.size());
  auto better = [](const Match& a, const Match& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.id < b.id;
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(), better);
  all.resize(take);
  return all;
}

nlohmann::json to_json(const RetrievalResult& r) {
  nlohmann::json scores = nlohmann::json::object();
  for (AbnormalityType t : kAllAbnormalityTypes)
    scores[std::string(to_code(t))] = r.class_scores[index_of(t)];
  nlohmann::json top = nlohmann::json::array();
  for (const Match& m : r.top_k)
    top.push_back({{"id", m.id},
                   {"similarity", m.similarity},
                   {"type", std::string(to_code(m.type))},
                   {"description", m.description}});
  return {{"query_id", r.query_id},
          {"gold", std::string(to_code(r.gold))},
          {"predicted", std::string(to_code(r.predicted))},
          {"class_scores", scores},
          {"top_k", top}};
}

double accuracy_at_k(std::span<const RetrievalResult> results, std::size_t k) {
  if (results.empty()) throw_data("accuracy_at_k: empty result set");
  if (k < 1) throw_usage("k must be >= 1");
  std::size_t hits = 0;
  for (const RetrievalResult& r : results) {
    const std::size_t upto = std::min(k, r.top_k.size());
    for (std::size_t i = 0; i < upto; ++i) {
      if (r.top_k[i].type == r.gold) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

double precision_at_k(std::span<const RetrievalResult> results, std::size_t k) {
  if (results.empty()) throw_data("precision_at_k: empty result set");
  if (k < 1) throw_usage("k must be >= 1");
  double total = 0.0;
  for (const RetrievalResult& r : results) {
    const std::size_t upto = std::min(k, r.top_k.size());
    std::size_t correct = 0;
    for (std::size_t i = 0; i < upto; ++i)
      if (r.top_k[i].type == r.gold) ++correct;
    total += static_cast<double>(correct) / static_cast<double>(k);
  }
  return total / static_cast<double>(results.size());
}

std::optional<ScoreSummary> summarize(std::span<const double> values) {
  if (values.empty()) return std::nullopt;
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  ScoreSummary s;
  s.count = sorted.size();
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.count);
  const std::size_t mid = s.count / 2;
  s.median = s.count % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  s.min = sorted.front();
  s.max = sorted.back();
  return s;
}

SimilaritySplit similarity_split(std::span<const RetrievalResult> results) {
  if (results.empty()) throw_data("similarity_split: empty result set");
  SimilaritySplit out;
  for (const RetrievalResult& r : results)
    for (const Match& m : r.top_k) (m.type == r.gold ? out.correct : out.incorrect).push_back(m.similarity);
  out.correct_summary = summarize(out.correct);
  out.incorrect_summary = summarize(out.incorrect);
  return out;
}

nlohmann::json to_json(const SimilaritySplit& s) {
  auto summary = [](const std::optional<ScoreSummary>& x) -> nlohmann::json {
    if (!x) return nullptr;
    return {{"count", x->count}, {"mean", x->mean}, {"median", x->median},
            {"min", x->min},     {"max", x->max}};
  };
  return {{"correct", {{"scores", s.correct}, {"summary", summary(s.correct_summary)}}},
          {"incorrect", {{"scores", s.incorrect}, {"summary", summary(s.incorrect_summary)}}}};
}

}  // namespace evalign
