#include "evalign/diagnosis.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "evalign/error.hpp"
#include "evalign/rng.hpp"

namespace evalign {

Vec EvidenceBundle::features() const {
  Vec f;
  f.reserve(3 * dim());
  f.insert(f.end(), query.begin(), query.end());
  f.insert(f.end(), anchor.begin(), anchor.end());
  f.insert(f.end(), reference_mean.begin(), reference_mean.end());
  return f;
}

EvidenceBundle build_evidence(std::span<const double> query, AbnormalityType predicted,
                              const AnchorMap& anchors, std::span<const Vec> references,
                              std::span<const double> scores) {
  if (references.empty()) throw_data("build_evidence: no references");
  auto it = anchors.find(predicted);
  if (it == anchors.end())
    throw_data("build_evidence: missing anchor for '" + std::string(to_code(predicted)) + "'");
  const std::size_t p = query.size();
  if (it->second.size() != p) throw_data("build_evidence: anchor dimension mismatch");
  Vec mean(p, 0.0);
  for (const Vec& r : references) {
    if (r.size() != p) throw_data("build_evidence: reference dimension mismatch");
    for (std::size_t d = 0; d < p; ++d) mean[d] += r[d];
  }
  for (double& x : mean) x /= static_cast<double>(references.size());

  EvidenceBundle b;
  b.query.assign(query.begin(), query.end());
  b.anchor = it->second;
  b.reference_mean = l2_normalize(mean);
  b.top_k_scores.assign(scores.begin(), scores.end());
  b.predicted_type = predicted;
  return b;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace {

double logit(const DiagnosisHead& head, const EvidenceBundle& bundle) {
  const Vec f = bundle.features();
  if (f.size() != head.weights.size())
    throw_data("diagnosis head expects " + std::to_string(head.weights.size()) +
               " features, got " + std::to_string(f.size()));
  return dot(head.weights, f) + head.bias;
}

void check_examples(std::span<const EvidenceBundle> bundles, std::span<const int> labels) {
  if (bundles.size() != labels.size()) throw_data("bundle/label count mismatch");
  if (bundles.empty()) throw_data("no training examples");
  for (int y : labels)
    if (y != 0 && y != 1) throw_data("labels must be 0 or 1");
}

}  // namespace

double predict(const DiagnosisHead& head, const EvidenceBundle& bundle) {
  return std::clamp(sigmoid(logit(head, bundle)), kProbabilityFloor, 1.0 - kProbabilityFloor);
}

double head_loss(const DiagnosisHead& head, std::span<const EvidenceBundle> bundles,
                 std::span<const int> labels) {
  check_examples(bundles, labels);
  double total = 0.0;
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    const double z = logit(head, bundles[i]);
    // log(1 + e^z) - y z, written to avoid overflow.
    const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    total += softplus - labels[i] * z;
  }
  return total / static_cast<double>(bundles.size());
}

DiagnosisHead head_gradient(const DiagnosisHead& head, std::span<const EvidenceBundle> bundles,
                            std::span<const int> labels) {
  check_examples(bundles, labels);
  DiagnosisHead g{Vec(head.weights.size(), 0.0), 0.0, head.task};
  const double inv_n = 1.0 / static_cast<double>(bundles.size());
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    const Vec f = bundles[i].features();
    const double r = (sigmoid(dot(head.weights, f) + head.bias) - labels[i]) * inv_n;
    for (std::size_t d = 0; d < f.size(); ++d) g.weights[d] += r * f[d];
    g.bias += r;
  }
  return g;
}

DiagnosisHead train_head(std::span<const EvidenceBundle> bundles, std::span<const int> labels,
                         Task task, const HeadTrainConfig& config) {
  check_examples(bundles, labels);
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  if (positives == 0 || positives == static_cast<std::ptrdiff_t>(labels.size()))
    throw_data("train_head needs at least one example of each label");
  if (!(config.lr > 0.0)) throw_usage("head lr must be > 0");

  const std::size_t n_features = 3 * bundles.front().dim();
  Rng rng(config.seed);
  DiagnosisHead head{Vec(n_features), 0.0, task};
  for (double& w : head.weights) w = rng.uniform(-0.01, 0.01);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const DiagnosisHead g = head_gradient(head, bundles, labels);
    for (std::size_t d = 0; d < n_features; ++d) head.weights[d] -= config.lr * g.weights[d];
    head.bias -= config.lr * g.bias;
  }
  if (!all_finite(head.weights) || !std::isfinite(head.bias))
    throw_numeric("diagnosis head diverged");
  return head;
}

ConditionalTable fit_conditional(std::span<const std::pair<AbnormalityType, int>> cases,
                                 double alpha, Task task) {
  if (!(alpha > 0.0)) throw_usage("smoothing alpha must be > 0");
  std::array<double, kNumAbnormalityTypes> pos{}, count{};
  for (const auto& [type, label] : cases) {
    if (label != 0 && label != 1) throw_data("labels must be 0 or 1");
    count[index_of(type)] += 1.0;
    pos[index_of(type)] += label;
  }
  ConditionalTable t;
  t.alpha = alpha;
  t.task = task;
  for (std::size_t k = 0; k < kNumAbnormalityTypes; ++k)
    t.positive[k] = (pos[k] + alpha) / (count[k] + 2.0 * alpha);
  return t;
}

double predict_conditional(const ConditionalTable& table, AbnormalityType predicted) {
  return table.positive[index_of(predicted)];
}

nlohmann::json to_json(const DiagnosisHead& head) {
  return {{"task", std::string(to_code(head.task))}, {"w", head.weights}, {"b", head.bias}};
}

DiagnosisHead head_from_json(const nlohmann::json& j) {
  DiagnosisHead h;
  h.task = parse_task(j.at("task").get<std::string>());
  h.weights = j.at("w").get<Vec>();
  h.bias = j.at("b").get<double>();
  return h;
}

nlohmann::json to_json(const ConditionalTable& table) {
  nlohmann::json j;
  for (AbnormalityType t : kAllAbnormalityTypes)
    j[std::string(to_code(t))] = table.positive[index_of(t)];
  j["alpha"] = table.alpha;
  return j;
}

ConditionalTable conditional_from_json(const nlohmann::json& j, Task task) {
  ConditionalTable t;
  t.task = task;
  t.alpha = j.at("alpha").get<double>();
  for (AbnormalityType a : kAllAbnormalityTypes) {
    const double p = j.at(std::string(to_code(a))).get<double>();
    if (!(p > 0.0 && p < 1.0)) throw_data("conditional probability outside (0, 1)");
    t.positive[index_of(a)] = p;
  }
  return t;
}

}  // namespace evalign
