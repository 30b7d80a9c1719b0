#include "evalign/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "evalign/error.hpp"
#include "evalign/format.hpp"

namespace evalign {

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json metrics_json(const BinaryMetrics& m) {
  return {{"accuracy", m.accuracy},       {"sensitivity", m.sensitivity},
          {"specificity", m.specificity}, {"precision", m.precision},
          {"f1", m.f1}};
}

std::string csv_row(const std::string& name, double acc, const std::optional<double>& auc,
                    double sens, double spec, double prec, double f1) {
  auto pct = [](double v) { return format_fixed(v * 100.0, 2); };
  std::ostringstream out;
  out << name << ',' << pct(acc) << ',' << (auc ? format_fixed(*auc, 4) : std::string("NA"))
      << ',' << pct(sens) << ',' << pct(spec) << ',' << pct(prec) << ',' << pct(f1) << '\n';
  return out.str();
}

}  // namespace

std::size_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0});
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t t = 0;
  for (std::size_t i = 0; i < k_; ++i) t += at(i, i);
  return t;
}

ConfusionMatrix ConfusionMatrix::one_vs_rest(std::size_t c) const {
  ConfusionMatrix out(2);
  for (std::size_t t = 0; t < k_; ++t)
    for (std::size_t p = 0; p < k_; ++p) out.at(t == c ? 1 : 0, p == c ? 1 : 0) += at(t, p);
  return out;
}

ConfusionMatrix confusion(std::span<const int> gold, std::span<const int> predicted,
                          std::size_t classes) {
  if (gold.size() != predicted.size()) throw_data("confusion: length mismatch");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] < 0 || predicted[i] < 0 || static_cast<std::size_t>(gold[i]) >= classes ||
        static_cast<std::size_t>(predicted[i]) >= classes)
      throw_data("confusion: label out of range at position " + std::to_string(i));
    ++cm.at(static_cast<std::size_t>(gold[i]), static_cast<std::size_t>(predicted[i]));
  }
  return cm;
}

BinaryMetrics binary_metrics(const ConfusionMatrix& cm) {
  if (cm.classes() != 2) throw_data("binary_metrics needs a 2x2 confusion matrix");
  if (cm.total() == 0) throw_data("binary_metrics: empty confusion matrix");
  const std::size_t tp = cm.at(1, 1), tn = cm.at(0, 0), fp = cm.at(0, 1), fn = cm.at(1, 0);
  BinaryMetrics m;
  m.accuracy = ratio(tp + tn, cm.total());
  m.sensitivity = ratio(tp, tp + fn);
  m.specificity = ratio(tn, tn + fp);
  m.precision = ratio(tp, tp + fp);
  m.f1 = (m.precision + m.sensitivity) == 0.0
             ? 0.0
             : 2.0 * m.precision * m.sensitivity / (m.precision + m.sensitivity);
  return m;
}

double auc_roc(std::span<const double> scores, std::span<const int> gold) {
  if (scores.size() != gold.size()) throw_data("auc_roc: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sweep groups of equal score in ascending order. Counts stay integral, so
  // the result is exact up to the final division.
  std::size_t negatives_below = 0, n_pos = 0, n_neg = 0;
  std::size_t concordant = 0, tied = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i, pos = 0, neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      const int y = gold[order[j]];
      if (y != 0 && y != 1) throw_data("auc_roc: labels must be 0 or 1");
      (y == 1 ? pos : neg) += 1;
      ++j;
    }
    concordant += pos * negatives_below;
    tied += pos * neg;
    negatives_below += neg;
    n_pos += pos;
    n_neg += neg;
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) throw_data("auc_roc needs both positive and negative cases");
  return (static_cast<double>(concordant) + 0.5 * static_cast<double>(tied)) /
         (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

MetricsReport binary_report(std::span<const int> gold, std::span<const int> predicted,
                            std::span<const double> scores) {
  MetricsReport r;
  r.confusion = confusion(gold, predicted, 2);
  const BinaryMetrics m = binary_metrics(r.confusion);
  r.accuracy = m.accuracy;
  r.sensitivity = m.sensitivity;
  r.specificity = m.specificity;
  r.precision = m.precision;
  r.f1 = m.f1;
  const bool both = std::count(gold.begin(), gold.end(), 1) > 0 &&
                    std::count(gold.begin(), gold.end(), 0) > 0;
  if (both) r.auc_roc = auc_roc(scores, gold);
  return r;
}

MetricsReport macro_metrics(std::span<const int> gold, std::span<const int> predicted,
                            const Matrix& scores, std::span<const std::string> labels) {
  const std::size_t k = labels.size();
  if (k < 2) throw_data("macro_metrics needs at least two classes");
  if (scores.rows != gold.size() || scores.cols != k)
    throw_data("macro_metrics: score matrix shape mismatch");
  MetricsReport r;
  r.confusion = confusion(gold, predicted, k);
  if (r.confusion.total() == 0) throw_data("macro_metrics: no cases");

  double auc_sum = 0.0;
  std::size_t auc_count = 0;
  for (std::size_t c = 0; c < k; ++c) {
    ClassMetrics row;
    row.label = labels[c];
    row.metrics = binary_metrics(r.confusion.one_vs_rest(c));
    std::vector<int> is_c(gold.size());
    std::vector<double> score_c(gold.size());
    std::size_t positives = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      is_c[i] = gold[i] == static_cast<int>(c) ? 1 : 0;
      positives += is_c[i];
      score_c[i] = scores(i, c);
    }
    if (positives > 0 && positives < gold.size()) {
      row.auc = auc_roc(score_c, is_c);
      auc_sum += *row.auc;
      ++auc_count;
    }
    r.accuracy += row.metrics.accuracy;
    r.sensitivity += row.metrics.sensitivity;
    r.specificity += row.metrics.specificity;
    r.precision += row.metrics.precision;
    r.f1 += row.metrics.f1;
    r.per_class.push_back(std::move(row));
  }
  const double inv_k = 1.0 / static_cast<double>(k);
  r.accuracy *= inv_k;
  r.sensitivity *= inv_k;
  r.specificity *= inv_k;
  r.precision *= inv_k;
  r.f1 *= inv_k;
  if (auc_count) r.auc_roc = auc_sum / static_cast<double>(auc_count);
  r.overall_accuracy = ratio(r.confusion.trace(), r.confusion.total());
  return r;
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json cm = nlohmann::json::array();
  for (std::size_t t = 0; t < r.confusion.classes(); ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t p = 0; p < r.confusion.classes(); ++p) row.push_back(r.confusion.at(t, p));
    cm.push_back(row);
  }
  nlohmann::json j = {{"accuracy", r.accuracy},       {"auc_roc", optional_json(r.auc_roc)},
                      {"sensitivity", r.sensitivity}, {"specificity", r.specificity},
                      {"precision", r.precision},     {"f1", r.f1},
                      {"confusion_matrix", cm}};
  if (!r.per_class.empty()) {
    nlohmann::json rows = nlohmann::json::array();
    for (const ClassMetrics& c : r.per_class) {
      nlohmann::json row = metrics_json(c.metrics);
      row["label"] = c.label;
      row["auc_roc"] = optional_json(c.auc);
      rows.push_back(row);
    }
    j["per_class"] = rows;
  }
  if (r.overall_accuracy) j["overall_accuracy"] = *r.overall_accuracy;
  return j;
}

std::string to_csv(const MetricsReport& r, const std::string& method) {
  std::string out =
      "Method,Accuracy (%),AUC-ROC,Sensitivity (%),Specificity (%),Precision (%),F1-score (%)\n";
  for (const ClassMetrics& c : r.per_class)
    out += csv_row(method + " [" + c.label + "]", c.metrics.accuracy, c.auc, c.metrics.sensitivity,
                   c.metrics.specificity, c.metrics.precision, c.metrics.f1);
  out += csv_row(r.per_class.empty() ? method : method + " [macro]", r.accuracy, r.auc_roc,
                 r.sensitivity, r.specificity, r.precision, r.f1);
  return out;
}

std::vector<LabelErrorRate> stage_error_rates(std::span<const int> gold,
                                              std::span<const int> predicted,
                                              std::span<const std::string> labels) {
  if (gold.empty()) throw_data("stage_error_rates: no cases");
  const ConfusionMatrix cm = confusion(gold, predicted, labels.size());
  std::vector<LabelErrorRate> out;
  for (std::size_t l = 0; l < labels.size(); ++l) {
    std::size_t predicted_l = 0, gold_l = 0;
    for (std::size_t o = 0; o < labels.size(); ++o) {
      predicted_l += cm.at(o, l);
      gold_l += cm.at(l, o);
    }
    const std::size_t hit = cm.at(l, l);
    LabelErrorRate row{labels[l], std::nullopt, std::nullopt};
    if (predicted_l) row.fp_percent = 100.0 * ratio(predicted_l - hit, predicted_l);
    if (gold_l) row.fn_percent = 100.0 * ratio(gold_l - hit, gold_l);
    out.push_back(std::move(row));
  }
  return out;
}

double top1_incorrect_rate(std::span<const RetrievalResult> results) {
  if (results.empty()) throw_data("top1_incorrect_rate: no queries");
  std::size_t wrong = 0;
  for (const RetrievalResult& r : results) {
    if (r.top_k.empty()) throw_data("top1_incorrect_rate: query '" + r.query_id + "' has no matches");
    if (r.top_k.front().type != r.gold) ++wrong;
  }
  return 100.0 * ratio(wrong, results.size());
}

nlohmann::json to_json(const ErrorAnalysis& a) {
  nlohmann::json stages = nlohmann::json::array();
  for (const StageErrors& s : a.stages) {
    nlohmann::json rows = nlohmann::json::array();
    for (const LabelErrorRate& r : s.rows)
      rows.push_back({{"label", r.label},
                      {"fp_percent", optional_json(r.fp_percent)},
                      {"fn_percent", optional_json(r.fn_percent)}});
    stages.push_back({{"stage", s.stage}, {"rows", rows}});
  }
  return {{"stages", stages},
          {"reference_retrieval_top1_incorrect_percent",
           optional_json(a.retrieval_top1_incorrect_percent)}};
}

}  // namespace evalign
