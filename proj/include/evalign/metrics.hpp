#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "evalign/linalg.hpp"
#include "evalign/retrieval.hpp"

namespace evalign {

/// Row = true label, column = predicted label.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes) : k_(classes), counts_(classes * classes, 0) {}

  std::size_t classes() const { return k_; }
  std::size_t& at(std::size_t truth, std::size_t predicted) { return counts_[truth * k_ + predicted]; }
  std::size_t at(std::size_t truth, std::size_t predicted) const {
    return counts_[truth * k_ + predicted];
  }
  std::size_t total() const;
  std::size_t trace() const;

  /// 2x2 view of class c against the rest (index 1 = c).
  ConfusionMatrix one_vs_rest(std::size_t c) const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t k_ = 0;
  std::vector<std::size_t> counts_;
};

ConfusionMatrix confusion(std::span<const int> gold, std::span<const int> predicted,
                          std::size_t classes);

struct BinaryMetrics {
  double accuracy = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
};

/// Class 1 is positive. Zero denominators yield 0 for that metric.
BinaryMetrics binary_metrics(const ConfusionMatrix& cm);

/// Mann-Whitney statistic: (concordant + 0.5 tied) / (n_pos n_neg).
/// Throws Error(data) unless both labels occur.
double auc_roc(std::span<const double> scores, std::span<const int> gold);

struct ClassMetrics {
  std::string label;
  BinaryMetrics metrics;
  std::optional<double> auc;  // undefined when the class is absent (or universal) in gold
};

struct MetricsReport {
  double accuracy = 0.0;
  std::optional<double> auc_roc;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  ConfusionMatrix confusion;
  // Multi-class only: one-vs-rest rows and trace / total.
  std::vector<ClassMetrics> per_class;
  std::optional<double> overall_accuracy;
};

/// Binary report; AUC from continuous scores, omitted when gold is single-class.
MetricsReport binary_report(std::span<const int> gold, std::span<const int> predicted,
                            std::span<const double> scores);

/// One-vs-rest metrics per class and their unweighted mean. `scores` is
/// n x k (score of each class per case). Classes without a defined AUC are
/// left out of the macro AUC.
MetricsReport macro_metrics(std::span<const int> gold, std::span<const int> predicted,
                            const Matrix& scores, std::span<const std::string> labels);

nlohmann::json to_json(const MetricsReport& report);

/// CSV with header Method,Accuracy (%),AUC-ROC,Sensitivity (%),Specificity (%),
/// Precision (%),F1-score (%); one row per class plus the summary row.
std::string to_csv(const MetricsReport& report, const std::string& method);

struct LabelErrorRate {
  std::string label;
  std::optional<double> fp_percent;  // of predicted-L; null when L never predicted
  std::optional<double> fn_percent;  // of gold-L; null when L never occurs
};

std::vector<LabelErrorRate> stage_error_rates(std::span<const int> gold,
                                              std::span<const int> predicted,
                                              std::span<const std::string> labels);

/// Percentage of queries whose first retrieved reference has the wrong type.
double top1_incorrect_rate(std::span<const RetrievalResult> results);

struct StageErrors {
  std::string stage;
  std::vector<LabelErrorRate> rows;
};

struct ErrorAnalysis {
  std::vector<StageErrors> stages;
  std::optional<double> retrieval_top1_incorrect_percent;
};

nlohmann::json to_json(const ErrorAnalysis& analysis);

}  // namespace evalign
