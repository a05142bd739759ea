#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "histofuse/classify.hpp"

namespace histofuse {

/// Fraction of equal entries. Throws InputError for empty or unequal input.
double accuracy(std::span<const int> predicted, std::span<const int> truth);

/// Percentage with two decimals: 0.96012 -> "96.01".
std::string format_percent(double fraction);

/// counts[t][p]: rows are true classes, columns predictions.
struct ConfusionMatrix {
  int n_classes = 0;
  std::vector<std::vector<std::size_t>> counts;

  std::size_t total() const;
  std::size_t trace() const;
};

ConfusionMatrix confusion_matrix(std::span<const int> predicted, std::span<const int> truth,
                                 int n_classes);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  bool operator==(const RocPoint&) const = default;
};

/// Threshold sweep over descending distinct scores; equal scores move
/// together, giving diagonal segments on ties. Collinear interior points are
/// dropped. Starts at (0,0), ends at (1,1). `positive` is nonzero for the
/// positive class. Throws InputError unless both classes are present.
std::vector<RocPoint> roc_points(std::span<const double> scores, std::span<const int> positive);

/// Mann-Whitney AUC: (#(pos > neg) + 0.5 #(pos = neg)) / (n_pos n_neg),
/// computed from mid-ranks.
double auc(std::span<const double> scores, std::span<const int> positive);

/// Trapezoidal area under a ROC polyline.
double trapezoid_area(std::span<const RocPoint> roc);

struct EvalReport {
  double accuracy = 0.0;
  ConfusionMatrix confusion;
  std::vector<std::vector<RocPoint>> roc;         // empty when a class is absent
  std::vector<std::optional<double>> auc_per_class;
  double auc_macro = 0.0;                          // mean over present classes
};

/// One-vs-rest evaluation with score column c used for class c.
EvalReport evaluate_scores(const ScoreMatrix& scores, std::span<const int> truth);
EvalReport evaluate(const TrainedModel& model, const FeatureMatrix& matrix);

struct ReportRow {
  std::string model;
  std::string feature_kind;
  std::optional<double> snr_db;
  double auc = 0.0;       // fraction
  double accuracy = 0.0;  // fraction
};

/// model,feature_kind,snr_db,auc_pct,accuracy_pct
std::string report_csv(std::span<const ReportRow> rows);
void write_report_csv(const std::filesystem::path& path, std::span<const ReportRow> rows);

/// fpr,tpr
void write_roc_csv(const std::filesystem::path& path, std::span<const RocPoint> roc);
/// Standalone SVG with axes, diagonal and the ROC polyline.
std::string roc_svg(std::span<const RocPoint> roc, const std::string& title);
void write_roc_svg(const std::filesystem::path& path, std::span<const RocPoint> roc,
                   const std::string& title);

}  // namespace histofuse
