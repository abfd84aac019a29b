#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "autolabel/dataset.hpp"
#include "autolabel/detector.hpp"

namespace autolabel {

/// A rate in [0, 1], or nullopt when its denominator is zero. Serialized as
/// the token `undefined`.
using Rate = std::optional<double>;

/// Canonical detection ranking: confidence descending, then box corners and
/// class ascending. Used everywhere ranking matters so that results do not
/// depend on input order.
bool ranks_before(const Detection& a, const Detection& b);

// ---------------------------------------------------------------------------
// Matching

struct MatchedDetection {
  Detection detection;
  std::optional<std::size_t> gt_index;  // same-class ground truth, if TP
  double iou = 0.0;
};

/// A detection that found no same-class partner but overlaps a still
/// unmatched ground-truth instance of another class.
struct CrossClassMatch {
  std::size_t detection;  // index into ImageMatch::detections
  std::size_t gt_index;
  int true_class;
  int predicted_class;
};

struct ImageMatch {
  std::vector<MatchedDetection> detections;  // retained detections, ranked
  std::vector<bool> gt_matched;
  std::vector<CrossClassMatch> cross_class;
};

struct ClassCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  bool operator==(const ClassCounts&) const = default;
};

struct MatchResult {
  std::map<std::string, ImageMatch, std::less<>> images;
  std::vector<ClassCounts> per_class;
  double iou_threshold = 0.5;
  double confidence_threshold = 0.0;

  ClassCounts total() const;
};

/// Drops detections below the confidence threshold, ranks the rest, and
/// assigns each to the unmatched same-class instance of highest IoU at or
/// above the IoU threshold (one-to-one).
ImageMatch match_image(std::span<const Detection> detections,
                       std::span<const Instance> ground_truth, double iou_threshold,
                       double confidence_threshold);

/// Matches every image present in either map. Class ids must be below
/// num_classes.
MatchResult match(const DetectionMap& detections, const GroundTruthMap& ground_truth,
                  std::size_t num_classes, double iou_threshold, double confidence_threshold);

// ---------------------------------------------------------------------------
// Scalar metrics

struct PrecisionRecallF1 {
  Rate precision;
  Rate recall;
  Rate f1;
};

PrecisionRecallF1 precision_recall_f1(std::size_t tp, std::size_t fp, std::size_t fn);

/// FN / (FN + TP); undefined when both are zero.
Rate false_negative_rate(std::size_t tp, std::size_t fn);

/// Checks published percentages: recall + FNR must be 100 within
/// `tolerance_pp` percentage points.
bool recall_fnr_consistent(double recall_pct, double fnr_pct, double tolerance_pp = 0.1);

/// Checks a published RMSE against a published MSE, each read as a value
/// rounded to the given number of decimals: true when some MSE that rounds
/// to `mse` has a square root that rounds to `rmse`.
bool rmse_mse_consistent(double mse, int mse_decimals, double rmse, int rmse_decimals);

struct CountErrors {
  double mae = 0.0;
  double mse = 0.0;
  double rmse = 0.0;
};

/// Mean absolute, mean squared, and root mean squared difference between
/// per-image true and predicted counts. Sequences must be non-empty and of
/// equal length.
CountErrors count_errors(std::span<const double> truth, std::span<const double> predicted);

/// All-point interpolated AP for one class: ranks every detection of the
/// class, evaluates precision/recall at each distinct confidence, applies
/// the monotone precision envelope, and integrates over recall. Undefined
/// when the class has no ground truth.
Rate average_precision(const DetectionMap& detections, const GroundTruthMap& ground_truth,
                       int class_id, double iou_threshold);

struct MeanAveragePrecision {
  std::vector<Rate> ap50;      // per class
  std::vector<Rate> ap50_95;   // per class, averaged over IoU 0.50:0.05:0.95
  Rate map50;
  Rate map50_95;
  std::vector<std::string> warnings;
};

/// The ten COCO-style IoU thresholds 0.50, 0.55, ..., 0.95.
std::vector<double> coco_iou_thresholds();

MeanAveragePrecision mean_average_precision(const DetectionMap& detections,
                                            const GroundTruthMap& ground_truth,
                                            std::size_t num_classes);

/// Rows are true classes, columns predicted classes; the last row/column is
/// background. Cross-class matches move mass out of the background cells, so
/// row c sums to the ground-truth count of c and column c to the number of
/// retained detections of c.
Eigen::MatrixXi confusion_matrix(const MatchResult& result, std::size_t num_classes);

struct OutlierSplit {
  std::vector<std::string> kept;
  std::vector<std::string> flagged;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
  double lower = 0.0;
  double upper = 0.0;
};

/// Flags images whose count lies outside mean +/- 2 sample standard
/// deviations. Needs at least two images.
OutlierSplit outlier_filter(std::span<const std::pair<std::string, double>> counts);

// ---------------------------------------------------------------------------
// Reports

struct ClassMetrics {
  std::string name;
  std::size_t ground_truth = 0;
  std::size_t tp = 0, fp = 0, fn = 0;
  Rate precision, recall, f1, ap50, map50_95, mae, mse, rmse, fnr;

  bool operator==(const ClassMetrics&) const = default;
};

struct MetricsReport {
  std::vector<ClassMetrics> per_class;
  /// Counts are summed; rates are the mean of the defined per-class values
  /// (rmse is sqrt of the overall mse). Exclusions are listed in `notes`.
  ClassMetrics overall;
  Eigen::MatrixXi confusion;
  std::size_t images = 0;
  double iou_threshold = 0.5;
  double confidence_threshold = 0.5;
  std::vector<std::string> notes;

  bool operator==(const MetricsReport& o) const;
};

struct EvalOptions {
  double iou_threshold = 0.5;
  double confidence_threshold = 0.5;
};

MetricsReport evaluate(const DetectionMap& detections, const GroundTruthMap& ground_truth,
                       const ClassTable& classes, EvalOptions options = {});

/// Evaluates detections against the instances of one subset of a dataset.
/// Detections for images outside the subset are ignored.
MetricsReport evaluate_subset(const Dataset& ds, const DetectionMap& detections, Subset subset,
                              EvalOptions options = {});

/// Human-readable table; rates shown as percentages with one decimal.
std::string format_report_text(const MetricsReport& report);
/// `key=value` lines; rates in [0, 1] printed round-trip exact.
std::string format_report_kv(const MetricsReport& report);
/// Tab-separated grid with a header row and column.
std::string format_confusion_tsv(const MetricsReport& report, const ClassTable& classes);

void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);

std::string format_rate(const Rate& r);

}  // namespace autolabel
