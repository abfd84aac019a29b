#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "autolabel/detector.hpp"

namespace autolabel {

enum class UncertaintyBasis { low_confidence_fraction, min_confidence, committee_disagreement,
                              count_outlier };

std::string_view to_string(UncertaintyBasis b);

struct UncertaintyScore {
  std::string image_id;
  double score = 0.0;  // higher = more uncertain
  UncertaintyBasis basis = UncertaintyBasis::low_confidence_fraction;
  double min_confidence = 0.0;

  bool operator==(const UncertaintyScore&) const = default;
};

/// Images holding at least one detection with confidence below `threshold`.
/// Returned in id order.
std::vector<std::string> alct_flag(const DetectionMap& detections, double threshold);

/// Score = fraction of an image's detections below `threshold`; an image
/// with no detections scores 1.0 and counts its minimum confidence as 0.
/// Sorted by score descending, then minimum confidence ascending, then id.
/// Returns the first `budget` entries.
std::vector<UncertaintyScore> rank_uncertain(const DetectionMap& detections, double threshold,
                                             std::size_t budget);

/// F1 of greedy class-aware matching with `reference` playing ground truth.
/// Two empty sets agree fully (1.0).
double pairwise_agreement(std::span<const Detection> reference,
                          std::span<const Detection> other, double iou_threshold);

/// 1 - mean pairwise agreement over unordered member pairs. Each pair is
/// scored in both directions and averaged, which makes the result exactly
/// independent of member order even where greedy matching is not.
double qbc_disagreement(std::span<const std::vector<Detection>> committee, double iou_threshold);

/// Which images the loop withholds for human review besides count outliers.
struct ActiveStrategy {
  enum class Kind { none, alct, uncertainty, qbc };

  Kind kind = Kind::alct;
  double threshold = 0.5;        // alct / uncertainty confidence cut
  std::size_t budget = 0;        // uncertainty / qbc; 0 = unlimited
  double qbc_iou = 0.5;
  double min_disagreement = 0.0; // qbc flags images strictly above this

  void validate() const;
  bool operator==(const ActiveStrategy&) const = default;
};

std::string_view to_string(ActiveStrategy::Kind k);
ActiveStrategy::Kind parse_strategy_kind(std::string_view s);

void to_json(nlohmann::json& j, const ActiveStrategy& s);
void from_json(const nlohmann::json& j, ActiveStrategy& s);

// ---------------------------------------------------------------------------
// Annotation cost

struct CostModel {
  double seconds_per_image_manual = 141.66;
  double seconds_per_image_review = 28.65;
  double machine_seconds_per_image = 0.0008;
  double workday_hours = 8.0;

  void validate() const;
  bool operator==(const CostModel&) const = default;
};

void to_json(nlohmann::json& j, const CostModel& c);
void from_json(const nlohmann::json& j, CostModel& c);

struct CostReport {
  std::size_t images = 0;
  double review_fraction = 1.0;
  double manual_total_hours = 0.0;
  double hybrid_review_hours = 0.0;
  double machine_hours = 0.0;
  double hybrid_total_hours = 0.0;
  /// ceil(hours / workday_hours), with a 1e-9 slack so exact multiples do
  /// not round up.
  long long working_days_manual = 0;
  long long working_days_hybrid = 0;
  double savings_fraction = 0.0;
  bool savings_defined = true;  // false when there is nothing to annotate
};

CostReport annotation_cost(std::size_t n_images, const CostModel& cost, double review_fraction);

std::string format_cost_report(const CostReport& r);

}  // namespace autolabel
