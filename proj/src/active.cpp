#include "autolabel/active.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "autolabel/error.hpp"
#include "autolabel/metrics.hpp"
#include "autolabel/text.hpp"

namespace autolabel {

std::string_view to_string(UncertaintyBasis b) {
  switch (b) {
    case UncertaintyBasis::low_confidence_fraction: return "low_confidence_fraction";
    case UncertaintyBasis::min_confidence: return "min_confidence";
    case UncertaintyBasis::committee_disagreement: return "committee_disagreement";
    case UncertaintyBasis::count_outlier: return "count_outlier";
  }
  return "low_confidence_fraction";
}

namespace {

void check_unit(double v, const char* what) {
  if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(std::string(what) + " must lie in [0, 1]");
}

}  // namespace

std::vector<std::string> alct_flag(const DetectionMap& detections, double threshold) {
  check_unit(threshold, "ALCT threshold");
  std::vector<std::string> out;
  for (const auto& [id, dets] : detections) {
    if (std::any_of(dets.begin(), dets.end(),
                    [&](const Detection& d) { return d.confidence() < threshold; })) {
      out.push_back(id);
    }
  }
  return out;
}

std::vector<UncertaintyScore> rank_uncertain(const DetectionMap& detections, double threshold,
                                             std::size_t budget) {
  check_unit(threshold, "uncertainty threshold");
  std::vector<UncertaintyScore> all;
  all.reserve(detections.size());
  for (const auto& [id, dets] : detections) {
    UncertaintyScore s{id, 1.0, UncertaintyBasis::low_confidence_fraction, 0.0};
    if (!dets.empty()) {
      std::size_t low = 0;
      double lo = 1.0;
      for (const auto& d : dets) {
        if (d.confidence() < threshold) ++low;
        lo = std::min(lo, d.confidence());
      }
      s.score = double(low) / double(dets.size());
      s.min_confidence = lo;
    }
    all.push_back(std::move(s));
  }
  const auto before = [](const UncertaintyScore& a, const UncertaintyScore& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.min_confidence != b.min_confidence) return a.min_confidence < b.min_confidence;
    return a.image_id < b.image_id;
  };
  const std::size_t keep = std::min(budget, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(),
                    before);
  all.resize(keep);
  return all;
}

double pairwise_agreement(std::span<const Detection> reference, std::span<const Detection> other,
                          double iou_threshold) {
  if (reference.empty() && other.empty()) return 1.0;
  std::vector<Instance> truth;
  truth.reserve(reference.size());
  for (const auto& d : reference) truth.emplace_back(d.box(), d.class_id());
  const ImageMatch m = match_image(other, truth, iou_threshold, 0.0);
  const auto tp = static_cast<std::size_t>(std::count_if(
      m.detections.begin(), m.detections.end(),
      [](const MatchedDetection& md) { return md.gt_index.has_value(); }));
  return 2.0 * double(tp) / double(reference.size() + other.size());
}

double qbc_disagreement(std::span<const std::vector<Detection>> committee, double iou_threshold) {
  if (committee.size() < 2) throw ValidationError("a committee needs at least two members");
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < committee.size(); ++i) {
    for (std::size_t j = i + 1; j < committee.size(); ++j) {
      sum += 0.5 * (pairwise_agreement(committee[i], committee[j], iou_threshold) +
                    pairwise_agreement(committee[j], committee[i], iou_threshold));
      ++pairs;
    }
  }
  return 1.0 - sum / double(pairs);
}

void ActiveStrategy::validate() const {
  check_unit(threshold, "strategy threshold");
  check_unit(qbc_iou, "committee IoU threshold");
  check_unit(min_disagreement, "minimum disagreement");
}

std::string_view to_string(ActiveStrategy::Kind k) {
  switch (k) {
    case ActiveStrategy::Kind::none: return "none";
    case ActiveStrategy::Kind::alct: return "alct";
    case ActiveStrategy::Kind::uncertainty: return "uncertainty";
    case ActiveStrategy::Kind::qbc: return "qbc";
  }
  return "none";
}

ActiveStrategy::Kind parse_strategy_kind(std::string_view s) {
  for (auto k : {ActiveStrategy::Kind::none, ActiveStrategy::Kind::alct,
                 ActiveStrategy::Kind::uncertainty, ActiveStrategy::Kind::qbc}) {
    if (to_string(k) == s) return k;
  }
  throw ValidationError(fmt::format("unknown active strategy '{}'", s));
}

void to_json(nlohmann::json& j, const ActiveStrategy& s) {
  j = {{"kind", std::string(to_string(s.kind))},
       {"threshold", s.threshold},
       {"budget", s.budget},
       {"qbc_iou", s.qbc_iou},
       {"min_disagreement", s.min_disagreement}};
}

void from_json(const nlohmann::json& j, ActiveStrategy& s) {
  s = ActiveStrategy{};
  if (j.contains("kind")) s.kind = parse_strategy_kind(j.at("kind").get<std::string>());
  s.threshold = j.value("threshold", s.threshold);
  s.budget = j.value("budget", s.budget);
  s.qbc_iou = j.value("qbc_iou", s.qbc_iou);
  s.min_disagreement = j.value("min_disagreement", s.min_disagreement);
  s.validate();
}

// ---------------------------------------------------------------------------

void CostModel::validate() const {
  const auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!positive(seconds_per_image_manual) || !positive(seconds_per_image_review) ||
      !positive(workday_hours)) {
    throw ValidationError("cost model rates and workday length must be positive");
  }
  if (!std::isfinite(machine_seconds_per_image) || machine_seconds_per_image < 0.0) {
    throw ValidationError("machine seconds per image must be non-negative");
  }
}

void to_json(nlohmann::json& j, const CostModel& c) {
  j = {{"seconds_per_image_manual", c.seconds_per_image_manual},
       {"seconds_per_image_review", c.seconds_per_image_review},
       {"machine_seconds_per_image", c.machine_seconds_per_image},
       {"workday_hours", c.workday_hours}};
}

void from_json(const nlohmann::json& j, CostModel& c) {
  c = CostModel{};
  c.seconds_per_image_manual = j.value("seconds_per_image_manual", c.seconds_per_image_manual);
  c.seconds_per_image_review = j.value("seconds_per_image_review", c.seconds_per_image_review);
  c.machine_seconds_per_image = j.value("machine_seconds_per_image", c.machine_seconds_per_image);
  c.workday_hours = j.value("workday_hours", c.workday_hours);
  c.validate();
}

CostReport annotation_cost(std::size_t n_images, const CostModel& cost, double review_fraction) {
  cost.validate();
  check_unit(review_fraction, "review fraction");
  const double n = static_cast<double>(n_images);
  CostReport r;
  r.images = n_images;
  r.review_fraction = review_fraction;
  r.manual_total_hours = n * cost.seconds_per_image_manual / 3600.0;
  r.hybrid_review_hours = n * review_fraction * cost.seconds_per_image_review / 3600.0;
  r.machine_hours = n * cost.machine_seconds_per_image / 3600.0;
  r.hybrid_total_hours = r.hybrid_review_hours + r.machine_hours;
  const auto days = [&](double hours) {
    return static_cast<long long>(std::ceil(hours / cost.workday_hours - 1e-9));
  };
  r.working_days_manual = days(r.manual_total_hours);
  r.working_days_hybrid = days(r.hybrid_total_hours);
  if (r.manual_total_hours > 0.0) {
    r.savings_fraction = 1.0 - r.hybrid_total_hours / r.manual_total_hours;
  } else {
    r.savings_fraction = 0.0;
    r.savings_defined = false;
  }
  return r;
}

std::string format_cost_report(const CostReport& r) {
  std::string out;
  out += fmt::format("images={}\n", r.images);
  out += fmt::format("review_fraction={}\n", text::format_double(r.review_fraction));
  out += fmt::format("manual_total_hours={:.4f}\n", r.manual_total_hours);
  out += fmt::format("hybrid_review_hours={:.4f}\n", r.hybrid_review_hours);
  out += fmt::format("machine_hours={:.6f}\n", r.machine_hours);
  out += fmt::format("hybrid_total_hours={:.4f}\n", r.hybrid_total_hours);
  out += fmt::format("working_days_manual={}\n", r.working_days_manual);
  out += fmt::format("working_days_hybrid={}\n", r.working_days_hybrid);
  out += fmt::format("savings_fraction={:.4f}\n", r.savings_fraction);
  out += fmt::format("savings_defined={}\n", r.savings_defined ? "true" : "false");
  return out;
}

}  // namespace autolabel
