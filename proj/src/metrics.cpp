#include "autolabel/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <tuple>

#include <fmt/format.h>

#include "autolabel/error.hpp"
#include "autolabel/text.hpp"

namespace autolabel {

bool ranks_before(const Detection& a, const Detection& b) {
  if (a.confidence() != b.confidence()) return a.confidence() > b.confidence();
  const auto& p = a.box();
  const auto& q = b.box();
  return std::make_tuple(p.x_min(), p.y_min(), p.x_max(), p.y_max(), a.class_id()) <
         std::make_tuple(q.x_min(), q.y_min(), q.x_max(), q.y_max(), b.class_id());
}

namespace {

void check_threshold(double t, const char* what) {
  if (!(t >= 0.0 && t <= 1.0)) throw ValidationError(std::string(what) + " must lie in [0, 1]");
}

const std::vector<Detection> kNoDetections;
const std::vector<Instance> kNoInstances;

std::set<std::string, std::less<>> image_keys(const DetectionMap& d, const GroundTruthMap& g) {
  std::set<std::string, std::less<>> keys;
  for (const auto& [k, _] : d) keys.insert(k);
  for (const auto& [k, _] : g) keys.insert(k);
  return keys;
}

Rate mean_defined(std::span<const Rate> values) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& v : values) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

}  // namespace

// ---------------------------------------------------------------------------
// Matching

ClassCounts MatchResult::total() const {
  ClassCounts t;
  for (const auto& c : per_class) {
    t.tp += c.tp;
    t.fp += c.fp;
    t.fn += c.fn;
  }
  return t;
}

ImageMatch match_image(std::span<const Detection> detections,
                       std::span<const Instance> ground_truth, double iou_threshold,
                       double confidence_threshold) {
  check_threshold(iou_threshold, "IoU threshold");
  check_threshold(confidence_threshold, "confidence threshold");
  ImageMatch out;
  for (const auto& d : detections) {
    if (d.confidence() >= confidence_threshold) out.detections.push_back({d, std::nullopt, 0.0});
  }
  std::sort(out.detections.begin(), out.detections.end(),
            [](const MatchedDetection& a, const MatchedDetection& b) {
              return ranks_before(a.detection, b.detection);
            });
  out.gt_matched.assign(ground_truth.size(), false);

  for (auto& md : out.detections) {
    std::optional<std::size_t> best;
    double best_iou = -1.0;
    for (std::size_t j = 0; j < ground_truth.size(); ++j) {
      if (out.gt_matched[j] || ground_truth[j].class_id != md.detection.class_id()) continue;
      const double v = iou(md.detection.box(), ground_truth[j].box);
      if (v >= iou_threshold && v > best_iou) {
        best = j;
        best_iou = v;
      }
    }
    if (best) {
      out.gt_matched[*best] = true;
      md.gt_index = best;
      md.iou = best_iou;
    }
  }

  std::vector<bool> taken = out.gt_matched;
  for (std::size_t i = 0; i < out.detections.size(); ++i) {
    const auto& md = out.detections[i];
    if (md.gt_index) continue;
    std::optional<std::size_t> best;
    double best_iou = -1.0;
    for (std::size_t j = 0; j < ground_truth.size(); ++j) {
      if (taken[j] || ground_truth[j].class_id == md.detection.class_id()) continue;
      const double v = iou(md.detection.box(), ground_truth[j].box);
      if (v >= iou_threshold && v > best_iou) {
        best = j;
        best_iou = v;
      }
    }
    if (best) {
      taken[*best] = true;
      out.cross_class.push_back({i, *best, ground_truth[*best].class_id, md.detection.class_id()});
    }
  }
  return out;
}

MatchResult match(const DetectionMap& detections, const GroundTruthMap& ground_truth,
                  std::size_t num_classes, double iou_threshold, double confidence_threshold) {
  MatchResult result;
  result.iou_threshold = iou_threshold;
  result.confidence_threshold = confidence_threshold;
  result.per_class.assign(num_classes, {});
  const auto check = [num_classes](int c) {
    if (c < 0 || static_cast<std::size_t>(c) >= num_classes) {
      throw ValidationError(fmt::format("class id {} outside table of {}", c, num_classes));
    }
  };
  for (const auto& key : image_keys(detections, ground_truth)) {
    const auto di = detections.find(key);
    const auto gi = ground_truth.find(key);
    const auto& dets = di != detections.end() ? di->second : kNoDetections;
    const auto& gts = gi != ground_truth.end() ? gi->second : kNoInstances;
    ImageMatch m = match_image(dets, gts, iou_threshold, confidence_threshold);
    for (const auto& md : m.detections) {
      check(md.detection.class_id());
      auto& c = result.per_class[static_cast<std::size_t>(md.detection.class_id())];
      (md.gt_index ? c.tp : c.fp) += 1;
    }
    for (std::size_t j = 0; j < gts.size(); ++j) {
      check(gts[j].class_id);
      if (!m.gt_matched[j]) result.per_class[static_cast<std::size_t>(gts[j].class_id)].fn += 1;
    }
    result.images.emplace(key, std::move(m));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Scalar metrics

PrecisionRecallF1 precision_recall_f1(std::size_t tp, std::size_t fp, std::size_t fn) {
  PrecisionRecallF1 out;
  if (tp + fp > 0) out.precision = double(tp) / double(tp + fp);
  if (tp + fn > 0) out.recall = double(tp) / double(tp + fn);
  if (out.precision && out.recall && *out.precision + *out.recall > 0.0) {
    out.f1 = 2.0 * *out.precision * *out.recall / (*out.precision + *out.recall);
  }
  return out;
}

Rate false_negative_rate(std::size_t tp, std::size_t fn) {
  if (tp + fn == 0) return std::nullopt;
  return double(fn) / double(fn + tp);
}

bool recall_fnr_consistent(double recall_pct, double fnr_pct, double tolerance_pp) {
  if (tolerance_pp < 0) throw ValidationError("tolerance must be non-negative");
  // Inputs are short decimals; the slack absorbs their binary representation.
  return std::fabs(recall_pct + fnr_pct - 100.0) <= tolerance_pp + 1e-9;
}

bool rmse_mse_consistent(double mse, int mse_decimals, double rmse, int rmse_decimals) {
  if (mse < 0 || rmse < 0 || mse_decimals < 0 || rmse_decimals < 0) {
    throw ValidationError("rmse/mse check needs non-negative values and decimals");
  }
  const double hm = 0.5 * std::pow(10.0, -mse_decimals);
  const double hr = 0.5 * std::pow(10.0, -rmse_decimals);
  const double lo = std::sqrt(std::max(0.0, mse - hm)), hi = std::sqrt(mse + hm);
  return lo <= rmse + hr + 1e-12 && rmse - hr <= hi + 1e-12;
}

CountErrors count_errors(std::span<const double> truth, std::span<const double> predicted) {
  if (truth.empty()) throw ValidationError("count errors need at least one sample");
  if (truth.size() != predicted.size()) {
    throw ValidationError("true and predicted count sequences differ in length");
  }
  double abs_sum = 0.0, sq_sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double e = truth[i] - predicted[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
  }
  const double n = static_cast<double>(truth.size());
  CountErrors out;
  out.mae = abs_sum / n;
  out.mse = sq_sum / n;
  out.rmse = std::sqrt(out.mse);
  return out;
}

Rate average_precision(const DetectionMap& detections, const GroundTruthMap& ground_truth,
                       int class_id, double iou_threshold) {
  check_threshold(iou_threshold, "IoU threshold");
  std::size_t positives = 0;
  for (const auto& [_, gts] : ground_truth) {
    positives += static_cast<std::size_t>(std::count_if(
        gts.begin(), gts.end(), [&](const Instance& g) { return g.class_id == class_id; }));
  }
  if (positives == 0) return std::nullopt;

  struct Ranked {
    const std::string* image;
    const Detection* det;
  };
  std::vector<Ranked> ranked;
  for (const auto& [id, dets] : detections) {
    for (const auto& d : dets) {
      if (d.class_id() == class_id) ranked.push_back({&id, &d});
    }
  }
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.det->confidence() != b.det->confidence()) {
      return a.det->confidence() > b.det->confidence();
    }
    if (*a.image != *b.image) return *a.image < *b.image;
    return ranks_before(*a.det, *b.det);
  });

  std::map<std::string_view, std::vector<bool>> used;
  std::vector<double> recall, precision;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& r = ranked[i];
    const auto gi = ground_truth.find(*r.image);
    bool hit = false;
    if (gi != ground_truth.end()) {
      auto& flags = used[*r.image];
      flags.resize(gi->second.size(), false);
      std::optional<std::size_t> best;
      double best_iou = -1.0;
      for (std::size_t j = 0; j < gi->second.size(); ++j) {
        const auto& g = gi->second[j];
        if (flags[j] || g.class_id != class_id) continue;
        const double v = iou(r.det->box(), g.box);
        if (v >= iou_threshold && v > best_iou) {
          best = j;
          best_iou = v;
        }
      }
      if (best) {
        flags[*best] = true;
        hit = true;
      }
    }
    (hit ? tp : fp) += 1;
    // Only cut between distinct confidences: ties form one operating point.
    const bool group_end = i + 1 == ranked.size() ||
                           ranked[i + 1].det->confidence() != r.det->confidence();
    if (group_end) {
      recall.push_back(double(tp) / double(positives));
      precision.push_back(double(tp) / double(tp + fp));
    }
  }

  for (std::size_t k = precision.size(); k-- > 1;) {
    precision[k - 1] = std::max(precision[k - 1], precision[k]);
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t k = 0; k < recall.size(); ++k) {
    ap += (recall[k] - prev_recall) * precision[k];
    prev_recall = recall[k];
  }
  return ap;
}

std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50 + 5 * i) / 100.0);
  return t;
}

MeanAveragePrecision mean_average_precision(const DetectionMap& detections,
                                            const GroundTruthMap& ground_truth,
                                            std::size_t num_classes) {
  MeanAveragePrecision out;
  const auto thresholds = coco_iou_thresholds();
  for (std::size_t c = 0; c < num_classes; ++c) {
    const int cls = static_cast<int>(c);
    std::vector<Rate> per_threshold;
    for (const double t : thresholds) {
      per_threshold.push_back(average_precision(detections, ground_truth, cls, t));
    }
    out.ap50.push_back(per_threshold.front());
    out.ap50_95.push_back(mean_defined(per_threshold));
    if (!per_threshold.front()) {
      out.warnings.push_back(
          fmt::format("class {} has no ground truth; AP undefined and excluded from mAP", c));
    }
  }
  out.map50 = mean_defined(out.ap50);
  out.map50_95 = mean_defined(out.ap50_95);
  return out;
}

Eigen::MatrixXi confusion_matrix(const MatchResult& result, std::size_t num_classes) {
  const auto n = static_cast<Eigen::Index>(num_classes);
  Eigen::MatrixXi m = Eigen::MatrixXi::Zero(n + 1, n + 1);
  for (std::size_t c = 0; c < num_classes && c < result.per_class.size(); ++c) {
    const auto i = static_cast<Eigen::Index>(c);
    m(i, i) = static_cast<int>(result.per_class[c].tp);
    m(i, n) = static_cast<int>(result.per_class[c].fn);
    m(n, i) = static_cast<int>(result.per_class[c].fp);
  }
  for (const auto& [_, im] : result.images) {
    for (const auto& x : im.cross_class) {
      m(x.true_class, x.predicted_class) += 1;
      m(x.true_class, n) -= 1;
      m(n, x.predicted_class) -= 1;
    }
  }
  return m;
}

OutlierSplit outlier_filter(std::span<const std::pair<std::string, double>> counts) {
  if (counts.size() < 2) throw ValidationError("outlier filter needs at least two images");
  OutlierSplit out;
  const double n = static_cast<double>(counts.size());
  for (const auto& [_, c] : counts) out.mean += c;
  out.mean /= n;
  double ss = 0.0;
  for (const auto& [_, c] : counts) ss += (c - out.mean) * (c - out.mean);
  out.stddev = std::sqrt(ss / (n - 1.0));
  out.lower = out.mean - 2.0 * out.stddev;
  out.upper = out.mean + 2.0 * out.stddev;
  for (const auto& [id, c] : counts) {
    (c < out.lower || c > out.upper ? out.flagged : out.kept).push_back(id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

bool MetricsReport::operator==(const MetricsReport& o) const {
  return per_class == o.per_class && overall == o.overall && images == o.images &&
         iou_threshold == o.iou_threshold && confidence_threshold == o.confidence_threshold &&
         notes == o.notes && confusion.rows() == o.confusion.rows() &&
         confusion.cols() == o.confusion.cols() && confusion == o.confusion;
}

MetricsReport evaluate(const DetectionMap& detections, const GroundTruthMap& ground_truth,
                       const ClassTable& classes, EvalOptions options) {
  const std::size_t nc = classes.size();
  const MatchResult m =
      match(detections, ground_truth, nc, options.iou_threshold, options.confidence_threshold);
  const MeanAveragePrecision ap = mean_average_precision(detections, ground_truth, nc);

  MetricsReport report;
  report.images = m.images.size();
  report.iou_threshold = options.iou_threshold;
  report.confidence_threshold = options.confidence_threshold;
  report.confusion = confusion_matrix(m, nc);
  report.notes = ap.warnings;

  // Per-image counts by class, retained detections only.
  std::vector<std::vector<double>> truth_counts(nc), pred_counts(nc);
  for (const auto& [id, im] : m.images) {
    std::vector<double> t(nc, 0.0), p(nc, 0.0);
    if (const auto gi = ground_truth.find(id); gi != ground_truth.end()) {
      for (const auto& g : gi->second) t[static_cast<std::size_t>(g.class_id)] += 1.0;
    }
    for (const auto& md : im.detections) p[static_cast<std::size_t>(md.detection.class_id())] += 1.0;
    for (std::size_t c = 0; c < nc; ++c) {
      truth_counts[c].push_back(t[c]);
      pred_counts[c].push_back(p[c]);
    }
  }

  for (std::size_t c = 0; c < nc; ++c) {
    ClassMetrics cm;
    cm.name = classes.name(static_cast<int>(c));
    const auto& k = m.per_class[c];
    cm.tp = k.tp;
    cm.fp = k.fp;
    cm.fn = k.fn;
    cm.ground_truth = k.tp + k.fn;
    const auto prf = precision_recall_f1(k.tp, k.fp, k.fn);
    cm.precision = prf.precision;
    cm.recall = prf.recall;
    cm.f1 = prf.f1;
    cm.fnr = false_negative_rate(k.tp, k.fn);
    cm.ap50 = ap.ap50[c];
    cm.map50_95 = ap.ap50_95[c];
    if (!truth_counts[c].empty()) {
      const auto e = count_errors(truth_counts[c], pred_counts[c]);
      cm.mae = e.mae;
      cm.mse = e.mse;
      cm.rmse = e.rmse;
    }
    report.per_class.push_back(std::move(cm));
  }

  ClassMetrics& o = report.overall;
  o.name = "overall";
  const auto gather = [&](Rate ClassMetrics::*field, const char* label) {
    std::vector<Rate> values;
    for (const auto& cm : report.per_class) {
      values.push_back(cm.*field);
      if (!(cm.*field)) {
        report.notes.push_back(
            fmt::format("{} undefined for class {}; excluded from overall", label, cm.name));
      }
    }
    return mean_defined(values);
  };
  for (const auto& cm : report.per_class) {
    o.ground_truth += cm.ground_truth;
    o.tp += cm.tp;
    o.fp += cm.fp;
    o.fn += cm.fn;
  }
  o.precision = gather(&ClassMetrics::precision, "precision");
  o.recall = gather(&ClassMetrics::recall, "recall");
  o.f1 = gather(&ClassMetrics::f1, "f1");
  o.fnr = gather(&ClassMetrics::fnr, "fnr");
  o.ap50 = ap.map50;
  o.map50_95 = ap.map50_95;
  o.mae = gather(&ClassMetrics::mae, "mae");
  o.mse = gather(&ClassMetrics::mse, "mse");
  if (o.mse) o.rmse = std::sqrt(*o.mse);
  return report;
}

MetricsReport evaluate_subset(const Dataset& ds, const DetectionMap& detections, Subset subset,
                              EvalOptions options) {
  GroundTruthMap truth;
  DetectionMap dets;
  for (const auto* rec : ds.records(subset)) {
    truth[rec->image_id] = rec->instances;
    const auto it = detections.find(rec->image_id);
    dets[rec->image_id] = it == detections.end() ? std::vector<Detection>{} : it->second;
  }
  return evaluate(dets, truth, ds.classes, options);
}

std::string format_rate(const Rate& r) {
  return r ? text::format_double(*r) : std::string("undefined");
}

namespace {

std::string pct(const Rate& r) { return r ? fmt::format("{:.1f}", *r * 100.0) : "undefined"; }
std::string num(const Rate& r) { return r ? fmt::format("{:.2f}", *r) : "undefined"; }

void append_row(std::string& out, const ClassMetrics& c) {
  out += fmt::format("{:<12}{:>7}{:>7}{:>7}{:>7}{:>10}{:>10}{:>10}{:>10}{:>11}{:>10}{:>10}{:>10}{:>10}\n",
                     c.name, c.ground_truth, c.tp, c.fp, c.fn, num(c.mae), num(c.mse), num(c.rmse),
                     pct(c.precision), pct(c.recall), pct(c.f1), pct(c.ap50),
                     pct(c.map50_95), pct(c.fnr));
}

void append_kv(std::string& out, const std::string& prefix, const ClassMetrics& c) {
  out += fmt::format("{}.ground_truth={}\n", prefix, c.ground_truth);
  out += fmt::format("{}.tp={}\n{}.fp={}\n{}.fn={}\n", prefix, c.tp, prefix, c.fp, prefix, c.fn);
  const std::pair<const char*, const Rate*> rates[] = {
      {"precision", &c.precision}, {"recall", &c.recall}, {"f1", &c.f1},
      {"ap50", &c.ap50},           {"map50_95", &c.map50_95}, {"mae", &c.mae},
      {"mse", &c.mse},             {"rmse", &c.rmse},     {"fnr", &c.fnr}};
  for (const auto& [key, value] : rates) {
    out += fmt::format("{}.{}={}\n", prefix, key, format_rate(*value));
  }
}

nlohmann::json rate_json(const Rate& r) {
  return r ? nlohmann::json(*r) : nlohmann::json("undefined");
}

Rate rate_from(const nlohmann::json& j) {
  if (j.is_string()) return std::nullopt;
  return j.get<double>();
}

nlohmann::json class_json(const ClassMetrics& c) {
  return {{"name", c.name},         {"ground_truth", c.ground_truth},
          {"tp", c.tp},             {"fp", c.fp},
          {"fn", c.fn},             {"precision", rate_json(c.precision)},
          {"recall", rate_json(c.recall)}, {"f1", rate_json(c.f1)},
          {"ap50", rate_json(c.ap50)},     {"map50_95", rate_json(c.map50_95)},
          {"mae", rate_json(c.mae)},       {"mse", rate_json(c.mse)},
          {"rmse", rate_json(c.rmse)},     {"fnr", rate_json(c.fnr)}};
}

ClassMetrics class_from(const nlohmann::json& j) {
  ClassMetrics c;
  c.name = j.at("name").get<std::string>();
  c.ground_truth = j.at("ground_truth").get<std::size_t>();
  c.tp = j.at("tp").get<std::size_t>();
  c.fp = j.at("fp").get<std::size_t>();
  c.fn = j.at("fn").get<std::size_t>();
  c.precision = rate_from(j.at("precision"));
  c.recall = rate_from(j.at("recall"));
  c.f1 = rate_from(j.at("f1"));
  c.ap50 = rate_from(j.at("ap50"));
  c.map50_95 = rate_from(j.at("map50_95"));
  c.mae = rate_from(j.at("mae"));
  c.mse = rate_from(j.at("mse"));
  c.rmse = rate_from(j.at("rmse"));
  c.fnr = rate_from(j.at("fnr"));
  return c;
}

}  // namespace

std::string format_report_text(const MetricsReport& r) {
  std::string out = fmt::format("Evaluation over {} images (IoU {:.2f}, confidence {:.3f})\n",
                                r.images, r.iou_threshold, r.confidence_threshold);
  out += fmt::format("{:<12}{:>7}{:>7}{:>7}{:>7}{:>10}{:>10}{:>10}{:>10}{:>11}{:>10}{:>10}{:>10}{:>10}\n",
                     "class", "GT", "TP", "FP", "FN", "MAE", "MSE", "RMSE", "P(%)", "R(%)",
                     "F1(%)", "AP50(%)", "AP50-95", "FNR(%)");
  for (const auto& c : r.per_class) append_row(out, c);
  append_row(out, r.overall);
  for (const auto& n : r.notes) out += "note: " + n + "\n";
  return out;
}

std::string format_report_kv(const MetricsReport& r) {
  std::string out;
  out += fmt::format("images={}\n", r.images);
  out += fmt::format("iou_threshold={}\n", text::format_double(r.iou_threshold));
  out += fmt::format("confidence_threshold={}\n", text::format_double(r.confidence_threshold));
  append_kv(out, "overall", r.overall);
  for (const auto& c : r.per_class) append_kv(out, "class." + c.name, c);
  const auto n = r.confusion.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const std::string ti = i + 1 == n ? "background" : r.per_class[static_cast<std::size_t>(i)].name;
      const std::string pj = j + 1 == n ? "background" : r.per_class[static_cast<std::size_t>(j)].name;
      out += fmt::format("confusion.{}.{}={}\n", ti, pj, r.confusion(i, j));
    }
  }
  for (std::size_t i = 0; i < r.notes.size(); ++i) {
    out += fmt::format("note.{}={}\n", i, r.notes[i]);
  }
  return out;
}

std::string format_confusion_tsv(const MetricsReport& r, const ClassTable& classes) {
  std::vector<std::string> names = classes.names();
  names.emplace_back("background");
  std::string out = "true\\predicted";
  for (const auto& n : names) out += "\t" + n;
  out += "\n";
  for (Eigen::Index i = 0; i < r.confusion.rows(); ++i) {
    out += names[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < r.confusion.cols(); ++j) {
      out += fmt::format("\t{}", r.confusion(i, j));
    }
    out += "\n";
  }
  return out;
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
  auto classes = nlohmann::json::array();
  for (const auto& c : r.per_class) classes.push_back(class_json(c));
  auto grid = nlohmann::json::array();
  for (Eigen::Index i = 0; i < r.confusion.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (Eigen::Index k = 0; k < r.confusion.cols(); ++k) row.push_back(r.confusion(i, k));
    grid.push_back(row);
  }
  j = {{"images", r.images},
       {"iou_threshold", r.iou_threshold},
       {"confidence_threshold", r.confidence_threshold},
       {"per_class", classes},
       {"overall", class_json(r.overall)},
       {"confusion", grid},
       {"notes", r.notes}};
}

void from_json(const nlohmann::json& j, MetricsReport& r) {
  r = MetricsReport{};
  r.images = j.at("images").get<std::size_t>();
  r.iou_threshold = j.at("iou_threshold").get<double>();
  r.confidence_threshold = j.at("confidence_threshold").get<double>();
  for (const auto& c : j.at("per_class")) r.per_class.push_back(class_from(c));
  r.overall = class_from(j.at("overall"));
  const auto& grid = j.at("confusion");
  const auto n = static_cast<Eigen::Index>(grid.size());
  r.confusion = Eigen::MatrixXi::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < n; ++k) {
      r.confusion(i, k) = grid.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(k)).get<int>();
    }
  }
  r.notes = j.at("notes").get<std::vector<std::string>>();
}

}  // namespace autolabel
