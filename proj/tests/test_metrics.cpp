#include <random>

#include "doctest.h"

#include "autolabel/error.hpp"
#include "autolabel/metrics.hpp"
#include "suites.hpp"
#include "support.hpp"

using namespace autolabel;

namespace {

const ClassTable kClasses({"broiler", "hen"});

Instance gt(double x0, double y0, double x1, double y1, int c = 0) {
  return Instance(BoundingBox(x0, y0, x1, y1), c);
}

Detection det(double x0, double y0, double x1, double y1, double conf, int c = 0) {
  return Detection(BoundingBox(x0, y0, x1, y1), c, conf);
}

}  // namespace

TEST_CASE("precision, recall, f1 and their undefined cases") {
  auto r = precision_recall_f1(8, 2, 2);
  CHECK(*r.precision == doctest::Approx(0.8));
  CHECK(*r.recall == doctest::Approx(0.8));
  CHECK(*r.f1 == doctest::Approx(0.8));
  r = precision_recall_f1(0, 0, 5);
  CHECK_FALSE(r.precision);
  CHECK(*r.recall == 0.0);
  CHECK_FALSE(r.f1);
  r = precision_recall_f1(0, 3, 0);
  CHECK(*r.precision == 0.0);
  CHECK_FALSE(r.recall);
  CHECK_FALSE(false_negative_rate(0, 0));
  CHECK(format_rate(std::nullopt) == "undefined");
}

TEST_CASE("fnr is the complement of recall") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> c(0, 500);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t tp = c(rng), fp = c(rng), fn = c(rng);
    const auto r = precision_recall_f1(tp, fp, fn);
    const auto f = false_negative_rate(tp, fn);
    REQUIRE(r.recall.has_value() == f.has_value());
    if (f) CHECK(*f + *r.recall == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("published percentage checks") {
  CHECK(recall_fnr_consistent(99.5, 0.5));
  CHECK(recall_fnr_consistent(99.4, 0.7));
  CHECK_FALSE(recall_fnr_consistent(99.4, 0.4));
  CHECK(recall_fnr_consistent(99.4, 0.4, 0.2));
  CHECK_THROWS_AS(recall_fnr_consistent(50, 50, -1), ValidationError);

  CHECK(rmse_mse_consistent(1.2, 1, 1.09, 2));  // true mse somewhere near 1.19
  CHECK(rmse_mse_consistent(4.0, 0, 2.0, 0));
  CHECK_FALSE(rmse_mse_consistent(1.2, 1, 1.20, 2));
  CHECK_FALSE(rmse_mse_consistent(1.22, 2, 1.09, 2));
}

TEST_CASE("count errors") {
  const std::vector<double> t = {3, 5, 0, 2}, p = {4, 5, 2, 2};
  const auto e = count_errors(t, p);
  CHECK(e.mae == doctest::Approx(0.75));
  CHECK(e.mse == doctest::Approx(1.25));
  CHECK(e.rmse == std::sqrt(e.mse));
  CHECK_THROWS_AS(count_errors(std::vector<double>{}, std::vector<double>{}), ValidationError);
  CHECK_THROWS_AS(count_errors(t, std::vector<double>{1}), ValidationError);
  CHECK(suites::count_errors(300, 3).ok());
}

TEST_CASE("greedy matching takes the highest IoU, one to one") {
  const std::vector<Instance> g = {gt(0, 0, 10, 10), gt(20, 0, 30, 10)};
  const std::vector<Detection> d = {det(1, 0, 11, 10, 0.6), det(0, 0, 10, 10, 0.9),
                                    det(0, 0, 10, 10, 0.8), det(21, 0, 31, 10, 0.3)};
  const auto m = match_image(d, g, 0.5, 0.0);
  REQUIRE(m.detections.size() == 4);
  CHECK(m.detections[0].detection.confidence() == 0.9);
  CHECK(*m.detections[0].gt_index == 0);
  CHECK_FALSE(m.detections[1].gt_index);  // duplicate of a matched box
  CHECK_FALSE(m.detections[2].gt_index);
  CHECK(*m.detections[3].gt_index == 1);

  // Confidence cut removes the last one.
  CHECK(match_image(d, g, 0.5, 0.5).detections.size() == 3);
  // Class matters.
  const std::vector<Detection> other = {det(0, 0, 10, 10, 0.9, 1)};
  const auto mc = match_image(other, g, 0.5, 0.0);
  CHECK_FALSE(mc.detections[0].gt_index);
  CHECK(mc.cross_class.size() == 1);
}

TEST_CASE("matching agrees with exhaustive assignment") {
  const auto r = suites::matching(300, 17);
  CHECK_MESSAGE(r.ok(), r.first_failure);
}

TEST_CASE("matching ignores detection order") {
  std::mt19937_64 rng(3);
  const std::vector<Instance> g = {gt(0, 0, 10, 10), gt(5, 0, 15, 10), gt(40, 40, 60, 60, 1)};
  std::vector<Detection> d = {det(2, 0, 12, 10, 0.5), det(3, 0, 13, 10, 0.5),
                              det(41, 41, 60, 60, 0.7, 1), det(0, 0, 9, 9, 0.5)};
  const auto first = match_image(d, g, 0.3, 0.0);
  for (int i = 0; i < 20; ++i) {
    std::shuffle(d.begin(), d.end(), rng);
    const auto m = match_image(d, g, 0.3, 0.0);
    CHECK(m.gt_matched == first.gt_matched);
    for (std::size_t k = 0; k < m.detections.size(); ++k) {
      CHECK(m.detections[k].gt_index == first.detections[k].gt_index);
    }
  }
}

TEST_CASE("average precision examples") {
  GroundTruthMap g = {{"a", {gt(0, 0, 10, 10), gt(20, 20, 30, 30)}}};
  DetectionMap d = {{"a", {det(0, 0, 10, 10, 0.9), det(50, 50, 60, 60, 0.8),
                           det(20, 20, 30, 30, 0.7)}}};
  // Points (0.5, 1), (0.5, 0.5), (1, 2/3); envelope gives 0.5 * 1 + 0.5 * 2/3.
  CHECK(*average_precision(d, g, 0, 0.5) == doctest::Approx(0.5 + 1.0 / 3.0));
  CHECK_FALSE(average_precision(d, g, 1, 0.5));
  CHECK(*average_precision(DetectionMap{}, g, 0, 0.5) == 0.0);

  // Tied confidences form one operating point.
  DetectionMap tie = {{"a", {det(50, 50, 60, 60, 0.8), det(0, 0, 10, 10, 0.8)}}};
  CHECK(*average_precision(tie, g, 0, 0.5) == doctest::Approx(0.25));
}

TEST_CASE("average precision agrees with threshold enumeration") {
  const auto r = suites::average_precision(300, 23);
  CHECK_MESSAGE(r.ok(), r.first_failure);
}

TEST_CASE("mean average precision") {
  GroundTruthMap g = {{"a", {gt(0, 0, 10, 10), gt(20, 20, 30, 30, 1)}}};
  DetectionMap d = {{"a", {det(0, 0, 10, 10, 0.9), det(20, 20, 30, 30, 0.9, 1)}}};
  const auto m = mean_average_precision(d, g, 3);
  CHECK(*m.map50 == 1.0);
  CHECK(*m.map50_95 == 1.0);
  CHECK_FALSE(m.ap50[2]);
  CHECK_FALSE(m.warnings.empty());
  CHECK(coco_iou_thresholds().size() == 10);
  CHECK(coco_iou_thresholds().back() == doctest::Approx(0.95));
}

TEST_CASE("confusion matrix row and column sums") {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> cls(0, 1), n(0, 8);
  for (int t = 0; t < 100; ++t) {
    GroundTruthMap g;
    DetectionMap d;
    for (int i = 0; i < 3; ++i) {
      const std::string id = "im" + std::to_string(i);
      auto& gv = g[id];
      for (int k = n(rng); k > 0; --k) gv.emplace_back(oracle::random_box(rng, 80.0, 5, 25), cls(rng));
      auto& dv = d[id];
      for (int k = n(rng); k > 0; --k) {
        const auto b = !gv.empty() && rng() % 2 ? oracle::perturb(rng, gv[rng() % gv.size()].box, 2)
                                                : oracle::random_box(rng, 80.0, 5, 25);
        dv.emplace_back(b, cls(rng), oracle::random_confidence(rng));
      }
    }
    const auto res = match(d, g, 2, 0.5, 0.3);
    const auto cm = confusion_matrix(res, 2);
    for (int c = 0; c < 2; ++c) {
      std::size_t gts = 0, kept = 0;
      for (const auto& [id, v] : g) gts += std::count_if(v.begin(), v.end(), [&](auto& i) { return i.class_id == c; });
      for (const auto& [id, v] : d) {
        kept += std::count_if(v.begin(), v.end(), [&](auto& x) { return x.class_id() == c && x.confidence() >= 0.3; });
      }
      CHECK(std::size_t(cm.row(c).sum()) == gts);
      CHECK(std::size_t(cm.col(c).sum()) == kept);
      CHECK(std::size_t(cm(c, c)) == res.per_class[c].tp);
    }
    CHECK(cm(2, 2) == 0);
  }
}

TEST_CASE("outlier filter uses mean plus or minus two sample deviations") {
  std::vector<std::pair<std::string, double>> five = {
      {"a", 50}, {"b", 50}, {"c", 50}, {"d", 50}, {"e", 500}};
  // With five values one extreme point cannot reach two sample deviations.
  CHECK(outlier_filter(five).flagged.empty());

  std::vector<std::pair<std::string, double>> eleven;
  for (int i = 0; i < 10; ++i) eleven.push_back({"n" + std::to_string(i), 50});
  eleven.push_back({"x", 500});
  const auto s = outlier_filter(eleven);
  REQUIRE(s.flagged.size() == 1);
  CHECK(s.flagged[0] == "x");
  double mean = 0, ss = 0;
  for (const auto& [_, v] : eleven) mean += v / 11.0;
  for (const auto& [_, v] : eleven) ss += (v - mean) * (v - mean);
  CHECK(s.stddev == doctest::Approx(std::sqrt(ss / 10.0)));
  CHECK(s.upper == doctest::Approx(mean + 2 * s.stddev));

  CHECK_THROWS_AS(outlier_filter(std::vector<std::pair<std::string, double>>{{"a", 1}}),
                  ValidationError);
  std::vector<std::pair<std::string, double>> flat = {{"a", 4}, {"b", 4}, {"c", 4}};
  CHECK(outlier_filter(flat).flagged.empty());
}

TEST_CASE("evaluate a perfect detector") {
  const auto sd = testing_support::small_dataset(40, 10);
  DetectionMap d;
  for (const auto& [id, v] : sd.hidden_truth) {
    for (const auto& i : v) d[id].emplace_back(i.box, i.class_id, 1.0);
  }
  const auto r = evaluate(d, sd.hidden_truth, sd.dataset.classes);
  CHECK(*r.overall.precision == 1.0);
  CHECK(*r.overall.recall == 1.0);
  CHECK(*r.overall.fnr == 0.0);
  CHECK(*r.overall.mae == 0.0);
  CHECK(*r.overall.rmse == 0.0);
  CHECK(*r.overall.ap50 == 1.0);
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      if (a != b) CHECK(r.confusion(a, b) == 0);
    }
  }
}

TEST_CASE("evaluate_subset restricts to the subset") {
  auto sd = testing_support::small_dataset(30, 30);
  DetectionMap d;
  for (const auto& id : sd.dataset.split.val) {
    for (const auto& i : sd.dataset.at(id).instances) d[id].emplace_back(i.box, i.class_id, 0.9);
  }
  // A garbage detection on a train image must not count.
  d[sd.dataset.split.train[0]].emplace_back(BoundingBox(0, 0, 3, 3), 0, 0.9);
  const auto r = evaluate_subset(sd.dataset, d, Subset::val);
  CHECK(r.images == sd.dataset.split.val.size());
  CHECK(*r.overall.precision == 1.0);
}

TEST_CASE("reports serialize") {
  const auto sd = testing_support::small_dataset(30, 10, 4);
  DetectionMap d;
  for (const auto& [id, v] : sd.hidden_truth) {
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (k % 3 == 0) continue;
      d[id].emplace_back(v[k].box, v[k].class_id, 0.5 + 0.1 * (k % 4));
    }
  }
  const auto r = evaluate(d, sd.hidden_truth, sd.dataset.classes);
  nlohmann::json j = r;
  CHECK(j.get<MetricsReport>() == r);
  const auto kv = format_report_kv(r);
  CHECK(kv.find("overall.recall=") != std::string::npos);
  CHECK(kv.find("class.hen.fnr=") != std::string::npos);
  CHECK(format_report_text(r).find("broiler") != std::string::npos);
  CHECK(format_confusion_tsv(r, sd.dataset.classes).find("background") != std::string::npos);
}
