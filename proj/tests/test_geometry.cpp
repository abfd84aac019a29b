#include <random>

#include "doctest.h"

#include "autolabel/error.hpp"
#include "autolabel/geometry.hpp"
#include "oracles.hpp"

using namespace autolabel;

namespace {

// Unit-cell count of the overlap of two integer boxes.
double raster_iou(int ax0, int ay0, int ax1, int ay1, int bx0, int by0, int bx1, int by1) {
  int inter = 0, uni = 0;
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      const bool a = x >= ax0 && x < ax1 && y >= ay0 && y < ay1;
      const bool b = x >= bx0 && x < bx1 && y >= by0 && y < by1;
      inter += a && b;
      uni += a || b;
    }
  }
  return double(inter) / double(uni);
}

void check_box(const BoundingBox& b, double x0, double y0, double x1, double y1) {
  CHECK(b.x_min() == doctest::Approx(x0));
  CHECK(b.y_min() == doctest::Approx(y0));
  CHECK(b.x_max() == doctest::Approx(x1));
  CHECK(b.y_max() == doctest::Approx(y1));
}

}  // namespace

TEST_CASE("box construction rejects degenerate input") {
  CHECK_THROWS_AS(BoundingBox(5, 5, 5, 10), ValidationError);
  CHECK_THROWS_AS(BoundingBox(5, 5, 4, 10), ValidationError);
  CHECK_THROWS_AS(BoundingBox(0, 0, std::nan(""), 1), ValidationError);
  CHECK_THROWS_AS(Detection(BoundingBox(0, 0, 1, 1), 0, 1.5), ValidationError);
  CHECK_THROWS_AS(Detection(BoundingBox(0, 0, 1, 1), -1, 0.5), ValidationError);
  const auto c = BoundingBox::from_center(50, 40, 20, 10);
  check_box(c, 40, 35, 60, 45);
}

TEST_CASE("iou basics") {
  CHECK(iou(BoundingBox(0, 0, 2, 2), BoundingBox(1, 1, 3, 3)) == doctest::Approx(1.0 / 7.0));
  CHECK(iou(BoundingBox(0, 0, 1, 1), BoundingBox(2, 2, 3, 3)) == 0.0);
  CHECK(iou(BoundingBox(0, 0, 1, 1), BoundingBox(1, 0, 2, 1)) == 0.0);
  CHECK(iou(BoundingBox(3, 4, 9, 9), BoundingBox(3, 4, 9, 9)) == 1.0);
}

TEST_CASE("iou matches rasterized overlap on integer boxes") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> c(0, 63);
  for (int t = 0; t < 300; ++t) {
    int a[4], b[4];
    for (int* box : {a, b}) {
      int x0 = c(rng), x1 = c(rng), y0 = c(rng), y1 = c(rng);
      if (x0 == x1) x1 = x0 + 1 > 64 ? x0 - 1 : x0 + 1;
      if (y0 == y1) y1 = y0 + 1 > 64 ? y0 - 1 : y0 + 1;
      box[0] = std::min(x0, x1), box[2] = std::max(x0, x1);
      box[1] = std::min(y0, y1), box[3] = std::max(y0, y1);
    }
    const double got = iou(BoundingBox(a[0], a[1], a[2], a[3]), BoundingBox(b[0], b[1], b[2], b[3]));
    CHECK(got == doctest::Approx(raster_iou(a[0], a[1], a[2], a[3], b[0], b[1], b[2], b[3])));
  }
}

TEST_CASE("flip and rotation examples") {
  const BoundingBox b(10, 20, 30, 40);
  check_box(apply_transform(GeomTransform::flip_h(), b, 100, 100), 70, 20, 90, 40);
  check_box(apply_transform(GeomTransform::flip_v(), b, 100, 100), 10, 60, 30, 80);
  check_box(apply_transform(GeomTransform::rotate180(), b, 100, 100), 70, 60, 90, 80);
  // Clockwise with y down: (x, y) -> (H - y, x).
  check_box(apply_transform(GeomTransform::rotate90(), b, 100, 50), 10, 10, 30, 30);
  check_box(apply_transform(GeomTransform::rotate270(), b, 100, 50), 20, 70, 40, 90);
  check_box(apply_transform(GeomTransform::scale(2.0), b, 100, 100), 20, 40, 60, 80);

  const auto s = transformed_size(GeomTransform::rotate90(), {640, 480});
  CHECK(s.width == 480);
  CHECK(s.height == 640);
}

TEST_CASE("transform matrix agrees with pointwise definition") {
  const ImageSize size{120, 80};
  const Eigen::Vector2d p(17, 33);
  const auto check = [&](GeomTransform t, Eigen::Vector2d expected) {
    const Eigen::Vector2d got = transform_matrix(t, size) * p;
    CHECK(got.x() == doctest::Approx(expected.x()));
    CHECK(got.y() == doctest::Approx(expected.y()));
  };
  check(GeomTransform::flip_h(), {120 - 17, 33});
  check(GeomTransform::flip_v(), {17, 80 - 33});
  check(GeomTransform::rotate90(), {80 - 33, 17});
  check(GeomTransform::rotate180(), {120 - 17, 80 - 33});
  check(GeomTransform::rotate270(), {33, 120 - 17});
  check(GeomTransform::scale(0.5), {8.5, 16.5});
}

TEST_CASE("transform round trips") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 200; ++t) {
    const double w = 100, h = 70;
    const auto b = oracle::random_box(rng, 70.0, 1.0, 30.0);
    auto r = b;
    double cw = w, ch = h;
    for (int k = 0; k < 4; ++k) {
      r = apply_transform(GeomTransform::rotate90(), r, cw, ch);
      std::swap(cw, ch);
    }
    CHECK(r.x_min() == doctest::Approx(b.x_min()));
    CHECK(r.y_max() == doctest::Approx(b.y_max()));

    const auto r90 = apply_transform(GeomTransform::rotate90(), b, w, h);
    const auto back = apply_transform(GeomTransform::rotate270(), r90, h, w);
    CHECK(back.x_min() == doctest::Approx(b.x_min()));
    CHECK(back.y_min() == doctest::Approx(b.y_min()));

    for (auto f : {GeomTransform::flip_h(), GeomTransform::flip_v()}) {
      const auto ff = apply_transform(f, apply_transform(f, b, w, h), w, h);
      CHECK(ff.x_min() == doctest::Approx(b.x_min()));
      CHECK(ff.y_max() == doctest::Approx(b.y_max()));
    }
    const auto a = apply_transform(GeomTransform::rotate90(), b, w, h);
    CHECK(a.area() == doctest::Approx(b.area()));
  }
}

TEST_CASE("transform rejects boxes outside the image and parses names") {
  CHECK_THROWS_AS(apply_transform(GeomTransform::flip_h(), BoundingBox(90, 0, 110, 10), 100, 100),
                  ValidationError);
  CHECK(GeomTransform::parse("rotate270").kind == TransformKind::rotate270);
  CHECK(GeomTransform::parse("scale:1.5").scale_factor == 1.5);
  CHECK(GeomTransform::parse("scale1.5").name() == "scale1.5");
  CHECK_THROWS_AS(GeomTransform::parse("rotate45"), ValidationError);
  CHECK_THROWS_AS(GeomTransform::scale(0.0), ValidationError);
}

TEST_CASE("clamp_to_image") {
  BoundingBox out(0, 0, 1, 1);
  CHECK(clamp_to_image(-5, -5, 10, 10, 8, 8, out));
  CHECK(out == BoundingBox(0, 0, 8, 8));
  CHECK_FALSE(clamp_to_image(9, 9, 12, 12, 8, 8, out));
  CHECK(out == BoundingBox(0, 0, 8, 8));
}

TEST_CASE("nms examples") {
  const std::vector<Detection> dets = {
      {BoundingBox(0, 0, 10, 10), 0, 0.9},
      {BoundingBox(1, 1, 11, 11), 0, 0.8},   // overlaps the first, same class
      {BoundingBox(1, 1, 11, 11), 1, 0.7},   // other class survives
      {BoundingBox(50, 50, 60, 60), 0, 0.6},
  };
  CHECK(nms_indices(dets, 0.5) == std::vector<std::size_t>{0, 2, 3});
  CHECK(nms_indices(dets, 1.0).size() == 4);
  CHECK(nms_indices(std::vector<Detection>{}, 0.5).empty());

  // Equal confidence: the earlier one wins.
  const std::vector<Detection> tie = {{BoundingBox(1, 1, 11, 11), 0, 0.5},
                                      {BoundingBox(0, 0, 10, 10), 0, 0.5}};
  CHECK(nms_indices(tie, 0.5) == std::vector<std::size_t>{0});
  CHECK_THROWS_AS(nms_indices(tie, 1.5), ValidationError);
}

TEST_CASE("nms agrees with the quadratic suppressor") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> count(0, 50), cls(0, 2);
  std::uniform_real_distribution<double> thr(0.1, 0.9);
  for (int t = 0; t < 300; ++t) {
    std::vector<Detection> dets;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
      const auto b = i > 0 && rng() % 2 ? oracle::perturb(rng, dets[rng() % dets.size()].box(), 3.0)
                                        : oracle::random_box(rng);
      dets.emplace_back(b, cls(rng), oracle::random_confidence(rng));
    }
    const double th = thr(rng);
    const auto kept = nms_indices(dets, th);
    CHECK(kept == oracle::nms(dets, th));

    // Invariants: no kept pair of one class overlaps above the threshold.
    for (std::size_t a = 0; a < kept.size(); ++a) {
      for (std::size_t b = a + 1; b < kept.size(); ++b) {
        if (dets[kept[a]].class_id() == dets[kept[b]].class_id()) {
          CHECK(iou(dets[kept[a]].box(), dets[kept[b]].box()) <= th);
        }
      }
    }
    const auto again = nms(nms(dets, th), th);
    CHECK(again.size() == kept.size());
  }
}
