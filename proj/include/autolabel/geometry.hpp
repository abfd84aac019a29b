#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Geometry>

namespace autolabel {

/// Axis-aligned box in continuous 0-based pixel coordinates (corner form).
/// Construction rejects non-finite coordinates and zero or negative extent.
class BoundingBox {
 public:
  BoundingBox(double x_min, double y_min, double x_max, double y_max);

  /// Builds from a center/size pair, the form used by YOLO labels.
  static BoundingBox from_center(double cx, double cy, double w, double h);

  double x_min() const noexcept { return x_min_; }
  double y_min() const noexcept { return y_min_; }
  double x_max() const noexcept { return x_max_; }
  double y_max() const noexcept { return y_max_; }
  double width() const noexcept { return x_max_ - x_min_; }
  double height() const noexcept { return y_max_ - y_min_; }
  double area() const noexcept { return width() * height(); }

  bool inside(double image_w, double image_h, double tol = 1e-9) const noexcept;

  bool operator==(const BoundingBox&) const = default;

 private:
  double x_min_, y_min_, x_max_, y_max_;
};

/// A box with a class index and a confidence in [0, 1].
class Detection {
 public:
  Detection(BoundingBox box, int class_id, double confidence);

  const BoundingBox& box() const noexcept { return box_; }
  int class_id() const noexcept { return class_id_; }
  double confidence() const noexcept { return confidence_; }

  Detection with_class(int class_id) const { return {box_, class_id, confidence_}; }
  Detection with_box(BoundingBox box) const { return {box, class_id_, confidence_}; }

  bool operator==(const Detection&) const = default;

 private:
  BoundingBox box_;
  int class_id_;
  double confidence_;
};

enum class TransformKind { rotate90, rotate180, rotate270, flip_h, flip_v, scale };

/// Annotation-preserving geometric augmentation. Rotations are clockwise
/// (y axis pointing down) and restricted to multiples of 90 degrees.
struct GeomTransform {
  TransformKind kind = TransformKind::flip_h;
  double scale_factor = 1.0;  // only read when kind == scale

  static GeomTransform rotate90() { return {TransformKind::rotate90}; }
  static GeomTransform rotate180() { return {TransformKind::rotate180}; }
  static GeomTransform rotate270() { return {TransformKind::rotate270}; }
  static GeomTransform flip_h() { return {TransformKind::flip_h}; }
  static GeomTransform flip_v() { return {TransformKind::flip_v}; }
  static GeomTransform scale(double s);

  /// Accepts "rotate90", "flip_h", ..., "scale:1.5" / "scale1.5".
  static GeomTransform parse(std::string_view text);
  /// Stable token, e.g. "flip_h" or "scale1.5"; used to derive image ids.
  std::string name() const;
};

struct ImageSize {
  double width = 0.0;
  double height = 0.0;
};

/// Dimensions of the image after `t` (rotations by 90/270 swap them).
ImageSize transformed_size(const GeomTransform& t, ImageSize size);

/// Pixel-space affine map from the source image frame to the transformed one.
Eigen::Affine2d transform_matrix(const GeomTransform& t, ImageSize size);

/// Axis-aligned image of `box` under `t`, clamped to the transformed image.
/// Throws ValidationError if the box is outside the source image or a scale
/// would collapse it below 1e-6 square pixels.
BoundingBox apply_transform(const GeomTransform& t, const BoundingBox& box,
                            double image_w, double image_h);

/// Intersection over union; 0 for disjoint boxes.
double iou(const BoundingBox& a, const BoundingBox& b);

/// Intersects the box with the image rectangle. Returns false (and leaves
/// `out` untouched) if nothing of positive area remains.
bool clamp_to_image(double x_min, double y_min, double x_max, double y_max,
                    double image_w, double image_h, BoundingBox& out);

/// Per-class greedy non-maximum suppression. Returns indices into
/// `detections` of the survivors, in descending confidence order; equal
/// confidences keep input order. A detection is suppressed when a kept
/// detection of the same class overlaps it with IoU strictly above the
/// threshold.
std::vector<std::size_t> nms_indices(std::span<const Detection> detections,
                                     double iou_threshold);

std::vector<Detection> nms(std::span<const Detection> detections, double iou_threshold);

}  // namespace autolabel
