#include "autolabel/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "autolabel/error.hpp"
#include "autolabel/text.hpp"

namespace autolabel {

BoundingBox::BoundingBox(double x_min, double y_min, double x_max, double y_max)
    : x_min_(x_min), y_min_(y_min), x_max_(x_max), y_max_(y_max) {
  if (!std::isfinite(x_min) || !std::isfinite(y_min) || !std::isfinite(x_max) ||
      !std::isfinite(y_max)) {
    throw ValidationError("bounding box has non-finite coordinates");
  }
  if (!(x_min < x_max) || !(y_min < y_max)) {
    throw ValidationError("bounding box must satisfy min < max on both axes");
  }
}

BoundingBox BoundingBox::from_center(double cx, double cy, double w, double h) {
  return {cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0};
}

bool BoundingBox::inside(double image_w, double image_h, double tol) const noexcept {
  return x_min_ >= -tol && y_min_ >= -tol && x_max_ <= image_w + tol &&
         y_max_ <= image_h + tol;
}

Detection::Detection(BoundingBox box, int class_id, double confidence)
    : box_(box), class_id_(class_id), confidence_(confidence) {
  if (!(confidence >= 0.0 && confidence <= 1.0)) {
    throw ValidationError("detection confidence must lie in [0, 1]");
  }
  if (class_id < 0) throw ValidationError("detection class id must be nonnegative");
}

GeomTransform GeomTransform::scale(double s) {
  if (!(s > 0.0) || !std::isfinite(s)) {
    throw ValidationError("scale factor must be positive and finite");
  }
  return {TransformKind::scale, s};
}

GeomTransform GeomTransform::parse(std::string_view token) {
  token = text::trim(token);
  if (token == "rotate90") return rotate90();
  if (token == "rotate180") return rotate180();
  if (token == "rotate270") return rotate270();
  if (token == "flip_h") return flip_h();
  if (token == "flip_v") return flip_v();
  if (token.starts_with("scale")) {
    auto rest = token.substr(5);
    if (!rest.empty() && rest.front() == ':') rest.remove_prefix(1);
    if (auto s = text::parse_double(rest)) return scale(*s);
  }
  throw ValidationError("unknown transform '" + std::string(token) + "'");
}

std::string GeomTransform::name() const {
  switch (kind) {
    case TransformKind::rotate90: return "rotate90";
    case TransformKind::rotate180: return "rotate180";
    case TransformKind::rotate270: return "rotate270";
    case TransformKind::flip_h: return "flip_h";
    case TransformKind::flip_v: return "flip_v";
    case TransformKind::scale: return "scale" + text::format_double(scale_factor);
  }
  return "unknown";
}

ImageSize transformed_size(const GeomTransform& t, ImageSize size) {
  switch (t.kind) {
    case TransformKind::rotate90:
    case TransformKind::rotate270:
      return {size.height, size.width};
    case TransformKind::scale:
      return {size.width * t.scale_factor, size.height * t.scale_factor};
    default:
      return size;
  }
}

Eigen::Affine2d transform_matrix(const GeomTransform& t, ImageSize size) {
  const double w = size.width;
  const double h = size.height;
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  switch (t.kind) {
    case TransformKind::rotate90:  // (x, y) -> (H - y, x)
      m << 0, -1, h,
           1, 0, 0,
           0, 0, 1;
      break;
    case TransformKind::rotate180:
      m << -1, 0, w,
           0, -1, h,
           0, 0, 1;
      break;
    case TransformKind::rotate270:  // (x, y) -> (y, W - x)
      m << 0, 1, 0,
           -1, 0, w,
           0, 0, 1;
      break;
    case TransformKind::flip_h:
      m << -1, 0, w,
           0, 1, 0,
           0, 0, 1;
      break;
    case TransformKind::flip_v:
      m << 1, 0, 0,
           0, -1, h,
           0, 0, 1;
      break;
    case TransformKind::scale:
      m(0, 0) = t.scale_factor;
      m(1, 1) = t.scale_factor;
      break;
  }
  return Eigen::Affine2d(m);
}

BoundingBox apply_transform(const GeomTransform& t, const BoundingBox& box,
                            double image_w, double image_h) {
  if (!(image_w > 0.0) || !(image_h > 0.0)) {
    throw ValidationError("image dimensions must be positive");
  }
  if (t.kind == TransformKind::scale && !(t.scale_factor > 0.0)) {
    throw ValidationError("scale factor must be positive");
  }
  if (!box.inside(image_w, image_h)) {
    throw ValidationError("box lies outside the source image");
  }
  const Eigen::Affine2d a = transform_matrix(t, {image_w, image_h});
  const Eigen::Vector2d p0 = a * Eigen::Vector2d(box.x_min(), box.y_min());
  const Eigen::Vector2d p1 = a * Eigen::Vector2d(box.x_max(), box.y_max());
  const Eigen::Vector2d lo = p0.cwiseMin(p1);
  const Eigen::Vector2d hi = p0.cwiseMax(p1);

  const ImageSize out = transformed_size(t, {image_w, image_h});
  const double x0 = std::clamp(lo.x(), 0.0, out.width);
  const double y0 = std::clamp(lo.y(), 0.0, out.height);
  const double x1 = std::clamp(hi.x(), 0.0, out.width);
  const double y1 = std::clamp(hi.y(), 0.0, out.height);
  if ((x1 - x0) * (y1 - y0) < 1e-6 || !(x0 < x1) || !(y0 < y1)) {
    throw ValidationError("transform collapses box below 1e-6 square pixels");
  }
  return {x0, y0, x1, y1};
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double ix = std::min(a.x_max(), b.x_max()) - std::max(a.x_min(), b.x_min());
  const double iy = std::min(a.y_max(), b.y_max()) - std::max(a.y_min(), b.y_min());
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

bool clamp_to_image(double x_min, double y_min, double x_max, double y_max,
                    double image_w, double image_h, BoundingBox& out) {
  const double x0 = std::clamp(std::min(x_min, x_max), 0.0, image_w);
  const double x1 = std::clamp(std::max(x_min, x_max), 0.0, image_w);
  const double y0 = std::clamp(std::min(y_min, y_max), 0.0, image_h);
  const double y1 = std::clamp(std::max(y_min, y_max), 0.0, image_h);
  if (!(x0 < x1) || !(y0 < y1)) return false;
  out = BoundingBox(x0, y0, x1, y1);
  return true;
}

std::vector<std::size_t> nms_indices(std::span<const Detection> detections,
                                     double iou_threshold) {
  if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0)) {
    throw ValidationError("NMS IoU threshold must lie in [0, 1]");
  }
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return detections[i].confidence() > detections[j].confidence();
  });

  std::vector<std::size_t> kept;
  kept.reserve(order.size());
  for (const std::size_t i : order) {
    const Detection& d = detections[i];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](std::size_t k) {
      return detections[k].class_id() == d.class_id() &&
             iou(detections[k].box(), d.box()) > iou_threshold;
    });
    if (!suppressed) kept.push_back(i);
  }
  return kept;
}

std::vector<Detection> nms(std::span<const Detection> detections, double iou_threshold) {
  std::vector<Detection> out;
  for (const std::size_t i : nms_indices(detections, iou_threshold)) {
    out.push_back(detections[i]);
  }
  return out;
}

}  // namespace autolabel
