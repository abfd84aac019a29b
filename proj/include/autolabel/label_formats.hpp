#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "autolabel/dataset.hpp"

namespace autolabel {

/// YOLO text: one `class xc yc w h` line per object, normalized to [0, 1].
/// Boxes spilling past the image edge are clipped; lines that end up with
/// zero area, bad classes, or out-of-range numbers raise ParseError with the
/// 1-based line number. Imported instances are human labels.
std::vector<Instance> import_yolo(std::string_view annotation_text, int image_w, int image_h,
                                  const ClassTable& classes);

/// Inverse of import_yolo with six-decimal normalized coordinates.
std::string export_yolo(const std::vector<Instance>& instances, int image_w, int image_h,
                        const ClassTable& classes);

/// One Pascal VOC `<object>`. The difficult/truncated flags and pose are
/// carried so they survive a round trip; nothing else reads them.
struct VocObject {
  Instance instance;
  int difficult = 0;
  int truncated = 0;
  std::string pose = "Unspecified";
};

struct VocAnnotation {
  std::string folder;
  std::string filename;
  std::string image_id;  // filename stem
  int width = 0;
  int height = 0;
  int depth = 3;
  std::vector<VocObject> objects;

  std::vector<Instance> instances() const;
};

/// Parses VOC XML. VOC corners are 1-based inclusive integers; internally
/// (xmin, ymin, xmax, ymax) becomes (xmin - 1, ymin - 1, xmax, ymax).
VocAnnotation import_voc(std::string_view xml_text, const ClassTable& classes);

/// Canonical VOC XML (fixed element order, two-space indent). Coordinates
/// are rounded to whole pixels.
std::string export_voc(const VocAnnotation& annotation, const ClassTable& classes);

/// Convenience: VOC document for a dataset record.
VocAnnotation to_voc(const ImageRecord& record);

}  // namespace autolabel
