#include "autolabel/label_formats.hpp"

#include <cmath>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <fmt/format.h>

#include "autolabel/error.hpp"
#include "autolabel/text.hpp"

namespace autolabel {

namespace pt = boost::property_tree;

std::vector<Instance> import_yolo(std::string_view annotation_text, int image_w, int image_h,
                                  const ClassTable& classes) {
  if (image_w <= 0 || image_h <= 0) throw ValidationError("image dimensions must be positive");
  std::vector<Instance> out;
  const auto ls = text::lines(annotation_text);
  for (std::size_t i = 0; i < ls.size(); ++i) {
    const std::size_t lineno = i + 1;
    const auto f = text::split_ws(ls[i]);
    if (f.empty()) continue;
    if (f.size() != 5) {
      throw ParseError(lineno, "expected 'class x_center y_center width height'");
    }
    const auto cls = text::parse_int(f[0]);
    if (!cls) throw ParseError(lineno, "class index is not an integer");
    if (!classes.contains(static_cast<int>(*cls))) {
      throw ParseError(lineno, fmt::format("class index {} outside table of {}", *cls,
                                           classes.size()));
    }
    double v[4];
    for (int k = 0; k < 4; ++k) {
      const auto d = text::parse_double(f[k + 1]);
      if (!d) throw ParseError(lineno, "malformed coordinate '" + std::string(f[k + 1]) + "'");
      if (*d < 0.0 || *d > 1.0) {
        throw ParseError(lineno, "coordinate " + std::string(f[k + 1]) + " outside [0, 1]");
      }
      v[k] = *d;
    }
    const double cx = v[0] * image_w, cy = v[1] * image_h;
    const double w = v[2] * image_w, h = v[3] * image_h;
    BoundingBox box(0, 0, 1, 1);
    if (!clamp_to_image(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2, image_w, image_h,
                        box)) {
      throw ParseError(lineno, "degenerate box (zero area after conversion)");
    }
    out.emplace_back(box, static_cast<int>(*cls));
  }
  return out;
}

std::string export_yolo(const std::vector<Instance>& instances, int image_w, int image_h,
                        const ClassTable& classes) {
  if (image_w <= 0 || image_h <= 0) throw ValidationError("image dimensions must be positive");
  std::string out;
  for (const auto& inst : instances) {
    if (!classes.contains(inst.class_id)) {
      throw ValidationError(fmt::format("class id {} not in class table", inst.class_id));
    }
    const auto& b = inst.box;
    const double cx = (b.x_min() + b.x_max()) / 2.0 / image_w;
    const double cy = (b.y_min() + b.y_max()) / 2.0 / image_h;
    out += fmt::format("{} {:.6f} {:.6f} {:.6f} {:.6f}\n", inst.class_id, cx, cy,
                       b.width() / image_w, b.height() / image_h);
  }
  return out;
}

std::vector<Instance> VocAnnotation::instances() const {
  std::vector<Instance> out;
  out.reserve(objects.size());
  for (const auto& o : objects) out.push_back(o.instance);
  return out;
}

namespace {

double voc_number(const pt::ptree& node, const char* key, const std::string& where) {
  const auto child = node.get_optional<std::string>(key);
  if (!child) throw ParseError(0, where + ": missing <" + key + ">");
  const auto v = text::parse_double(text::trim(*child));
  if (!v) throw ParseError(0, where + ": <" + key + "> is not a number");
  return *v;
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string stem(const std::string& filename) {
  const auto slash = filename.find_last_of("/\\");
  std::string base = slash == std::string::npos ? filename : filename.substr(slash + 1);
  const auto dot = base.find_last_of('.');
  return dot == std::string::npos || dot == 0 ? base : base.substr(0, dot);
}

}  // namespace

VocAnnotation import_voc(std::string_view xml_text, const ClassTable& classes) {
  pt::ptree doc;
  try {
    std::istringstream in{std::string(xml_text)};
    pt::read_xml(in, doc, pt::xml_parser::trim_whitespace);
  } catch (const pt::xml_parser_error& e) {
    throw ParseError(e.line(), std::string("malformed XML: ") + e.message());
  }
  const auto root = doc.get_child_optional("annotation");
  if (!root) throw ParseError(0, "missing <annotation> root");

  VocAnnotation ann;
  ann.folder = root->get<std::string>("folder", "");
  ann.filename = root->get<std::string>("filename", "");
  ann.image_id = stem(ann.filename);

  const auto size = root->get_child_optional("size");
  if (!size) throw ParseError(0, "missing <size> element");
  const double w = voc_number(*size, "width", "size");
  const double h = voc_number(*size, "height", "size");
  if (w <= 0 || h <= 0 || w != std::floor(w) || h != std::floor(h)) {
    throw ParseError(0, "size must hold positive integer width/height");
  }
  ann.width = static_cast<int>(w);
  ann.height = static_cast<int>(h);
  ann.depth = size->get<int>("depth", 3);

  int index = 0;
  for (const auto& [tag, node] : *root) {
    if (tag != "object") continue;
    const std::string where = fmt::format("object {}", index++);
    const auto name = node.get_optional<std::string>("name");
    if (!name) throw ParseError(0, where + ": missing <name>");
    const auto cls = classes.find(*name);
    if (!cls) throw ValidationError(where + ": unknown class name '" + *name + "'");
    const auto bnd = node.get_child_optional("bndbox");
    if (!bnd) throw ParseError(0, where + ": missing <bndbox>");
    const double xmin = voc_number(*bnd, "xmin", where);
    const double ymin = voc_number(*bnd, "ymin", where);
    const double xmax = voc_number(*bnd, "xmax", where);
    const double ymax = voc_number(*bnd, "ymax", where);
    // Inclusive corners: xmin == xmax is a one-pixel-wide box.
    if (xmin > xmax) throw ParseError(0, where + ": xmin > xmax");
    if (ymin > ymax) throw ParseError(0, where + ": ymin > ymax");
    BoundingBox box(0, 0, 1, 1);
    if (!clamp_to_image(xmin - 1.0, ymin - 1.0, xmax, ymax, ann.width, ann.height, box)) {
      throw ParseError(0, where + ": box lies outside the image");
    }
    VocObject obj{Instance(box, *cls)};
    obj.difficult = node.get<int>("difficult", 0);
    obj.truncated = node.get<int>("truncated", 0);
    obj.pose = node.get<std::string>("pose", "Unspecified");
    ann.objects.push_back(std::move(obj));
  }
  return ann;
}

std::string export_voc(const VocAnnotation& ann, const ClassTable& classes) {
  std::string out = "<annotation>\n";
  out += fmt::format("  <folder>{}</folder>\n", xml_escape(ann.folder));
  out += fmt::format("  <filename>{}</filename>\n", xml_escape(ann.filename));
  out += "  <size>\n";
  out += fmt::format("    <width>{}</width>\n", ann.width);
  out += fmt::format("    <height>{}</height>\n", ann.height);
  out += fmt::format("    <depth>{}</depth>\n", ann.depth);
  out += "  </size>\n";
  out += "  <segmented>0</segmented>\n";
  for (const auto& o : ann.objects) {
    const auto& b = o.instance.box;
    const long long xmin = std::llround(b.x_min()) + 1;
    const long long ymin = std::llround(b.y_min()) + 1;
    // Sub-pixel boxes can round to an empty span; widen them to one pixel.
    const long long xmax = std::max(std::llround(b.x_max()), xmin);
    const long long ymax = std::max(std::llround(b.y_max()), ymin);
    out += "  <object>\n";
    out += fmt::format("    <name>{}</name>\n", xml_escape(classes.name(o.instance.class_id)));
    out += fmt::format("    <pose>{}</pose>\n", xml_escape(o.pose));
    out += fmt::format("    <truncated>{}</truncated>\n", o.truncated);
    out += fmt::format("    <difficult>{}</difficult>\n", o.difficult);
    out += "    <bndbox>\n";
    out += fmt::format("      <xmin>{}</xmin>\n", xmin);
    out += fmt::format("      <ymin>{}</ymin>\n", ymin);
    out += fmt::format("      <xmax>{}</xmax>\n", xmax);
    out += fmt::format("      <ymax>{}</ymax>\n", ymax);
    out += "    </bndbox>\n";
    out += "  </object>\n";
  }
  out += "</annotation>\n";
  return out;
}

VocAnnotation to_voc(const ImageRecord& record) {
  VocAnnotation ann;
  ann.filename = record.path.empty() ? record.image_id + ".jpg" : record.path;
  const auto slash = ann.filename.find_last_of("/\\");
  if (slash != std::string::npos) {
    ann.folder = ann.filename.substr(0, slash);
    ann.filename = ann.filename.substr(slash + 1);
  }
  ann.image_id = record.image_id;
  ann.width = record.width;
  ann.height = record.height;
  for (const auto& inst : record.instances) ann.objects.push_back(VocObject{inst});
  return ann;
}

}  // namespace autolabel
