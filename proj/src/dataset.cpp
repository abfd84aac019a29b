#include "autolabel/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "autolabel/error.hpp"
#include "autolabel/text.hpp"

namespace autolabel {

namespace {

constexpr std::string_view kManifestMagic = "#autolabel-manifest v1";
constexpr std::string_view kAnnotationsMagic = "#autolabel-annotations v1";
constexpr std::string_view kManifestColumns = "image_id\tpath\twidth\theight\tsplit\tlabeled\tweight";
constexpr std::string_view kAnnotationColumns =
    "image_id\tclass_id\tx_min\ty_min\tx_max\ty_max\tprovenance\tsource_iteration";

constexpr Subset kAllSubsets[] = {Subset::train, Subset::val, Subset::test, Subset::unlabeled};

}  // namespace

// ---------------------------------------------------------------------------
// ClassTable

ClassTable::ClassTable(std::vector<std::string> names) : names_(std::move(names)) {
  std::set<std::string_view> seen;
  for (const auto& n : names_) {
    if (n.empty()) throw ValidationError("class names must be non-empty");
    if (n.find_first_of("\t\n") != std::string::npos) {
      throw ValidationError("class name contains a tab or newline: " + n);
    }
    if (!seen.insert(n).second) throw ValidationError("duplicate class name: " + n);
  }
}

const std::string& ClassTable::name(int class_id) const {
  if (!contains(class_id)) {
    throw ValidationError(fmt::format("class id {} outside table of {}", class_id, size()));
  }
  return names_[static_cast<std::size_t>(class_id)];
}

std::optional<int> ClassTable::find(std::string_view name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<int>(it - names_.begin());
}

int ClassTable::index_of(std::string_view name) const {
  if (auto i = find(name)) return *i;
  throw ValidationError("unknown class name '" + std::string(name) + "'");
}

ClassTable ClassTable::parse(std::string_view text) {
  std::vector<std::string> names;
  for (auto line : text::lines(text)) {
    line = text::trim(line);
    if (line.empty() || line.front() == '#') continue;
    names.emplace_back(line);
  }
  return ClassTable(std::move(names));
}

std::string ClassTable::serialize() const {
  std::string out;
  for (const auto& n : names_) {
    out += n;
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Enums

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::human: return "human";
    case Provenance::pseudo: return "pseudo";
    case Provenance::corrected: return "corrected";
  }
  return "human";
}

Provenance parse_provenance(std::string_view token) {
  if (token == "human") return Provenance::human;
  if (token == "pseudo") return Provenance::pseudo;
  if (token == "corrected") return Provenance::corrected;
  throw ValidationError("unknown provenance '" + std::string(token) + "'");
}

std::string_view to_string(Subset s) {
  switch (s) {
    case Subset::train: return "train";
    case Subset::val: return "val";
    case Subset::test: return "test";
    case Subset::unlabeled: return "unlabeled";
  }
  return "train";
}

Subset parse_subset(std::string_view token) {
  if (token == "train") return Subset::train;
  if (token == "val") return Subset::val;
  if (token == "test") return Subset::test;
  if (token == "unlabeled") return Subset::unlabeled;
  throw ValidationError("unknown split '" + std::string(token) + "'");
}

// ---------------------------------------------------------------------------
// Instance / ImageRecord

Instance::Instance(BoundingBox box_, int class_id_, Provenance provenance_,
                   int source_iteration_)
    : box(box_), class_id(class_id_), provenance(provenance_),
      source_iteration(source_iteration_) {
  validate();
}

void Instance::validate() const {
  if (class_id < 0) throw ValidationError("instance class id must be nonnegative");
  if (provenance == Provenance::human && source_iteration != 0) {
    throw ValidationError("human instances must carry source iteration 0");
  }
  if (provenance != Provenance::human && source_iteration < 1) {
    throw ValidationError("pseudo/corrected instances must carry source iteration >= 1");
  }
}

void ImageRecord::validate(const ClassTable& classes) const {
  if (image_id.empty()) throw ValidationError("image id must be non-empty");
  if (image_id.find_first_of("\t\n") != std::string::npos) {
    throw ValidationError("image id contains a tab or newline: " + image_id);
  }
  if (width <= 0 || height <= 0) {
    throw ValidationError("image " + image_id + " has non-positive dimensions");
  }
  for (const auto& inst : instances) {
    inst.validate();
    if (!classes.contains(inst.class_id)) {
      throw ValidationError(fmt::format("image {}: class id {} not in class table",
                                        image_id, inst.class_id));
    }
    if (!inst.box.inside(width, height)) {
      throw ValidationError("image " + image_id + ": instance box outside image bounds");
    }
    if (!labeled && inst.provenance != Provenance::pseudo) {
      throw ValidationError("unlabeled image " + image_id + " holds non-pseudo instances");
    }
  }
}

// ---------------------------------------------------------------------------
// Split

SplitRatios SplitRatios::parse(std::string_view s) {
  const auto parts = text::split(s, ',');
  if (parts.size() != 3) throw ValidationError("ratios must be three comma-separated numbers");
  SplitRatios r;
  double* dst[] = {&r.train, &r.val, &r.test};
  for (std::size_t i = 0; i < 3; ++i) {
    auto v = text::parse_double(text::trim(parts[i]));
    if (!v) throw ValidationError("bad ratio '" + std::string(parts[i]) + "'");
    *dst[i] = *v;
  }
  r.validate();
  return r;
}

void SplitRatios::validate() const {
  if (!(train > 0 && val > 0 && test > 0)) throw ValidationError("split ratios must be positive");
  if (std::abs(train + val + test - 1.0) > 1e-9) {
    throw ValidationError("split ratios must sum to 1");
  }
}

std::vector<std::string>& DatasetSplit::subset(Subset s) {
  switch (s) {
    case Subset::train: return train;
    case Subset::val: return val;
    case Subset::test: return test;
    case Subset::unlabeled: return unlabeled;
  }
  return train;
}

const std::vector<std::string>& DatasetSplit::subset(Subset s) const {
  return const_cast<DatasetSplit*>(this)->subset(s);
}

std::optional<Subset> DatasetSplit::subset_of(std::string_view image_id) const {
  for (const Subset s : kAllSubsets) {
    const auto& v = subset(s);
    if (std::find(v.begin(), v.end(), image_id) != v.end()) return s;
  }
  return std::nullopt;
}

void DatasetSplit::move(std::string_view image_id, Subset from, Subset to) {
  auto& src = subset(from);
  const auto it = std::find(src.begin(), src.end(), image_id);
  if (it == src.end()) {
    throw ValidationError(fmt::format("image {} is not in {}", image_id, to_string(from)));
  }
  src.erase(it);
  auto& dst = subset(to);
  dst.insert(std::upper_bound(dst.begin(), dst.end(), image_id), std::string(image_id));
}

DatasetSplit split(std::span<const ImageRecord> images, SplitRatios ratios,
                   std::uint64_t seed) {
  ratios.validate();
  std::vector<std::string> labeled;
  DatasetSplit out;
  out.ratios = ratios;
  out.seed = seed;
  for (const auto& r : images) {
    (r.labeled ? labeled : out.unlabeled).push_back(r.image_id);
  }
  const std::size_t n = labeled.size();
  if (n < 3) {
    throw ValidationError(fmt::format(
        "split needs at least 3 labeled images to form train/val/test, got {}", n));
  }

  // Fisher-Yates over a seeded 64-bit Mersenne twister.
  std::mt19937_64 rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(labeled[i], labeled[pick(rng)]);
  }

  // The epsilon keeps products like 25 * 0.2 from flooring to 4.
  const auto share = [n](double r) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(n * r + 1e-9)));
  };
  const std::size_t n_val = share(ratios.val);
  const std::size_t n_test = share(ratios.test);
  if (n_val + n_test >= n) throw ValidationError("ratios leave no images for train");
  const std::size_t n_train = n - n_val - n_test;

  const auto first = labeled.begin();
  out.train.assign(first, first + static_cast<std::ptrdiff_t>(n_train));
  out.val.assign(first + static_cast<std::ptrdiff_t>(n_train),
                 first + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.assign(first + static_cast<std::ptrdiff_t>(n_train + n_val), labeled.end());
  for (const Subset s : kAllSubsets) std::sort(out.subset(s).begin(), out.subset(s).end());
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

std::vector<ImageRecord> augment(const ImageRecord& record,
                                 std::span<const GeomTransform> transforms) {
  if (!record.labeled) {
    throw ValidationError("augment requires a labeled record: " + record.image_id);
  }
  std::vector<ImageRecord> out;
  out.reserve(transforms.size());
  for (const auto& t : transforms) {
    const ImageSize size = transformed_size(t, {double(record.width), double(record.height)});
    ImageRecord aug;
    aug.image_id = record.image_id + "__" + t.name();
    aug.path = record.path;
    aug.width = static_cast<int>(std::lround(size.width));
    aug.height = static_cast<int>(std::lround(size.height));
    if (aug.width <= 0 || aug.height <= 0) {
      throw ValidationError("transform " + t.name() + " collapses image " + record.image_id);
    }
    aug.labeled = true;
    for (const auto& inst : record.instances) {
      const BoundingBox b = apply_transform(t, inst.box, record.width, record.height);
      BoundingBox fitted = b;
      if (!clamp_to_image(b.x_min(), b.y_min(), b.x_max(), b.y_max(), aug.width, aug.height,
                          fitted)) {
        throw ValidationError("transform " + t.name() + " pushes a box out of the image");
      }
      aug.instances.emplace_back(fitted, inst.class_id, inst.provenance, inst.source_iteration);
    }
    out.push_back(std::move(aug));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset

const ImageRecord& Dataset::at(std::string_view image_id) const {
  const auto it = images.find(image_id);
  if (it == images.end()) throw NotFoundError("unknown image '" + std::string(image_id) + "'");
  return it->second;
}

ImageRecord& Dataset::at(std::string_view image_id) {
  return const_cast<ImageRecord&>(std::as_const(*this).at(image_id));
}

void Dataset::add(ImageRecord record, Subset subset) {
  const std::string id = record.image_id;
  if (!images.emplace(id, std::move(record)).second) {
    throw ValidationError("duplicate image id '" + id + "'");
  }
  auto& dst = split.subset(subset);
  dst.insert(std::upper_bound(dst.begin(), dst.end(), id), id);
}

std::vector<const ImageRecord*> Dataset::records(Subset s) const {
  std::vector<const ImageRecord*> out;
  for (const auto& id : split.subset(s)) out.push_back(&at(id));
  return out;
}

void Dataset::validate() const {
  for (const auto& [id, rec] : images) {
    if (id != rec.image_id) throw ValidationError("image key mismatch for " + rec.image_id);
    rec.validate(classes);
  }
  std::set<std::string_view> seen;
  std::size_t total = 0;
  for (const Subset s : kAllSubsets) {
    for (const auto& id : split.subset(s)) {
      if (!images.contains(id)) {
        throw ValidationError("split references unknown image '" + id + "'");
      }
      if (!seen.insert(id).second) {
        throw ValidationError("image '" + id + "' appears in more than one split");
      }
      const bool labeled = at(id).labeled;
      if ((s == Subset::unlabeled) == labeled) {
        throw ValidationError("image '" + id + "' labeled flag disagrees with its split");
      }
      ++total;
    }
  }
  if (total != images.size()) throw ValidationError("split does not cover every image");
}

void Dataset::augment_train(std::span<const GeomTransform> transforms) {
  const std::vector<std::string> originals = split.train;
  for (const auto& id : originals) {
    for (auto& rec : augment(at(id), transforms)) add(std::move(rec), Subset::train);
  }
}

// ---------------------------------------------------------------------------
// Persistence

std::string serialize_manifest(const Dataset& ds, std::span<const Subset> subsets) {
  std::string out = fmt::format("{} ratios={},{},{} seed={}\n", kManifestMagic,
                                text::format_double(ds.split.ratios.train),
                                text::format_double(ds.split.ratios.val),
                                text::format_double(ds.split.ratios.test), ds.split.seed);
  out += kManifestColumns;
  out += '\n';
  for (const auto& [id, rec] : ds.images) {
    const auto s = ds.split.subset_of(id);
    if (!s || std::find(subsets.begin(), subsets.end(), *s) == subsets.end()) continue;
    // Pseudo and human labels are weighted equally; the column is reserved.
    out += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t1\n", id, rec.path, rec.width, rec.height,
                       to_string(*s), rec.labeled ? 1 : 0);
  }
  return out;
}

std::string serialize_manifest(const Dataset& ds) {
  return serialize_manifest(ds, kAllSubsets);
}

std::string serialize_annotations(const Dataset& ds) {
  std::string out(kAnnotationsMagic);
  out += '\n';
  out += kAnnotationColumns;
  out += '\n';
  for (const auto& [id, rec] : ds.images) {
    for (const auto& inst : rec.instances) {
      out += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n", id, inst.class_id,
                         text::format_double(inst.box.x_min()),
                         text::format_double(inst.box.y_min()),
                         text::format_double(inst.box.x_max()),
                         text::format_double(inst.box.y_max()), to_string(inst.provenance),
                         inst.source_iteration);
    }
  }
  return out;
}

namespace {

void parse_manifest_header(std::string_view line, Dataset& ds) {
  if (!line.starts_with(kManifestMagic)) {
    throw ParseError(1, "missing '" + std::string(kManifestMagic) + "' header");
  }
  for (auto tok : text::split_ws(line.substr(kManifestMagic.size()))) {
    if (tok.starts_with("ratios=")) {
      ds.split.ratios = SplitRatios::parse(tok.substr(7));
    } else if (tok.starts_with("seed=")) {
      auto v = text::parse_int(tok.substr(5));
      if (!v || *v < 0) throw ParseError(1, "bad seed");
      ds.split.seed = static_cast<std::uint64_t>(*v);
    }
  }
}

void parse_manifest(std::string_view body, Dataset& ds) {
  const auto ls = text::lines(body);
  if (ls.empty()) throw ParseError(0, "empty manifest");
  parse_manifest_header(ls[0], ds);
  for (std::size_t i = 1; i < ls.size(); ++i) {
    const std::size_t lineno = i + 1;
    if (ls[i].empty() || ls[i] == kManifestColumns) continue;
    const auto f = text::split(ls[i], '\t');
    if (f.size() != 7) throw ParseError(lineno, "expected 7 tab-separated fields");
    ImageRecord rec;
    rec.image_id = std::string(f[0]);
    rec.path = std::string(f[1]);
    const auto w = text::parse_int(f[2]);
    const auto h = text::parse_int(f[3]);
    if (!w || !h || *w <= 0 || *h <= 0) throw ParseError(lineno, "bad image dimensions");
    rec.width = static_cast<int>(*w);
    rec.height = static_cast<int>(*h);
    if (f[5] != "0" && f[5] != "1") throw ParseError(lineno, "labeled must be 0 or 1");
    rec.labeled = f[5] == "1";
    Subset s;
    try {
      s = parse_subset(f[4]);
    } catch (const ValidationError& e) {
      throw ParseError(lineno, e.what());
    }
    try {
      ds.add(std::move(rec), s);
    } catch (const ValidationError& e) {
      throw ParseError(lineno, e.what());
    }
  }
}

void parse_annotations(std::string_view body, Dataset& ds) {
  const auto ls = text::lines(body);
  if (ls.empty() || ls[0] != kAnnotationsMagic) {
    throw ParseError(1, "missing '" + std::string(kAnnotationsMagic) + "' header");
  }
  for (std::size_t i = 1; i < ls.size(); ++i) {
    const std::size_t lineno = i + 1;
    if (ls[i].empty() || ls[i] == kAnnotationColumns) continue;
    const auto f = text::split(ls[i], '\t');
    if (f.size() != 8) throw ParseError(lineno, "expected 8 tab-separated fields");
    try {
      auto& rec = ds.at(f[0]);
      const auto cls = text::parse_int(f[1]);
      const auto x0 = text::parse_double(f[2]);
      const auto y0 = text::parse_double(f[3]);
      const auto x1 = text::parse_double(f[4]);
      const auto y1 = text::parse_double(f[5]);
      const auto iter = text::parse_int(f[7]);
      if (!cls || !x0 || !y0 || !x1 || !y1 || !iter) throw ParseError(lineno, "bad number");
      rec.instances.emplace_back(BoundingBox(*x0, *y0, *x1, *y1), static_cast<int>(*cls),
                                 parse_provenance(f[6]), static_cast<int>(*iter));
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(lineno, e.what());
    }
  }
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.classes = ClassTable::parse(text::read_file((dir / "classes.txt").string()));
  parse_manifest(text::read_file((dir / "manifest.tsv").string()), ds);
  const auto ann = dir / "annotations.tsv";
  if (std::filesystem::exists(ann)) parse_annotations(text::read_file(ann.string()), ds);
  ds.validate();
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  text::write_file_atomic((dir / "classes.txt").string(), ds.classes.serialize());
  text::write_file_atomic((dir / "annotations.tsv").string(), serialize_annotations(ds));
  text::write_file_atomic((dir / "manifest.tsv").string(), serialize_manifest(ds));
}

std::string dataset_fingerprint(const Dataset& ds) {
  return ds.classes.serialize() + serialize_manifest(ds) + serialize_annotations(ds);
}

// ---------------------------------------------------------------------------
// DatasetStore

DatasetStore::DatasetStore(Dataset ds, std::optional<std::filesystem::path> dir)
    : data_(std::move(ds)), dir_(std::move(dir)) {
  data_.validate();
}

DatasetStore DatasetStore::open(const std::filesystem::path& dir) {
  return DatasetStore(load_dataset(dir), dir);
}

Dataset DatasetStore::snapshot() const {
  std::shared_lock lock(mutex_);
  return data_;
}

void DatasetStore::replace(Dataset next) {
  std::unique_lock lock(mutex_);
  publish_locked(std::move(next));
}

void DatasetStore::publish_locked(Dataset next) {
  next.validate();
  if (dir_) save_dataset(next, *dir_);
  data_ = std::move(next);
}

}  // namespace autolabel
