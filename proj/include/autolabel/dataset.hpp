#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "autolabel/geometry.hpp"

namespace autolabel {

/// Ordered, unique class names; indices are contiguous from 0.
class ClassTable {
 public:
  ClassTable() = default;
  explicit ClassTable(std::vector<std::string> names);

  std::size_t size() const noexcept { return names_.size(); }
  bool contains(int class_id) const noexcept {
    return class_id >= 0 && static_cast<std::size_t>(class_id) < names_.size();
  }
  const std::string& name(int class_id) const;
  std::optional<int> find(std::string_view name) const;
  /// Like find() but throws ValidationError for unknown names.
  int index_of(std::string_view name) const;
  const std::vector<std::string>& names() const noexcept { return names_; }

  /// One name per line; blank lines and '#' comments ignored.
  static ClassTable parse(std::string_view text);
  std::string serialize() const;

  bool operator==(const ClassTable& o) const { return names_ == o.names_; }

 private:
  std::vector<std::string> names_;
};

enum class Provenance { human, pseudo, corrected };

std::string_view to_string(Provenance p);
Provenance parse_provenance(std::string_view token);

/// One labeled object. Human seed labels carry iteration 0; pseudo and
/// corrected labels carry the loop iteration that produced them (>= 1).
struct Instance {
  Instance(BoundingBox box, int class_id, Provenance provenance = Provenance::human,
           int source_iteration = 0);

  BoundingBox box;
  int class_id;
  Provenance provenance;
  int source_iteration;

  void validate() const;
  bool operator==(const Instance&) const = default;
};

struct ImageRecord {
  std::string image_id;
  std::string path;
  int width = 0;
  int height = 0;
  std::vector<Instance> instances;
  bool labeled = false;

  void validate(const ClassTable& classes) const;
  bool operator==(const ImageRecord&) const = default;
};

enum class Subset { train, val, test, unlabeled };

std::string_view to_string(Subset s);
Subset parse_subset(std::string_view token);

struct SplitRatios {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;

  /// "0.6,0.2,0.2"
  static SplitRatios parse(std::string_view text);
  void validate() const;
  bool operator==(const SplitRatios&) const = default;
};

/// Disjoint train/val/test/unlabeled partition of image ids, with the ratios
/// and seed that produced it.
struct DatasetSplit {
  std::vector<std::string> train, val, test, unlabeled;
  SplitRatios ratios;
  std::uint64_t seed = 0;

  std::vector<std::string>& subset(Subset s);
  const std::vector<std::string>& subset(Subset s) const;
  std::optional<Subset> subset_of(std::string_view image_id) const;
  /// Moves an id between subsets; throws if it is not in `from`.
  void move(std::string_view image_id, Subset from, Subset to);

  bool operator==(const DatasetSplit&) const = default;
};

/// Partitions the labeled images by ratio; unlabeled images go to the
/// unlabeled pool untouched. val and test receive floor(n * ratio) images
/// (at least one each) and train takes the remainder. Deterministic for a
/// fixed seed. Throws ValidationError with fewer than three labeled images.
DatasetSplit split(std::span<const ImageRecord> images, SplitRatios ratios,
                   std::uint64_t seed);

/// One new record per transform, id `<id>__<transform>`, with every box
/// mapped through apply_transform and provenance preserved.
std::vector<ImageRecord> augment(const ImageRecord& record,
                                 std::span<const GeomTransform> transforms);

/// A complete dataset: class table, image records keyed by id, and the split.
struct Dataset {
  ClassTable classes;
  std::map<std::string, ImageRecord, std::less<>> images;
  DatasetSplit split;

  const ImageRecord& at(std::string_view image_id) const;
  ImageRecord& at(std::string_view image_id);
  void add(ImageRecord record, Subset subset);

  std::vector<const ImageRecord*> records(Subset s) const;

  /// Checks every record invariant and that the split is a partition of the
  /// image ids.
  void validate() const;

  /// Adds one augmented copy of every train image per transform; the copies
  /// join train (augmentation never crosses splits).
  void augment_train(std::span<const GeomTransform> transforms);

  bool operator==(const Dataset&) const = default;
};

/// Manifest text: versioned header, then one tab-separated row per image
/// (image_id, path, width, height, split, labeled, weight).
std::string serialize_manifest(const Dataset& ds);
/// Manifest restricted to the given subsets (used for trainer hand-off).
std::string serialize_manifest(const Dataset& ds, std::span<const Subset> subsets);
std::string serialize_annotations(const Dataset& ds);

/// Parses a store directory (classes.txt, manifest.tsv, annotations.tsv).
Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);

/// Canonical byte image of a dataset; equal datasets produce equal bytes.
std::string dataset_fingerprint(const Dataset& ds);

/// Concurrent readers, single writer. Every mutation goes through update(),
/// which copies, mutates, validates, persists, and only then publishes; a
/// throwing mutation leaves both memory and disk untouched.
class DatasetStore {
 public:
  explicit DatasetStore(Dataset ds, std::optional<std::filesystem::path> dir = std::nullopt);

  static DatasetStore open(const std::filesystem::path& dir);

  Dataset snapshot() const;

  template <class F>
  auto read(F&& f) const {
    std::shared_lock lock(mutex_);
    return f(static_cast<const Dataset&>(data_));
  }

  template <class F>
  void update(F&& mutate) {
    std::unique_lock lock(mutex_);
    Dataset next = data_;
    mutate(next);
    publish_locked(std::move(next));
  }

  void replace(Dataset next);

  const std::optional<std::filesystem::path>& directory() const noexcept { return dir_; }

  /// Exclusive loop lease: at most one self-training loop per store.
  bool try_acquire_lease() noexcept { return !leased_.exchange(true); }
  void release_lease() noexcept { leased_ = false; }
  bool leased() const noexcept { return leased_; }

 private:
  void publish_locked(Dataset next);

  mutable std::shared_mutex mutex_;
  Dataset data_;
  std::optional<std::filesystem::path> dir_;
  std::atomic<bool> leased_{false};
};

}  // namespace autolabel
