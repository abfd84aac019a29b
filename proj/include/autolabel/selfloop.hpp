#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "autolabel/active.hpp"
#include "autolabel/dataset.hpp"
#include "autolabel/detector.hpp"
#include "autolabel/metrics.hpp"
#include "autolabel/review_queue.hpp"

namespace autolabel {

/// External trainer invocation: `<command> <train manifest> <val manifest>
/// <model tag>`. `trainer` is passed through untouched as trainer.json next
/// to the manifests.
struct RetrainHookConfig {
  std::string command;
  std::string tag_prefix = "model";
  nlohmann::json trainer = nlohmann::json::object();

  bool operator==(const RetrainHookConfig&) const = default;
};

struct LoopConfig {
  double pseudo_confidence_threshold = 0.5;
  double nms_iou_threshold = 0.5;
  int max_iterations = 5;
  std::size_t min_new_pseudo_instances = 1;
  double eval_iou_threshold = 0.5;
  bool outlier_filter = true;
  ActiveStrategy active;
  BackendDescriptor backend;
  std::vector<BackendDescriptor> committee;  // extra members for qbc
  RetrainHookConfig retrain_hook;
  std::size_t workers = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const LoopConfig& c);
void from_json(const nlohmann::json& j, LoopConfig& c);

struct IterationTimings {
  double detect_ms = 0.0;
  double filter_ms = 0.0;
  double retrain_ms = 0.0;
  double eval_ms = 0.0;
  double total_ms = 0.0;
};

struct IterationRecord {
  int iteration = 0;
  std::size_t pool_images = 0;          // unlabeled images considered
  std::size_t detected_instances = 0;   // after NMS, before the confidence cut
  std::size_t retained_instances = 0;   // after the confidence cut
  std::size_t images_pseudo_labeled = 0;
  std::size_t instances_promoted = 0;
  std::size_t images_flagged = 0;
  std::size_t flagged_outlier = 0;
  std::size_t flagged_active = 0;
  std::string model_tag;
  std::size_t train_images = 0;         // after commit
  std::optional<MetricsReport> validation;
  IterationTimings timings;

  /// Everything except wall-clock timings.
  bool same_outcome(const IterationRecord& o) const;
};

/// One JSON object, no trailing newline.
std::string serialize_iteration(const IterationRecord& r);
IterationRecord parse_iteration(std::string_view line);

/// Line-delimited audit trail.
std::vector<IterationRecord> load_audit_trail(const std::filesystem::path& file);
/// The raw line for iteration `i`, byte for byte, or nullopt.
std::optional<std::string> audit_line(const std::filesystem::path& file, int iteration);

struct RetrainRequest {
  std::filesystem::path train_manifest;
  std::filesystem::path val_manifest;
  std::string model_tag;
  int iteration = 0;
};

class RetrainHook {
 public:
  virtual ~RetrainHook() = default;
  /// Must throw (any Error) on failure; the iteration is then rolled back.
  virtual void retrain(const RetrainRequest& request) = 0;
};

class ExternalRetrainHook : public RetrainHook {
 public:
  explicit ExternalRetrainHook(std::string command) : command_(std::move(command)) {}
  void retrain(const RetrainRequest& request) override;

 private:
  std::string command_;
};

/// In-process hook; the default does nothing, which suits simulated
/// backends whose improvement is driven by their accuracy curve.
class FunctionRetrainHook : public RetrainHook {
 public:
  explicit FunctionRetrainHook(std::function<void(const RetrainRequest&)> fn = {})
      : fn_(std::move(fn)) {}
  void retrain(const RetrainRequest& request) override {
    if (fn_) fn_(request);
  }

 private:
  std::function<void(const RetrainRequest&)> fn_;
};

/// Live collaborators of a loop run.
struct LoopContext {
  DetectorBackend* backend = nullptr;
  std::vector<DetectorBackend*> committee;
  RetrainHook* hook = nullptr;
  ReviewQueue* queue = nullptr;                     // optional
  std::filesystem::path workdir;                    // per-iteration hand-off files
  std::optional<std::filesystem::path> audit_file;  // line-delimited records
  std::string model_tag;                            // current model, updated on commit
  /// Called when an iteration starts (after the lease is held).
  std::function<void(int)> on_iteration_start;
};

struct FlaggedImage {
  std::string image_id;
  ReviewReason reason = ReviewReason::low_confidence;
  double score = 0.0;
  std::vector<Detection> predicted;  // post-NMS, before the confidence cut
};

/// Steps 2 to 5 of an iteration applied to already computed detections.
struct IterationPlan {
  std::map<std::string, std::vector<Instance>, std::less<>> promotions;
  std::vector<FlaggedImage> flagged;
  std::size_t detected_instances = 0;
  std::size_t retained_instances = 0;
  std::size_t flagged_outlier = 0;
  std::size_t flagged_active = 0;
};

/// `committee` holds one detection map per extra committee member; the
/// primary detections are always the first member.
IterationPlan plan_iteration(const DetectionMap& pool_detections,
                             const std::vector<DetectionMap>& committee,
                             const LoopConfig& config, int iteration, std::size_t workers = 1);

/// Runs one iteration: detect on the unlabeled pool (minus images under
/// review), filter, flag, stage the promotions, retrain, then commit. Any
/// failure before the commit leaves the store untouched.
IterationRecord run_iteration(DatasetStore& store, const LoopConfig& config, int iteration,
                              LoopContext& ctx);

/// Iterates until max_iterations, an empty pool, or fewer promotions than
/// the floor. Holds the store's loop lease throughout (ConflictError if taken).
/// Iteration numbering continues after the last record in the audit file.
std::vector<IterationRecord> run_loop(DatasetStore& store, const LoopConfig& config,
                                      LoopContext& ctx);

}  // namespace autolabel
