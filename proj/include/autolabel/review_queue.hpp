#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "autolabel/dataset.hpp"
#include "autolabel/error.hpp"

namespace autolabel {

enum class ReviewReason { low_confidence, count_outlier, committee_disagreement };
enum class TaskState { pending, in_review, resolved };

std::string_view to_string(ReviewReason r);
ReviewReason parse_review_reason(std::string_view s);
std::string_view to_string(TaskState s);
TaskState parse_task_state(std::string_view s);

struct ReviewTask {
  std::uint64_t task_id = 0;
  std::string image_id;
  std::string image_path;
  std::vector<Detection> predicted;
  ReviewReason reason = ReviewReason::low_confidence;
  TaskState state = TaskState::pending;
  std::optional<std::vector<Instance>> resolution;  // empty list = no objects
  int iteration = 1;
  double score = 0.0;  // uncertainty; the queue lists higher scores first

  bool operator==(const ReviewTask&) const = default;
};

/// {"class", "class_id", "box": [xmin, ymin, xmax, ymax], "confidence"}
nlohmann::json detection_json(const Detection& d, const ClassTable& classes);
/// {"class", "class_id", "box", "provenance", "source_iteration"}
nlohmann::json instance_json(const Instance& i, const ClassTable& classes);

void to_json(nlohmann::json& j, const ReviewTask& t, const ClassTable& classes);
ReviewTask review_task_from_json(const nlohmann::json& j, const ClassTable& classes);

/// Raised when submitted boxes fall outside the image. Carries the offending
/// indices into the submitted list.
class OutOfBoundsError : public ValidationError {
 public:
  OutOfBoundsError(const std::string& message, std::vector<std::size_t> offending)
      : ValidationError(message), offending_(std::move(offending)) {}
  const std::vector<std::size_t>& offending() const noexcept { return offending_; }

 private:
  std::vector<std::size_t> offending_;
};

/// A corrected box as submitted by a reviewer, before validation.
struct SubmittedBox {
  double x_min = 0.0, y_min = 0.0, x_max = 0.0, y_max = 0.0;
  int class_id = 0;
};

struct TaskFilter {
  std::optional<TaskState> state;
  std::optional<ReviewReason> reason;
  std::optional<int> iteration;
};

struct TaskPage {
  std::vector<ReviewTask> tasks;
  std::size_t total = 0;  // matching tasks across all pages
  std::size_t page = 0;   // 0-based
  std::size_t page_size = 20;
};

/// Thread-safe task store. Claims are compare-and-set on state; resolution
/// writes corrected instances through the dataset store while the queue lock
/// is held, so a resolved task and its data become visible together.
class ReviewQueue {
 public:
  /// With a file, existing tasks are loaded from it and every change is
  /// written back.
  explicit ReviewQueue(ClassTable classes,
                       std::optional<std::filesystem::path> file = std::nullopt);

  /// Adds a pending task unless the image already has an unresolved one, in
  /// which case that task's id is returned.
  std::uint64_t enqueue(std::string image_id, std::string image_path,
                        std::vector<Detection> predicted, ReviewReason reason, int iteration,
                        double score);

  /// Ordered by score descending, then task id ascending.
  TaskPage list(const TaskFilter& filter, std::size_t page, std::size_t page_size) const;

  ReviewTask get(std::uint64_t task_id) const;

  /// pending -> in_review. ConflictError otherwise.
  ReviewTask claim(std::uint64_t task_id);

  /// in_review -> resolved. The image receives exactly these instances with
  /// provenance `corrected`, becomes labeled, and joins train if it was in
  /// the unlabeled pool. Resubmitting the same boxes to a resolved task is a
  /// no-op; different boxes are a conflict.
  ReviewTask resolve(std::uint64_t task_id, const std::vector<SubmittedBox>& boxes,
                     DatasetStore& store);

  /// Images whose task is not yet resolved; the loop never promotes these.
  std::set<std::string, std::less<>> open_images() const;

  std::size_t size() const;

 private:
  void persist_locked() const;
  ReviewTask& find_locked(std::uint64_t task_id);

  mutable std::mutex mutex_;
  ClassTable classes_;
  std::map<std::uint64_t, ReviewTask> tasks_;
  std::uint64_t next_id_ = 1;
  std::optional<std::filesystem::path> file_;
};

}  // namespace autolabel
