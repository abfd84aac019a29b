#include "autolabel/review_queue.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "autolabel/text.hpp"

namespace autolabel {

std::string_view to_string(ReviewReason r) {
  switch (r) {
    case ReviewReason::low_confidence: return "low_confidence";
    case ReviewReason::count_outlier: return "count_outlier";
    case ReviewReason::committee_disagreement: return "committee_disagreement";
  }
  return "low_confidence";
}

ReviewReason parse_review_reason(std::string_view s) {
  for (auto r : {ReviewReason::low_confidence, ReviewReason::count_outlier,
                 ReviewReason::committee_disagreement}) {
    if (to_string(r) == s) return r;
  }
  throw ValidationError(fmt::format("unknown review reason '{}'", s));
}

std::string_view to_string(TaskState s) {
  switch (s) {
    case TaskState::pending: return "pending";
    case TaskState::in_review: return "in_review";
    case TaskState::resolved: return "resolved";
  }
  return "pending";
}

TaskState parse_task_state(std::string_view s) {
  for (auto t : {TaskState::pending, TaskState::in_review, TaskState::resolved}) {
    if (to_string(t) == s) return t;
  }
  throw ValidationError(fmt::format("unknown task state '{}'", s));
}

namespace {

nlohmann::json box_json(const BoundingBox& b) {
  return nlohmann::json::array({b.x_min(), b.y_min(), b.x_max(), b.y_max()});
}

BoundingBox box_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw ValidationError("box must be [xmin, ymin, xmax, ymax]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

int class_from(const nlohmann::json& j, const ClassTable& classes) {
  const int id = j.contains("class_id") ? j.at("class_id").get<int>()
                                        : classes.index_of(j.at("class").get<std::string>());
  if (!classes.contains(id)) throw ValidationError(fmt::format("unknown class id {}", id));
  return id;
}

}  // namespace

nlohmann::json detection_json(const Detection& d, const ClassTable& classes) {
  return {{"class", classes.name(d.class_id())},
          {"class_id", d.class_id()},
          {"box", box_json(d.box())},
          {"confidence", d.confidence()}};
}

nlohmann::json instance_json(const Instance& i, const ClassTable& classes) {
  return {{"class", classes.name(i.class_id)},
          {"class_id", i.class_id},
          {"box", box_json(i.box)},
          {"provenance", std::string(to_string(i.provenance))},
          {"source_iteration", i.source_iteration}};
}

void to_json(nlohmann::json& j, const ReviewTask& t, const ClassTable& classes) {
  auto predicted = nlohmann::json::array();
  for (const auto& d : t.predicted) predicted.push_back(detection_json(d, classes));
  j = {{"task_id", t.task_id},
       {"image_id", t.image_id},
       {"image_path", t.image_path},
       {"predicted", predicted},
       {"reason", std::string(to_string(t.reason))},
       {"state", std::string(to_string(t.state))},
       {"iteration", t.iteration},
       {"score", t.score},
       {"resolution", nullptr}};
  if (t.resolution) {
    auto res = nlohmann::json::array();
    for (const auto& i : *t.resolution) res.push_back(instance_json(i, classes));
    j["resolution"] = res;
  }
}

ReviewTask review_task_from_json(const nlohmann::json& j, const ClassTable& classes) {
  ReviewTask t;
  t.task_id = j.at("task_id").get<std::uint64_t>();
  t.image_id = j.at("image_id").get<std::string>();
  t.image_path = j.at("image_path").get<std::string>();
  for (const auto& d : j.at("predicted")) {
    t.predicted.emplace_back(box_from(d.at("box")), class_from(d, classes),
                             d.at("confidence").get<double>());
  }
  t.reason = parse_review_reason(j.at("reason").get<std::string>());
  t.state = parse_task_state(j.at("state").get<std::string>());
  t.iteration = j.at("iteration").get<int>();
  t.score = j.at("score").get<double>();
  if (const auto& r = j.at("resolution"); !r.is_null()) {
    std::vector<Instance> res;
    for (const auto& i : r) {
      res.emplace_back(box_from(i.at("box")), class_from(i, classes),
                       parse_provenance(i.at("provenance").get<std::string>()),
                       i.at("source_iteration").get<int>());
    }
    t.resolution = std::move(res);
  }
  return t;
}

// ---------------------------------------------------------------------------

ReviewQueue::ReviewQueue(ClassTable classes, std::optional<std::filesystem::path> file)
    : classes_(std::move(classes)), file_(std::move(file)) {
  if (!file_ || !std::filesystem::exists(*file_)) return;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text::read_file(file_->string()));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, "review queue file: " + std::string(e.what()));
  }
  next_id_ = j.at("next_id").get<std::uint64_t>();
  for (const auto& t : j.at("tasks")) {
    ReviewTask task = review_task_from_json(t, classes_);
    if (task.task_id >= next_id_) throw ParseError(0, "review queue file: task id beyond next_id");
    tasks_.emplace(task.task_id, std::move(task));
  }
}

void ReviewQueue::persist_locked() const {
  if (!file_) return;
  auto tasks = nlohmann::json::array();
  for (const auto& [_, t] : tasks_) {
    nlohmann::json tj;
    to_json(tj, t, classes_);
    tasks.push_back(std::move(tj));
  }
  const nlohmann::json j = {{"version", 1}, {"next_id", next_id_}, {"tasks", tasks}};
  text::write_file_atomic(file_->string(), j.dump(2) + "\n");
}

ReviewTask& ReviewQueue::find_locked(std::uint64_t task_id) {
  const auto it = tasks_.find(task_id);
  if (it == tasks_.end()) throw NotFoundError(fmt::format("no review task {}", task_id));
  return it->second;
}

std::uint64_t ReviewQueue::enqueue(std::string image_id, std::string image_path,
                                   std::vector<Detection> predicted, ReviewReason reason,
                                   int iteration, double score) {
  if (iteration < 1) throw ValidationError("review tasks belong to a loop iteration >= 1");
  if (!std::isfinite(score) || score < 0.0) throw ValidationError("task score must be >= 0");
  std::lock_guard lock(mutex_);
  for (const auto& [id, t] : tasks_) {
    if (t.image_id == image_id && t.state != TaskState::resolved) return id;
  }
  ReviewTask t;
  t.task_id = next_id_++;
  t.image_id = std::move(image_id);
  t.image_path = std::move(image_path);
  t.predicted = std::move(predicted);
  t.reason = reason;
  t.iteration = iteration;
  t.score = score;
  const auto id = t.task_id;
  tasks_.emplace(id, std::move(t));
  try {
    persist_locked();
  } catch (...) {
    tasks_.erase(id);
    --next_id_;
    throw;
  }
  return id;
}

TaskPage ReviewQueue::list(const TaskFilter& filter, std::size_t page,
                           std::size_t page_size) const {
  if (page_size == 0) throw ValidationError("page size must be positive");
  std::vector<ReviewTask> matching;
  {
    std::lock_guard lock(mutex_);
    for (const auto& [_, t] : tasks_) {
      if (filter.state && t.state != *filter.state) continue;
      if (filter.reason && t.reason != *filter.reason) continue;
      if (filter.iteration && t.iteration != *filter.iteration) continue;
      matching.push_back(t);
    }
  }
  std::sort(matching.begin(), matching.end(), [](const ReviewTask& a, const ReviewTask& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.task_id < b.task_id;
  });
  TaskPage out;
  out.total = matching.size();
  out.page = page;
  out.page_size = page_size;
  const std::size_t begin = std::min(matching.size(), page * page_size);
  const std::size_t end = std::min(matching.size(), begin + page_size);
  out.tasks.assign(std::make_move_iterator(matching.begin() + static_cast<std::ptrdiff_t>(begin)),
                   std::make_move_iterator(matching.begin() + static_cast<std::ptrdiff_t>(end)));
  return out;
}

ReviewTask ReviewQueue::get(std::uint64_t task_id) const {
  std::lock_guard lock(mutex_);
  const auto it = tasks_.find(task_id);
  if (it == tasks_.end()) throw NotFoundError(fmt::format("no review task {}", task_id));
  return it->second;
}

ReviewTask ReviewQueue::claim(std::uint64_t task_id) {
  std::lock_guard lock(mutex_);
  ReviewTask& t = find_locked(task_id);
  if (t.state != TaskState::pending) {
    throw ConflictError(fmt::format("task {} is {}, not pending", task_id, to_string(t.state)));
  }
  t.state = TaskState::in_review;
  try {
    persist_locked();
  } catch (...) {
    t.state = TaskState::pending;
    throw;
  }
  return t;
}

ReviewTask ReviewQueue::resolve(std::uint64_t task_id, const std::vector<SubmittedBox>& boxes,
                                DatasetStore& store) {
  std::lock_guard lock(mutex_);
  ReviewTask& t = find_locked(task_id);

  const auto [width, height] = store.read([&](const Dataset& ds) {
    const auto& rec = ds.at(t.image_id);
    return std::pair{rec.width, rec.height};
  });
  std::vector<std::size_t> offending;
  std::vector<Instance> corrected;
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    const auto& b = boxes[k];
    const bool finite = std::isfinite(b.x_min) && std::isfinite(b.y_min) &&
                        std::isfinite(b.x_max) && std::isfinite(b.y_max);
    if (!finite || b.x_min < 0.0 || b.y_min < 0.0 || b.x_max > width || b.y_max > height ||
        b.x_min >= b.x_max || b.y_min >= b.y_max) {
      offending.push_back(k);
      continue;
    }
    if (!classes_.contains(b.class_id)) {
      throw ValidationError(fmt::format("box {} has unknown class id {}", k, b.class_id));
    }
    corrected.emplace_back(BoundingBox(b.x_min, b.y_min, b.x_max, b.y_max), b.class_id,
                           Provenance::corrected, t.iteration);
  }
  if (!offending.empty()) {
    std::string list;
    for (const auto k : offending) list += (list.empty() ? "" : ", ") + std::to_string(k);
    throw OutOfBoundsError(fmt::format("boxes outside the {}x{} image: {}", width, height, list),
                           offending);
  }

  if (t.state == TaskState::resolved) {
    if (t.resolution && *t.resolution == corrected) return t;
    throw ConflictError(fmt::format("task {} is already resolved differently", task_id));
  }
  if (t.state != TaskState::in_review) {
    throw ConflictError(fmt::format("task {} must be claimed before resolution", task_id));
  }

  store.update([&](Dataset& ds) {
    auto& rec = ds.at(t.image_id);
    rec.instances = corrected;
    rec.labeled = true;
    if (ds.split.subset_of(t.image_id) == Subset::unlabeled) {
      ds.split.move(t.image_id, Subset::unlabeled, Subset::train);
    }
  });
  t.state = TaskState::resolved;
  t.resolution = std::move(corrected);
  persist_locked();
  return t;
}

std::set<std::string, std::less<>> ReviewQueue::open_images() const {
  std::lock_guard lock(mutex_);
  std::set<std::string, std::less<>> out;
  for (const auto& [_, t] : tasks_) {
    if (t.state != TaskState::resolved) out.insert(t.image_id);
  }
  return out;
}

std::size_t ReviewQueue::size() const {
  std::lock_guard lock(mutex_);
  return tasks_.size();
}

}  // namespace autolabel
