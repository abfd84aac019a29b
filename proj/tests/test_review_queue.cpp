#include <atomic>
#include <thread>

#include "doctest.h"

#include "autolabel/error.hpp"
#include "autolabel/review_queue.hpp"
#include "support.hpp"

using namespace autolabel;
using testing_support::TempDir;

namespace {

struct Fixture {
  SyntheticDataset sd = testing_support::small_dataset(40, 10);
  DatasetStore store{sd.dataset};
  ReviewQueue queue{sd.dataset.classes};

  std::string pool_image(std::size_t k = 0) const { return sd.dataset.split.unlabeled.at(k); }

  std::uint64_t add(std::size_t k, double score = 0.5, int iteration = 1) {
    const auto& rec = sd.dataset.at(pool_image(k));
    return queue.enqueue(rec.image_id, rec.path,
                         {Detection(BoundingBox(1, 1, 20, 20), 0, 0.3)},
                         ReviewReason::low_confidence, iteration, score);
  }
};

}  // namespace

TEST_CASE("enqueue deduplicates open tasks per image") {
  Fixture f;
  const auto a = f.add(0);
  CHECK(f.add(0) == a);
  CHECK(f.add(1) != a);
  CHECK(f.queue.size() == 2);
  CHECK(f.queue.open_images().count(f.pool_image(0)) == 1);
  CHECK_THROWS_AS(f.add(2, 0.5, 0), ValidationError);
  CHECK_THROWS_AS(f.queue.get(999), NotFoundError);
}

TEST_CASE("listing orders by score and paginates") {
  Fixture f;
  for (std::size_t k = 0; k < 30; ++k) f.add(k, double(k % 7) / 7.0);
  TaskFilter all;
  const auto p0 = f.queue.list(all, 0, 8);
  CHECK(p0.total == 30);
  CHECK(p0.tasks.size() == 8);
  std::vector<std::uint64_t> seen;
  for (std::size_t page = 0; page < 4; ++page) {
    for (const auto& t : f.queue.list(all, page, 8).tasks) seen.push_back(t.task_id);
  }
  CHECK(seen.size() == 30);
  std::sort(seen.begin(), seen.end());
  CHECK(std::unique(seen.begin(), seen.end()) == seen.end());
  for (std::size_t i = 1; i < p0.tasks.size(); ++i) {
    const auto &a = p0.tasks[i - 1], &b = p0.tasks[i];
    CHECK((a.score > b.score || (a.score == b.score && a.task_id < b.task_id)));
  }
  CHECK(f.queue.list(all, 10, 8).tasks.empty());

  f.queue.claim(p0.tasks[0].task_id);
  TaskFilter claimed;
  claimed.state = TaskState::in_review;
  CHECK(f.queue.list(claimed, 0, 50).total == 1);
}

TEST_CASE("claims are exclusive under contention") {
  Fixture f;
  const auto id = f.add(0);
  std::atomic<int> won{0}, conflicts{0};
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&] {
      try {
        f.queue.claim(id);
        ++won;
      } catch (const ConflictError&) {
        ++conflicts;
      }
    });
  }
  for (auto& t : threads) t.join();
  CHECK(won == 1);
  CHECK(conflicts == 7);
  CHECK(f.queue.get(id).state == TaskState::in_review);
}

TEST_CASE("resolution writes corrected instances and moves the image to train") {
  Fixture f;
  const auto id = f.add(0, 0.5, 3);
  const std::vector<SubmittedBox> boxes = {{10, 10, 30, 40, 1}, {50, 50, 70, 80, 0}};
  CHECK_THROWS_AS(f.queue.resolve(id, boxes, f.store), ConflictError);  // not claimed yet
  f.queue.claim(id);
  const auto t = f.queue.resolve(id, boxes, f.store);
  CHECK(t.state == TaskState::resolved);

  const auto ds = f.store.snapshot();
  const auto& rec = ds.at(f.pool_image(0));
  CHECK(rec.labeled);
  REQUIRE(rec.instances.size() == 2);
  CHECK(rec.instances[0].box == BoundingBox(10, 10, 30, 40));
  CHECK(rec.instances[0].class_id == 1);
  CHECK(rec.instances[0].provenance == Provenance::corrected);
  CHECK(rec.instances[0].source_iteration == 3);
  CHECK(ds.split.subset_of(f.pool_image(0)) == Subset::train);
  CHECK(f.queue.open_images().empty());

  // Same boxes again: no-op. Different boxes: conflict.
  CHECK(f.queue.resolve(id, boxes, f.store).state == TaskState::resolved);
  const std::vector<SubmittedBox> other = {{10, 10, 31, 40, 1}};
  CHECK_THROWS_AS(f.queue.resolve(id, other, f.store), ConflictError);
  CHECK(f.store.snapshot() == ds);
}

TEST_CASE("out of bounds boxes are rejected with their indices") {
  Fixture f;
  const auto id = f.add(0);
  f.queue.claim(id);
  const auto before = f.store.snapshot();
  const std::vector<SubmittedBox> boxes = {{1, 1, 5, 5, 0}, {600, 1, 700, 5, 0},
                                           {1, 1, 5, 5000, 1}, {5, 5, 5, 9, 0}};
  try {
    f.queue.resolve(id, boxes, f.store);
    FAIL("expected rejection");
  } catch (const OutOfBoundsError& e) {
    CHECK(e.offending() == std::vector<std::size_t>{1, 2, 3});
  }
  CHECK(f.store.snapshot() == before);
  CHECK(f.queue.get(id).state == TaskState::in_review);

  const std::vector<SubmittedBox> bad_class = {{1, 1, 5, 5, 9}};
  CHECK_THROWS_AS(f.queue.resolve(id, bad_class, f.store), ValidationError);
}

TEST_CASE("an empty resolution means no objects") {
  Fixture f;
  const auto id = f.add(0);
  f.queue.claim(id);
  f.queue.resolve(id, {}, f.store);
  const auto ds = f.store.snapshot();
  CHECK(ds.at(f.pool_image(0)).labeled);
  CHECK(ds.at(f.pool_image(0)).instances.empty());
}

TEST_CASE("queue persists across instances") {
  TempDir tmp;
  Fixture f;
  const auto file = tmp / "tasks.json";
  std::uint64_t id;
  {
    ReviewQueue q(f.sd.dataset.classes, file);
    id = q.enqueue("x", "x.jpg", {Detection(BoundingBox(0, 0, 4, 4), 1, 0.25)},
                   ReviewReason::count_outlier, 2, 1.5);
    q.claim(id);
  }
  ReviewQueue q(f.sd.dataset.classes, file);
  const auto t = q.get(id);
  CHECK(t.state == TaskState::in_review);
  CHECK(t.reason == ReviewReason::count_outlier);
  CHECK(t.predicted.at(0) == Detection(BoundingBox(0, 0, 4, 4), 1, 0.25));
  CHECK(q.enqueue("y", "", {}, ReviewReason::low_confidence, 1, 0) == id + 1);

  nlohmann::json j;
  to_json(j, t, f.sd.dataset.classes);
  CHECK(j["predicted"][0]["class"] == "hen");
  CHECK(review_task_from_json(j, f.sd.dataset.classes) == t);
}
