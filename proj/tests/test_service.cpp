#include <future>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "doctest.h"

#include "autolabel/error.hpp"
#include "autolabel/metrics.hpp"
#include "autolabel/service.hpp"
#include "support.hpp"

// After Eigen: resolv.h, pulled in by httplib, defines _res.
#include <httplib.h>

using namespace autolabel;
using testing_support::TempDir;

namespace {

struct Server {
  explicit Server(std::size_t images = 130, std::size_t labeled = 30, LoopFactory factory = {})
      : sd(testing_support::small_dataset(images, labeled, 11)),
        store((save_dataset(sd.dataset, tmp / "store"), DatasetStore::open(tmp / "store"))),
        queue(sd.dataset.classes, tmp / "tasks.json") {
    ServiceOptions o;
    o.workdir = tmp / "work";
    o.audit_file = tmp / "audit.jsonl";
    o.image_root = tmp / "images";
    o.loop_defaults.outlier_filter = false;
    o.loop_defaults.max_iterations = 1;
    o.factory = std::move(factory);
    service = std::make_unique<Service>(store, queue, o);
    port = service->start_background();
  }
  ~Server() { service->stop(); }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(30, 0);
    return c;
  }

  std::uint64_t add(std::size_t k, double score = 0.5) {
    const auto& rec = sd.dataset.at(sd.dataset.split.unlabeled.at(k));
    return queue.enqueue(rec.image_id, rec.path, {Detection(BoundingBox(1, 1, 20, 20), 0, 0.3)},
                         ReviewReason::low_confidence, 1, score);
  }

  static nlohmann::json body(const httplib::Result& r) {
    REQUIRE(r);
    return nlohmann::json::parse(r->body);
  }

  TempDir tmp;
  SyntheticDataset sd;
  DatasetStore store;
  ReviewQueue queue;
  std::unique_ptr<Service> service;
  int port = 0;
};

std::string resolution(const std::vector<std::array<double, 4>>& boxes, const char* cls = "hen") {
  nlohmann::json inst = nlohmann::json::array();
  for (const auto& b : boxes) inst.push_back({{"box", b}, {"class", cls}});
  return nlohmann::json{{"instances", inst}}.dump();
}

}  // namespace

TEST_CASE("empty queue lists nothing") {
  Server s;
  auto c = s.client();
  const auto r = c.Get("/api/v1/tasks");
  REQUIRE(r);
  CHECK(r->status == 200);
  const auto j = Server::body(r);
  CHECK(j["tasks"].empty());
  CHECK(j["total"] == 0);
  CHECK(j["page"] == 0);
  CHECK(j["page_size"] == 20);
}

TEST_CASE("a hundred tasks come back as five pages of twenty") {
  Server s;
  for (std::size_t k = 0; k < 100; ++k) s.add(k, double(k % 9));
  auto c = s.client();
  std::set<std::uint64_t> seen;
  double last = 1e9;
  for (int page = 0; page < 5; ++page) {
    const auto j = Server::body(c.Get(fmt::format("/api/v1/tasks?page={}&page_size=20", page)));
    CHECK(j["total"] == 100);
    REQUIRE(j["tasks"].size() == 20);
    for (const auto& t : j["tasks"]) {
      CHECK(t["score"].get<double>() <= last);
      last = t["score"].get<double>();
      seen.insert(t["task_id"].get<std::uint64_t>());
    }
  }
  CHECK(seen.size() == 100);
  CHECK(Server::body(c.Get("/api/v1/tasks?page=5&page_size=20"))["tasks"].empty());

  const auto bad = c.Get("/api/v1/tasks?page_size=0");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  CHECK(c.Get("/api/v1/tasks?state=bogus")->status == 400);
  CHECK(Server::body(c.Get("/api/v1/tasks?state=in_review"))["total"] == 0);
}

TEST_CASE("concurrent claims: one wins, one conflicts") {
  Server s;
  const auto id = s.add(0);
  const auto path = fmt::format("/api/v1/tasks/{}/claim", id);
  std::promise<void> go;
  auto gate = go.get_future().share();
  int status[2] = {0, 0};
  std::vector<std::thread> threads;
  for (int i = 0; i < 2; ++i) {
    threads.emplace_back([&, i] {
      auto c = s.client();
      gate.wait();
      const auto r = c.Post(path, "", "application/json");
      status[i] = r ? r->status : -1;
    });
  }
  go.set_value();
  for (auto& t : threads) t.join();
  CHECK(std::min(status[0], status[1]) == 200);
  CHECK(std::max(status[0], status[1]) == 409);

  auto c = s.client();
  const auto j = Server::body(c.Get(fmt::format("/api/v1/tasks/{}", id)));
  CHECK(j["state"] == "in_review");
}

TEST_CASE("errors share one shape") {
  Server s;
  auto c = s.client();
  const auto r = c.Get("/api/v1/tasks/999");
  REQUIRE(r);
  CHECK(r->status == 404);
  const auto j = nlohmann::json::parse(r->body);
  CHECK(j["error"]["code"] == "not_found");
  CHECK(j["error"]["message"].is_string());

  const auto id = s.add(0);
  const auto bad = c.Post(fmt::format("/api/v1/tasks/{}/resolution", id), "{not json", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  CHECK(nlohmann::json::parse(bad->body)["error"]["code"] == "validation");
}

TEST_CASE("out of bounds resolution is a 400 naming the boxes") {
  Server s;
  const auto id = s.add(0);
  auto c = s.client();
  REQUIRE(c.Post(fmt::format("/api/v1/tasks/{}/claim", id), "", "application/json")->status == 200);
  const auto before = s.store.snapshot();
  const auto r = c.Post(fmt::format("/api/v1/tasks/{}/resolution", id),
                        resolution({{1, 1, 5, 5}, {600, 1, 700, 5}, {1, 1, 5, 5000}}),
                        "application/json");
  REQUIRE(r);
  CHECK(r->status == 400);
  const auto j = nlohmann::json::parse(r->body);
  CHECK(j["error"]["code"] == "validation");
  CHECK(j["error"]["offending"] == nlohmann::json::array({1, 2}));
  CHECK(s.store.snapshot() == before);
}

TEST_CASE("resolution writes the corrected instances and is idempotent") {
  Server s;
  const auto id = s.add(3);
  const std::string image = s.sd.dataset.split.unlabeled.at(3);
  auto c = s.client();
  const auto path = fmt::format("/api/v1/tasks/{}/resolution", id);
  const std::string body = resolution({{2, 2, 30, 30}, {40, 40, 60, 70}, {5, 50, 25, 90}});

  CHECK(c.Post(path, body, "application/json")->status == 409);  // not claimed
  REQUIRE(c.Post(fmt::format("/api/v1/tasks/{}/claim", id), "", "application/json")->status == 200);
  const auto r = c.Post(path, body, "application/json");
  REQUIRE(r);
  CHECK(r->status == 200);
  const auto j = nlohmann::json::parse(r->body);
  CHECK(j["instances_written"] == 3);
  CHECK(j["task"]["state"] == "resolved");

  const auto ds = s.store.snapshot();
  const auto& rec = ds.at(image);
  CHECK(rec.labeled);
  REQUIRE(rec.instances.size() == 3);
  for (const auto& i : rec.instances) {
    CHECK(i.class_id == 1);
    CHECK(i.provenance == Provenance::corrected);
  }
  CHECK(ds.split.subset_of(image) == Subset::train);

  // The same submission again changes nothing and succeeds.
  const auto again = c.Post(path, body, "application/json");
  REQUIRE(again);
  CHECK(again->status == 200);
  CHECK(s.store.snapshot() == ds);
  // A different one conflicts.
  CHECK(c.Post(path, resolution({{2, 2, 30, 31}}), "application/json")->status == 409);
  CHECK(s.store.snapshot() == ds);
}

TEST_CASE("loop start, status and the conflict on a second start") {
  std::promise<void> release;
  auto gate = release.get_future().share();
  std::atomic<bool> in_hook{false};
  LoopFactory factory;
  Server* server = nullptr;
  factory = [&](const LoopConfig&, const Dataset& ds) {
    LoopResources r;
    r.backend = std::make_unique<SimulatedBackend>("sim", ds.classes, NoiseModel::noiseless(), 5,
                                                   server->sd.hidden_truth);
    r.hook = std::make_unique<FunctionRetrainHook>([&](const RetrainRequest&) {
      in_hook = true;
      gate.wait();
    });
    return r;
  };
  Server s(60, 20, factory);
  server = &s;
  auto c = s.client();

  auto st = Server::body(c.Get("/api/v1/loop/status"));
  CHECK(st["state"] == "idle");
  CHECK(st["iteration"] == 0);
  CHECK(st["persisted_iterations"] == 0);

  const auto start = c.Post("/api/v1/loop/start", "{}", "application/json");
  REQUIRE(start);
  CHECK(start->status == 202);
  for (int i = 0; i < 500 && !in_hook; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
  REQUIRE(in_hook);
  st = Server::body(c.Get("/api/v1/loop/status"));
  CHECK(st["state"] == "running");
  CHECK(st["iteration"] == 1);

  const auto second = c.Post("/api/v1/loop/start", "{}", "application/json");
  REQUIRE(second);
  CHECK(second->status == 409);
  CHECK(nlohmann::json::parse(second->body)["error"]["code"] == "conflict");

  release.set_value();
  s.service->join_loop();
  st = Server::body(c.Get("/api/v1/loop/status"));
  CHECK(st["state"] == "finished");
  CHECK(st["completed"] == 1);
  CHECK(st["persisted_iterations"] == 1);

  // The iteration report is the audit line, byte for byte.
  const auto rep = c.Get("/api/v1/reports/iterations/1");
  REQUIRE(rep);
  CHECK(rep->status == 200);
  CHECK(rep->body == *audit_line(s.tmp / "audit.jsonl", 1));
  CHECK(c.Get("/api/v1/reports/iterations/2")->status == 404);

  const auto m = c.Get("/api/v1/reports/metrics/1");
  REQUIRE(m);
  CHECK(m->status == 200);
  CHECK(nlohmann::json::parse(m->body).contains("overall"));

  // Bad overrides are rejected before anything starts.
  const auto bad = c.Post("/api/v1/loop/start", R"({"pseudo_confidence_threshold": 7})",
                          "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
}

TEST_CASE("evaluate matches the key-value report") {
  Server s(60, 30);
  const Dataset ds = s.store.snapshot();
  DetectionMap dets;
  for (const auto& id : ds.split.val) {
    const auto& rec = ds.at(id);
    auto& v = dets[id];
    for (std::size_t k = 0; k < rec.instances.size(); ++k) {
      if (k % 3 != 2) v.emplace_back(rec.instances[k].box, rec.instances[k].class_id, 0.8);
    }
  }
  const std::string file = emit_detection_file(dets, ds.classes);
  auto c = s.client();
  const auto r = c.Post("/api/v1/reports/evaluate",
                        nlohmann::json{{"detections", file}, {"subset", "val"}}.dump(),
                        "application/json");
  REQUIRE(r);
  CHECK(r->status == 200);
  CHECK(r->body == format_report_kv(evaluate_subset(ds, dets, Subset::val, EvalOptions{})));

  const auto bad = c.Post("/api/v1/reports/evaluate",
                          nlohmann::json{{"detections", "x.jpg 0 0 1 1 99 0.5\n"}}.dump(),
                          "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
}

TEST_CASE("images are served from the image root") {
  Server s(20, 10);
  const auto& rec = s.sd.dataset.at(s.sd.dataset.split.unlabeled.at(0));
  const auto file = s.tmp / "images" / rec.path;
  std::filesystem::create_directories(file.parent_path());
  const std::string bytes("\xff\xd8\xff\xe0 fake jpeg", 15);
  std::ofstream(file, std::ios::binary) << bytes;

  auto c = s.client();
  const auto r = c.Get("/api/v1/images/" + rec.image_id);
  REQUIRE(r);
  CHECK(r->status == 200);
  CHECK(r->body == bytes);
  CHECK(r->get_header_value("Content-Type") == "image/jpeg");

  CHECK(c.Get("/api/v1/images/" + s.sd.dataset.split.unlabeled.at(1))->status == 404);
  CHECK(c.Get("/api/v1/images/nope")->status == 404);
}

TEST_CASE("status codes per error kind") {
  CHECK(http_status_for("validation") == 400);
  CHECK(http_status_for("parse") == 400);
  CHECK(http_status_for("not_found") == 404);
  CHECK(http_status_for("conflict") == 409);
  CHECK(http_status_for("external") == 502);
  CHECK(http_status_for("io") == 500);
}
