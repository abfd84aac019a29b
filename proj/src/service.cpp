#include "autolabel/service.hpp"

#include <httplib.h>

#include <fmt/format.h>

#include "autolabel/error.hpp"
#include "autolabel/metrics.hpp"
#include "autolabel/text.hpp"

namespace autolabel {

int http_status_for(const std::string& kind) {
  if (kind == "validation" || kind == "parse") return 400;
  if (kind == "not_found") return 404;
  if (kind == "conflict") return 409;
  if (kind == "external") return 502;
  return 500;
}

std::string_view to_string(LoopState s) {
  switch (s) {
    case LoopState::idle: return "idle";
    case LoopState::running: return "running";
    case LoopState::finished: return "finished";
    case LoopState::failed: return "failed";
  }
  return "idle";
}

LoopResources default_loop_factory(const LoopConfig& config, const Dataset& ds,
                                   const std::filesystem::path& workdir) {
  const auto fill = [&](BackendDescriptor d) {
    if (d.classes.size() == 0) d.classes = ds.classes;
    return d;
  };
  LoopResources r;
  BackendContext ctx;
  ctx.workdir = workdir;
  ctx.workers = config.workers;
  r.backend = make_backend(fill(config.backend), ctx);
  for (const auto& m : config.committee) r.committee.push_back(make_backend(fill(m), ctx));
  if (config.retrain_hook.command.empty()) {
    r.hook = std::make_unique<FunctionRetrainHook>();
  } else {
    r.hook = std::make_unique<ExternalRetrainHook>(config.retrain_hook.command);
  }
  return r;
}

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const std::string& kind, const std::string& message,
                nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json err = {{"code", kind}, {"message", message}};
  err.update(extra);
  send_json(res, http_status_for(kind), {{"error", err}});
}

template <class F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const OutOfBoundsError& e) {
      send_error(res, e.kind(), e.what(), {{"offending", e.offending()}});
    } catch (const Error& e) {
      send_error(res, e.kind(), e.what());
    } catch (const nlohmann::json::exception& e) {
      send_error(res, "validation", std::string("malformed request body: ") + e.what());
    } catch (const std::exception& e) {
      send_error(res, "internal", e.what());
    }
  };
}

nlohmann::json parse_body(const httplib::Request& req) {
  if (text::trim(req.body).empty()) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("request body is not JSON: ") + e.what());
  }
}

std::size_t query_size(const httplib::Request& req, const char* key, std::size_t fallback) {
  if (!req.has_param(key)) return fallback;
  const auto v = text::parse_int(req.get_param_value(key));
  if (!v || *v < 0) throw ValidationError(fmt::format("query parameter '{}' must be a non-negative integer", key));
  return static_cast<std::size_t>(*v);
}

std::uint64_t path_id(const httplib::Request& req) {
  const auto v = text::parse_int(req.matches[1].str());
  if (!v || *v < 0) throw ValidationError("bad id in path");
  return static_cast<std::uint64_t>(*v);
}

nlohmann::json status_json(const LoopStatus& s, std::size_t persisted) {
  return {{"state", std::string(to_string(s.state))},
          {"iteration", s.iteration},
          {"completed", s.completed},
          {"error", s.error},
          {"persisted_iterations", persisted}};
}

std::string content_type_for(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".png") return "image/png";
  if (ext == ".bmp") return "image/bmp";
  return "application/octet-stream";
}

}  // namespace

Service::Service(DatasetStore& store, ReviewQueue& queue, ServiceOptions options)
    : store_(store),
      queue_(queue),
      options_(std::move(options)),
      server_(std::make_unique<httplib::Server>()) {
  if (!options_.factory) {
    const auto workdir = options_.workdir;
    options_.factory = [workdir](const LoopConfig& c, const Dataset& ds) {
      return default_loop_factory(c, ds, workdir);
    };
  }
  install_routes();
}

Service::~Service() {
  stop();
  join_loop();
}

bool Service::listen(const std::string& host, int port) { return server_->listen(host, port); }

int Service::start_background(const std::string& host) {
  const int port = server_->bind_to_any_port(host);
  if (port <= 0) throw Error("io", "cannot bind an HTTP port on " + host);
  listener_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port;
}

void Service::stop() {
  server_->stop();
  if (listener_.joinable()) listener_.join();
}

void Service::join_loop() {
  std::thread t;
  {
    std::lock_guard lock(loop_mutex_);
    t = std::move(loop_thread_);
  }
  if (t.joinable()) t.join();
}

LoopStatus Service::loop_status() const {
  std::lock_guard lock(loop_mutex_);
  return status_;
}

LoopStatus Service::start_loop(const nlohmann::json& overrides) {
  nlohmann::json merged = options_.loop_defaults;
  merged.merge_patch(overrides);
  const LoopConfig config = merged.get<LoopConfig>();

  std::lock_guard lock(loop_mutex_);
  if (status_.state == LoopState::running || store_.leased()) {
    throw ConflictError("a loop is already running on this dataset");
  }
  if (loop_thread_.joinable()) loop_thread_.join();
  const auto trail = load_audit_trail(options_.audit_file);
  status_ = LoopStatus{LoopState::running, trail.empty() ? 1 : trail.back().iteration + 1, 0, {}};
  const std::string start_tag = trail.empty() ? std::string() : trail.back().model_tag;

  loop_thread_ = std::thread([this, config, start_tag] {
    try {
      LoopResources res = options_.factory(config, store_.snapshot());
      LoopContext ctx;
      ctx.backend = res.backend.get();
      for (auto& m : res.committee) ctx.committee.push_back(m.get());
      ctx.hook = res.hook.get();
      ctx.queue = &queue_;
      ctx.workdir = options_.workdir;
      ctx.audit_file = options_.audit_file;
      ctx.model_tag = start_tag;
      ctx.on_iteration_start = [this](int i) {
        std::lock_guard l(loop_mutex_);
        status_.iteration = i;
      };
      const auto records = run_loop(store_, config, ctx);
      std::lock_guard l(loop_mutex_);
      status_.completed = records.size();
      status_.state = LoopState::finished;
    } catch (const std::exception& e) {
      std::lock_guard l(loop_mutex_);
      status_.state = LoopState::failed;
      status_.error = e.what();
    }
  });
  return status_;
}

void Service::install_routes() {
  auto& s = *server_;

  s.Get("/api/v1/tasks", guarded([this](const httplib::Request& req, httplib::Response& res) {
    TaskFilter f;
    if (req.has_param("state")) f.state = parse_task_state(req.get_param_value("state"));
    if (req.has_param("reason")) f.reason = parse_review_reason(req.get_param_value("reason"));
    if (req.has_param("iteration")) f.iteration = static_cast<int>(query_size(req, "iteration", 0));
    const std::size_t page = query_size(req, "page", 0);
    const std::size_t page_size = query_size(req, "page_size", 20);
    if (page_size == 0 || page_size > 1000) throw ValidationError("page_size must be in 1..1000");
    const TaskPage p = queue_.list(f, page, page_size);
    const auto classes = store_.read([](const Dataset& ds) { return ds.classes; });
    auto tasks = nlohmann::json::array();
    for (const auto& t : p.tasks) {
      nlohmann::json tj;
      to_json(tj, t, classes);
      tasks.push_back(std::move(tj));
    }
    send_json(res, 200, {{"tasks", tasks}, {"total", p.total}, {"page", p.page},
                         {"page_size", p.page_size}});
  }));

  s.Get(R"(/api/v1/tasks/(\d+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto classes = store_.read([](const Dataset& ds) { return ds.classes; });
    nlohmann::json tj;
    to_json(tj, queue_.get(path_id(req)), classes);
    send_json(res, 200, tj);
  }));

  s.Post(R"(/api/v1/tasks/(\d+)/claim)",
         guarded([this](const httplib::Request& req, httplib::Response& res) {
           const auto classes = store_.read([](const Dataset& ds) { return ds.classes; });
           nlohmann::json tj;
           to_json(tj, queue_.claim(path_id(req)), classes);
           send_json(res, 200, tj);
         }));

  s.Post(R"(/api/v1/tasks/(\d+)/resolution)",
         guarded([this](const httplib::Request& req, httplib::Response& res) {
           const auto body = parse_body(req);
           if (!body.contains("instances") || !body.at("instances").is_array()) {
             throw ValidationError("body needs an 'instances' array");
           }
           const auto classes = store_.read([](const Dataset& ds) { return ds.classes; });
           std::vector<SubmittedBox> boxes;
           for (const auto& i : body.at("instances")) {
             const auto& b = i.at("box");
             if (!b.is_array() || b.size() != 4) {
               throw ValidationError("box must be [xmin, ymin, xmax, ymax]");
             }
             SubmittedBox sb{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                             b[3].get<double>(), 0};
             sb.class_id = i.contains("class_id") ? i.at("class_id").get<int>()
                                                  : classes.index_of(i.at("class").get<std::string>());
             boxes.push_back(sb);
           }
           const ReviewTask t = queue_.resolve(path_id(req), boxes, store_);
           nlohmann::json tj;
           to_json(tj, t, classes);
           send_json(res, 200, {{"task", tj}, {"instances_written", boxes.size()}});
         }));

  s.Post("/api/v1/loop/start", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const LoopStatus st = start_loop(parse_body(req));
    send_json(res, 202, status_json(st, load_audit_trail(options_.audit_file).size()));
  }));

  s.Get("/api/v1/loop/status", guarded([this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, status_json(loop_status(), load_audit_trail(options_.audit_file).size()));
  }));

  s.Get(R"(/api/v1/reports/iterations/(\d+))",
        guarded([this](const httplib::Request& req, httplib::Response& res) {
          const int i = static_cast<int>(path_id(req));
          const auto line = audit_line(options_.audit_file, i);
          if (!line) throw NotFoundError(fmt::format("no record for iteration {}", i));
          res.status = 200;
          res.set_content(*line, "application/json");
        }));

  s.Get(R"(/api/v1/reports/metrics/(\d+))",
        guarded([this](const httplib::Request& req, httplib::Response& res) {
          const int i = static_cast<int>(path_id(req));
          const auto line = audit_line(options_.audit_file, i);
          if (!line) throw NotFoundError(fmt::format("no record for iteration {}", i));
          const IterationRecord r = parse_iteration(*line);
          if (!r.validation) throw NotFoundError(fmt::format("iteration {} has no validation report", i));
          send_json(res, 200, *r.validation);
        }));

  s.Post("/api/v1/reports/evaluate",
         guarded([this](const httplib::Request& req, httplib::Response& res) {
           const auto body = parse_body(req);
           const Dataset ds = store_.snapshot();
           const DetectionMap dets =
               parse_detection_file(body.at("detections").get<std::string>(), ds.classes);
           const Subset subset = parse_subset(body.value("subset", std::string("val")));
           EvalOptions opts;
           opts.iou_threshold = body.value("iou_threshold", opts.iou_threshold);
           opts.confidence_threshold = body.value("confidence_threshold", opts.confidence_threshold);
           res.status = 200;
           res.set_content(format_report_kv(evaluate_subset(ds, dets, subset, opts)), "text/plain");
         }));

  s.Get(R"(/api/v1/images/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1].str();
    const std::string rel = store_.read([&](const Dataset& ds) { return ds.at(id).path; });
    std::filesystem::path p(rel);
    if (p.is_relative()) p = options_.image_root / p;
    if (!std::filesystem::is_regular_file(p)) throw NotFoundError("image file missing for " + id);
    res.status = 200;
    res.set_content(text::read_file(p.string()), content_type_for(p));
  }));
}

}  // namespace autolabel
