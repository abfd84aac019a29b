#include "autolabel/selfloop.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "autolabel/error.hpp"
#include "autolabel/parallel.hpp"
#include "autolabel/text.hpp"

namespace autolabel {

namespace {

void check_unit(double v, const char* what) {
  if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(std::string(what) + " must lie in [0, 1]");
}

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void LoopConfig::validate() const {
  check_unit(pseudo_confidence_threshold, "pseudo_confidence_threshold");
  check_unit(nms_iou_threshold, "nms_iou_threshold");
  check_unit(eval_iou_threshold, "eval_iou_threshold");
  if (max_iterations < 1) throw ValidationError("max_iterations must be at least 1");
  active.validate();
  if (active.kind == ActiveStrategy::Kind::qbc && committee.empty()) {
    throw ValidationError("the qbc strategy needs at least one committee backend");
  }
}

void to_json(nlohmann::json& j, const LoopConfig& c) {
  auto committee = nlohmann::json::array();
  for (const auto& b : c.committee) committee.push_back(b);
  j = {{"pseudo_confidence_threshold", c.pseudo_confidence_threshold},
       {"nms_iou_threshold", c.nms_iou_threshold},
       {"max_iterations", c.max_iterations},
       {"min_new_pseudo_instances", c.min_new_pseudo_instances},
       {"eval_iou_threshold", c.eval_iou_threshold},
       {"outlier_filter", c.outlier_filter},
       {"active_strategy", c.active},
       {"backend", c.backend},
       {"committee", committee},
       {"retrain_hook",
        {{"command", c.retrain_hook.command},
         {"tag_prefix", c.retrain_hook.tag_prefix},
         {"trainer", c.retrain_hook.trainer}}},
       {"workers", c.workers}};
}

void from_json(const nlohmann::json& j, LoopConfig& c) {
  c = LoopConfig{};
  c.pseudo_confidence_threshold = j.value("pseudo_confidence_threshold", c.pseudo_confidence_threshold);
  c.nms_iou_threshold = j.value("nms_iou_threshold", c.nms_iou_threshold);
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.min_new_pseudo_instances = j.value("min_new_pseudo_instances", c.min_new_pseudo_instances);
  c.eval_iou_threshold = j.value("eval_iou_threshold", c.eval_iou_threshold);
  c.outlier_filter = j.value("outlier_filter", c.outlier_filter);
  if (j.contains("active_strategy")) c.active = j.at("active_strategy").get<ActiveStrategy>();
  if (j.contains("backend")) c.backend = j.at("backend").get<BackendDescriptor>();
  if (j.contains("committee")) {
    for (const auto& b : j.at("committee")) c.committee.push_back(b.get<BackendDescriptor>());
  }
  if (j.contains("retrain_hook")) {
    const auto& h = j.at("retrain_hook");
    c.retrain_hook.command = h.value("command", std::string());
    c.retrain_hook.tag_prefix = h.value("tag_prefix", c.retrain_hook.tag_prefix);
    if (h.contains("trainer")) c.retrain_hook.trainer = h.at("trainer");
  }
  c.workers = j.value("workers", c.workers);
  c.validate();
}

// ---------------------------------------------------------------------------
// Audit records

bool IterationRecord::same_outcome(const IterationRecord& o) const {
  return iteration == o.iteration && pool_images == o.pool_images &&
         detected_instances == o.detected_instances &&
         retained_instances == o.retained_instances &&
         images_pseudo_labeled == o.images_pseudo_labeled &&
         instances_promoted == o.instances_promoted && images_flagged == o.images_flagged &&
         flagged_outlier == o.flagged_outlier && flagged_active == o.flagged_active &&
         model_tag == o.model_tag && train_images == o.train_images &&
         validation == o.validation;
}

std::string serialize_iteration(const IterationRecord& r) {
  nlohmann::json validation = nullptr;
  if (r.validation) validation = *r.validation;
  const nlohmann::json j = {
      {"iteration", r.iteration},
      {"pool_images", r.pool_images},
      {"detected_instances", r.detected_instances},
      {"retained_instances", r.retained_instances},
      {"images_pseudo_labeled", r.images_pseudo_labeled},
      {"instances_promoted", r.instances_promoted},
      {"images_flagged", r.images_flagged},
      {"flagged_outlier", r.flagged_outlier},
      {"flagged_active", r.flagged_active},
      {"model_tag", r.model_tag},
      {"train_images", r.train_images},
      {"validation", validation},
      {"timings",
       {{"detect_ms", r.timings.detect_ms},
        {"filter_ms", r.timings.filter_ms},
        {"retrain_ms", r.timings.retrain_ms},
        {"eval_ms", r.timings.eval_ms},
        {"total_ms", r.timings.total_ms}}}};
  return j.dump();
}

IterationRecord parse_iteration(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("iteration record: ") + e.what());
  }
  IterationRecord r;
  r.iteration = j.at("iteration").get<int>();
  r.pool_images = j.at("pool_images").get<std::size_t>();
  r.detected_instances = j.at("detected_instances").get<std::size_t>();
  r.retained_instances = j.at("retained_instances").get<std::size_t>();
  r.images_pseudo_labeled = j.at("images_pseudo_labeled").get<std::size_t>();
  r.instances_promoted = j.at("instances_promoted").get<std::size_t>();
  r.images_flagged = j.at("images_flagged").get<std::size_t>();
  r.flagged_outlier = j.at("flagged_outlier").get<std::size_t>();
  r.flagged_active = j.at("flagged_active").get<std::size_t>();
  r.model_tag = j.at("model_tag").get<std::string>();
  r.train_images = j.at("train_images").get<std::size_t>();
  if (!j.at("validation").is_null()) r.validation = j.at("validation").get<MetricsReport>();
  const auto& t = j.at("timings");
  r.timings = {t.at("detect_ms").get<double>(), t.at("filter_ms").get<double>(),
               t.at("retrain_ms").get<double>(), t.at("eval_ms").get<double>(),
               t.at("total_ms").get<double>()};
  return r;
}

std::vector<IterationRecord> load_audit_trail(const std::filesystem::path& file) {
  std::vector<IterationRecord> out;
  if (!std::filesystem::exists(file)) return out;
  const std::string text = text::read_file(file.string());
  for (const auto line : text::lines(text)) {
    if (text::trim(line).empty()) continue;
    out.push_back(parse_iteration(line));
  }
  return out;
}

std::optional<std::string> audit_line(const std::filesystem::path& file, int iteration) {
  if (!std::filesystem::exists(file)) return std::nullopt;
  const std::string text = text::read_file(file.string());
  for (const auto line : text::lines(text)) {
    if (text::trim(line).empty()) continue;
    if (parse_iteration(line).iteration == iteration) return std::string(line);
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Hooks

void ExternalRetrainHook::retrain(const RetrainRequest& request) {
  if (command_.empty()) throw ValidationError("retrain hook command is empty");
  const int rc = run_command(command_ + " " + shell_quote(request.train_manifest.string()) + " " +
                             shell_quote(request.val_manifest.string()) + " " +
                             shell_quote(request.model_tag));
  if (rc != 0) throw ExternalError(fmt::format("retrain hook exited with status {}", rc));
}

// ---------------------------------------------------------------------------
// Planning

IterationPlan plan_iteration(const DetectionMap& pool_detections,
                             const std::vector<DetectionMap>& committee,
                             const LoopConfig& config, int iteration, std::size_t workers) {
  config.validate();
  if (iteration < 1) throw ValidationError("iterations are numbered from 1");
  IterationPlan plan;

  std::vector<std::string> ids;
  std::vector<const std::vector<Detection>*> raw;
  for (const auto& [id, dets] : pool_detections) {
    ids.push_back(id);
    raw.push_back(&dets);
  }
  const std::size_t n = ids.size();
  std::vector<std::vector<Detection>> kept(n), retained(n);
  parallel_for(n, workers, [&](std::size_t i) {
    kept[i] = nms(*raw[i], config.nms_iou_threshold);
    for (const auto& d : kept[i]) {
      if (d.confidence() >= config.pseudo_confidence_threshold) retained[i].push_back(d);
    }
  });
  for (std::size_t i = 0; i < n; ++i) {
    plan.detected_instances += kept[i].size();
    plan.retained_instances += retained[i].size();
  }

  std::vector<bool> flagged(n, false);
  const auto flag = [&](std::size_t i, ReviewReason reason, double score) {
    flagged[i] = true;
    plan.flagged.push_back({ids[i], reason, score, kept[i]});
  };

  if (config.outlier_filter && n >= 2) {
    std::vector<std::pair<std::string, double>> counts;
    for (std::size_t i = 0; i < n; ++i) counts.emplace_back(ids[i], double(retained[i].size()));
    const OutlierSplit split = outlier_filter(counts);
    std::set<std::string, std::less<>> out(split.flagged.begin(), split.flagged.end());
    for (std::size_t i = 0; i < n; ++i) {
      if (!out.contains(ids[i])) continue;
      const double z = std::abs(double(retained[i].size()) - split.mean) / split.stddev;
      flag(i, ReviewReason::count_outlier, z);
      ++plan.flagged_outlier;
    }
  }

  const auto& a = config.active;
  std::map<std::string_view, std::size_t> index;
  DetectionMap candidates;
  for (std::size_t i = 0; i < n; ++i) {
    if (flagged[i]) continue;
    index[ids[i]] = i;
    candidates[ids[i]] = kept[i];
  }
  const std::size_t budget = a.budget == 0 ? candidates.size() : a.budget;
  switch (a.kind) {
    case ActiveStrategy::Kind::none:
      break;
    case ActiveStrategy::Kind::alct: {
      const auto hits = alct_flag(candidates, a.threshold);
      const std::set<std::string_view> hit_set(hits.begin(), hits.end());
      std::size_t taken = 0;
      for (const auto& s : rank_uncertain(candidates, a.threshold, candidates.size())) {
        if (taken == budget) break;
        if (!hit_set.contains(s.image_id)) continue;
        flag(index.at(s.image_id), ReviewReason::low_confidence, s.score);
        ++taken;
      }
      plan.flagged_active += taken;
      break;
    }
    case ActiveStrategy::Kind::uncertainty: {
      for (const auto& s : rank_uncertain(candidates, a.threshold, budget)) {
        if (s.score <= 0.0) break;
        flag(index.at(s.image_id), ReviewReason::low_confidence, s.score);
        ++plan.flagged_active;
      }
      break;
    }
    case ActiveStrategy::Kind::qbc: {
      std::vector<std::pair<double, std::string>> scored;
      for (const auto& [id, dets] : candidates) {
        std::vector<std::vector<Detection>> members{dets};
        for (const auto& m : committee) {
          const auto it = m.find(id);
          members.push_back(it == m.end() ? std::vector<Detection>{}
                                          : nms(it->second, config.nms_iou_threshold));
        }
        const double d = qbc_disagreement(members, a.qbc_iou);
        if (d > a.min_disagreement) scored.emplace_back(d, id);
      }
      std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
        return x.first != y.first ? x.first > y.first : x.second < y.second;
      });
      for (std::size_t k = 0; k < scored.size() && k < budget; ++k) {
        flag(index.at(scored[k].second), ReviewReason::committee_disagreement, scored[k].first);
        ++plan.flagged_active;
      }
      break;
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (flagged[i] || retained[i].empty()) continue;
    auto& inst = plan.promotions[ids[i]];
    for (const auto& d : retained[i]) {
      inst.emplace_back(d.box(), d.class_id(), Provenance::pseudo, iteration);
    }
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Execution

namespace {

DetectionMap detect_or_throw(DetectorBackend& backend, std::span<const ImageRecord> images) {
  try {
    return backend.detect(images).detections;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw ExternalError("backend " + backend.name() + ": " + e.what());
  }
}

std::vector<ImageRecord> pool_records(const Dataset& ds, const ReviewQueue* queue) {
  std::set<std::string, std::less<>> gated;
  if (queue) gated = queue->open_images();
  std::vector<ImageRecord> out;
  for (const auto* rec : ds.records(Subset::unlabeled)) {
    if (!gated.contains(rec->image_id)) out.push_back(*rec);
  }
  return out;
}

void apply_promotions(Dataset& ds, const IterationPlan& plan) {
  for (const auto& [id, instances] : plan.promotions) {
    // A review may have resolved the image since the snapshot; it wins.
    if (ds.split.subset_of(id) != Subset::unlabeled) continue;
    auto& rec = ds.at(id);
    rec.instances = instances;
    rec.labeled = true;
    ds.split.move(id, Subset::unlabeled, Subset::train);
  }
}

}  // namespace

IterationRecord run_iteration(DatasetStore& store, const LoopConfig& config, int iteration,
                              LoopContext& ctx) {
  config.validate();
  if (!ctx.backend) throw ValidationError("loop context has no detector backend");
  if (!ctx.hook) throw ValidationError("loop context has no retrain hook");
  const auto t_start = std::chrono::steady_clock::now();
  IterationRecord rec;
  rec.iteration = iteration;

  const Dataset before = store.snapshot();
  const std::vector<ImageRecord> pool = pool_records(before, ctx.queue);
  if (pool.empty()) throw ValidationError("the unlabeled pool has no images available");
  rec.pool_images = pool.size();

  // 1. detect
  auto t0 = std::chrono::steady_clock::now();
  const DetectionMap detections = detect_or_throw(*ctx.backend, pool);
  std::vector<DetectionMap> committee;
  for (auto* member : ctx.committee) committee.push_back(detect_or_throw(*member, pool));
  rec.timings.detect_ms = ms_since(t0);

  // 2-5. filter, flag
  t0 = std::chrono::steady_clock::now();
  const IterationPlan plan = plan_iteration(detections, committee, config, iteration, config.workers);
  rec.detected_instances = plan.detected_instances;
  rec.retained_instances = plan.retained_instances;
  rec.images_flagged = plan.flagged.size();
  rec.flagged_outlier = plan.flagged_outlier;
  rec.flagged_active = plan.flagged_active;
  rec.images_pseudo_labeled = plan.promotions.size();
  for (const auto& [_, v] : plan.promotions) rec.instances_promoted += v.size();

  // 6. stage
  Dataset staged = before;
  apply_promotions(staged, plan);
  staged.validate();
  rec.timings.filter_ms = ms_since(t0);

  // 7. retrain on the staged data; nothing is committed yet
  const std::size_t previous_train = before.split.train.size();
  t0 = std::chrono::steady_clock::now();
  rec.model_tag = fmt::format("{}-iter{}", config.retrain_hook.tag_prefix, iteration);
  if (!plan.promotions.empty()) {
    const auto dir = ctx.workdir / fmt::format("iter_{:03d}", iteration);
    std::filesystem::create_directories(dir);
    const Subset train_only[] = {Subset::train};
    const Subset val_only[] = {Subset::val};
    RetrainRequest req{dir / "train.tsv", dir / "val.tsv", rec.model_tag, iteration};
    text::write_file_atomic(req.train_manifest.string(), serialize_manifest(staged, train_only));
    text::write_file_atomic(req.val_manifest.string(), serialize_manifest(staged, val_only));
    text::write_file_atomic((dir / "annotations.tsv").string(), serialize_annotations(staged));
    text::write_file_atomic((dir / "classes.txt").string(), staged.classes.serialize());
    text::write_file_atomic((dir / "trainer.json").string(),
                            config.retrain_hook.trainer.dump(2) + "\n");
    ctx.hook->retrain(req);
  } else {
    rec.model_tag = ctx.model_tag;
  }
  rec.timings.retrain_ms = ms_since(t0);

  const auto notify = [&](const std::string& tag, std::size_t train) {
    ctx.backend->on_retrained(tag, train);
    for (auto* member : ctx.committee) member->on_retrained(tag, train);
  };
  const std::size_t staged_train = staged.split.train.size();
  if (!plan.promotions.empty()) notify(rec.model_tag, staged_train);

  // 8. validate, then commit
  t0 = std::chrono::steady_clock::now();
  try {
    std::vector<ImageRecord> val;
    GroundTruthMap truth;
    for (const auto* r : staged.records(Subset::val)) {
      val.push_back(*r);
      truth[r->image_id] = r->instances;
    }
    if (!val.empty()) {
      DetectionMap val_dets = detect_or_throw(*ctx.backend, val);
      for (auto& [_, dets] : val_dets) dets = nms(dets, config.nms_iou_threshold);
      rec.validation = evaluate(val_dets, truth, staged.classes,
                                {config.eval_iou_threshold, config.pseudo_confidence_threshold});
    }
    rec.timings.eval_ms = ms_since(t0);
    store.update([&](Dataset& ds) { apply_promotions(ds, plan); });
  } catch (...) {
    if (!plan.promotions.empty()) notify(ctx.model_tag, previous_train);
    throw;
  }
  ctx.model_tag = rec.model_tag;
  rec.train_images = store.read([](const Dataset& ds) { return ds.split.train.size(); });

  if (ctx.queue) {
    for (const auto& f : plan.flagged) {
      const auto& r = before.at(f.image_id);
      ctx.queue->enqueue(f.image_id, r.path, f.predicted, f.reason, iteration, f.score);
    }
  }
  rec.timings.total_ms = ms_since(t_start);
  if (ctx.audit_file) {
    std::ofstream out(*ctx.audit_file, std::ios::app | std::ios::binary);
    out << serialize_iteration(rec) << '\n';
    if (!out) throw Error("io", "cannot append to audit trail " + ctx.audit_file->string());
  }
  return rec;
}

namespace {

class LeaseGuard {
 public:
  explicit LeaseGuard(DatasetStore& s) : store_(s) {
    if (!store_.try_acquire_lease()) throw ConflictError("a loop is already running on this dataset");
  }
  ~LeaseGuard() { store_.release_lease(); }
  LeaseGuard(const LeaseGuard&) = delete;
  LeaseGuard& operator=(const LeaseGuard&) = delete;

 private:
  DatasetStore& store_;
};

}  // namespace

std::vector<IterationRecord> run_loop(DatasetStore& store, const LoopConfig& config,
                                      LoopContext& ctx) {
  config.validate();
  LeaseGuard lease(store);
  int next = 1;
  if (ctx.audit_file) {
    const auto trail = load_audit_trail(*ctx.audit_file);
    if (!trail.empty()) {
      next = trail.back().iteration + 1;
      if (ctx.model_tag.empty()) ctx.model_tag = trail.back().model_tag;
    }
  }
  std::vector<IterationRecord> records;
  for (int k = 0; k < config.max_iterations; ++k) {
    // Snapshot first: the queue lock must never be taken under the store lock.
    if (pool_records(store.snapshot(), ctx.queue).empty()) break;
    const int iteration = next + k;
    if (ctx.on_iteration_start) ctx.on_iteration_start(iteration);
    records.push_back(run_iteration(store, config, iteration, ctx));
    if (records.back().instances_promoted < config.min_new_pseudo_instances) break;
  }
  return records;
}

}  // namespace autolabel
