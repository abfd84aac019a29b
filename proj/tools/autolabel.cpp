// Command-line front end. Every command reads one JSON config file
// (--config or $AUTOLABEL_CONFIG), lets flags override it, and writes the
// merged result to <out>/effective_config.json.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "autolabel/active.hpp"
#include "autolabel/dataset.hpp"
#include "autolabel/detector.hpp"
#include "autolabel/error.hpp"
#include "autolabel/fusion.hpp"
#include "autolabel/label_formats.hpp"
#include "autolabel/metrics.hpp"
#include "autolabel/parallel.hpp"
#include "autolabel/review_queue.hpp"
#include "autolabel/selfloop.hpp"
#include "autolabel/service.hpp"
#include "autolabel/synthetic.hpp"
#include "autolabel/text.hpp"

namespace fs = std::filesystem;
using namespace autolabel;
using nlohmann::json;

namespace {

struct Globals {
  std::string config_path;
  std::string out;
  std::size_t workers = 0;
};

json load_config(const Globals& g) {
  std::string path = g.config_path;
  if (const char* env = std::getenv("AUTOLABEL_CONFIG"); env && *env) path = env;
  if (path.empty()) return json::object();
  try {
    return json::parse(text::read_file(path));
  } catch (const json::exception& e) {
    throw ParseError(0, "config " + path + ": " + e.what());
  }
}

/// Sets config[section][key] = value when the flag was given.
template <class T>
void override(json& cfg, const std::string& section, const std::string& key,
              const std::optional<T>& value) {
  if (!value) return;
  if (section.empty()) {
    cfg[key] = *value;
  } else {
    cfg[section][key] = *value;
  }
}

void echo_config(const Globals& g, json cfg) {
  if (g.out.empty()) return;
  fs::create_directories(g.out);
  cfg["workers"] = g.workers == 0 ? default_workers() : g.workers;
  text::write_file_atomic((fs::path(g.out) / "effective_config.json").string(),
                          cfg.dump(2) + "\n");
}

std::string require_store(const json& cfg) {
  if (!cfg.contains("store")) throw ValidationError("no dataset store given (--store or config 'store')");
  return cfg.at("store").get<std::string>();
}

fs::path require_out(const Globals& g) {
  if (g.out.empty()) throw ValidationError("--out is required for this command");
  fs::create_directories(g.out);
  return g.out;
}

void write_out(const fs::path& dir, const std::string& name, const std::string& contents) {
  text::write_file_atomic((dir / name).string(), contents);
}

BackendDescriptor backend_from(const json& cfg, const ClassTable& classes) {
  BackendDescriptor d = cfg.contains("backend") ? cfg.at("backend").get<BackendDescriptor>()
                                                : BackendDescriptor{};
  if (d.name.empty()) d.name = "primary";
  if (d.classes.size() == 0) d.classes = classes;
  return d;
}

std::string quoted(std::string_view s) {
  std::string out;
  for (const char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out;
}

std::size_t workers_of(const Globals& g) { return g.workers == 0 ? default_workers() : g.workers; }

// ---------------------------------------------------------------------------

struct ImportArgs {
  std::string format = "yolo";
  std::string images, labels, classes;
  std::optional<std::string> image_size;
};

void cmd_import(const Globals& g, const ImportArgs& a, json cfg) {
  const std::string store = require_store(cfg);
  echo_config(g, cfg);
  const ClassTable classes = ClassTable::parse(text::read_file(a.classes));
  Dataset ds;
  ds.classes = classes;

  int uniform_w = 0, uniform_h = 0;
  if (a.image_size) {
    const auto parts = text::split(*a.image_size, 'x');
    const auto w = parts.size() == 2 ? text::parse_int(parts[0]) : std::nullopt;
    const auto h = parts.size() == 2 ? text::parse_int(parts[1]) : std::nullopt;
    if (!w || !h || *w <= 0 || *h <= 0) throw ValidationError("--image-size must look like 640x480");
    uniform_w = static_cast<int>(*w);
    uniform_h = static_cast<int>(*h);
  }

  std::map<std::string, fs::path> image_files;
  if (!a.images.empty()) {
    for (const auto& e : fs::directory_iterator(a.images)) {
      if (e.is_regular_file()) image_files[e.path().stem().string()] = e.path();
    }
  }
  const auto path_for = [&](const std::string& id, const std::string& fallback) {
    const auto it = image_files.find(id);
    return it != image_files.end() ? it->second.string() : fallback;
  };

  std::vector<fs::path> label_files;
  for (const auto& e : fs::directory_iterator(a.labels)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && ((a.format == "yolo" && ext == ".txt") || (a.format == "voc" && ext == ".xml"))) {
      label_files.push_back(e.path());
    }
  }
  std::sort(label_files.begin(), label_files.end());
  for (const auto& f : label_files) {
    ImageRecord rec;
    rec.labeled = true;
    try {
      if (a.format == "yolo") {
        if (!a.image_size) throw ValidationError("YOLO import needs --image-size");
        rec.image_id = f.stem().string();
        rec.width = uniform_w;
        rec.height = uniform_h;
        rec.path = path_for(rec.image_id, rec.image_id + ".jpg");
        rec.instances = import_yolo(text::read_file(f.string()), uniform_w, uniform_h, classes);
      } else if (a.format == "voc") {
        const VocAnnotation v = import_voc(text::read_file(f.string()), classes);
        rec.image_id = v.image_id.empty() ? f.stem().string() : v.image_id;
        rec.width = v.width;
        rec.height = v.height;
        rec.path = path_for(rec.image_id, v.filename.empty() ? rec.image_id + ".jpg" : v.filename);
        rec.instances = v.instances();
      } else {
        throw ValidationError("--format must be yolo or voc");
      }
    } catch (const ParseError& e) {
      throw ParseError(0, f.filename().string() + ": " + e.what());
    }
    ds.add(std::move(rec), Subset::train);
  }
  // Images without a label file form the unlabeled pool.
  for (const auto& [id, p] : image_files) {
    if (ds.images.contains(id)) continue;
    if (!a.image_size) {
      throw ValidationError("unlabeled image " + id + " needs --image-size for its dimensions");
    }
    ImageRecord rec{id, p.string(), uniform_w, uniform_h, {}, false};
    ds.add(std::move(rec), Subset::unlabeled);
  }
  ds.validate();
  save_dataset(ds, store);
  fmt::print("imported {} labeled and {} unlabeled images into {}\n", ds.split.train.size(),
             ds.split.unlabeled.size(), store);
}

void cmd_split(const Globals& g, json cfg) {
  const std::string store = require_store(cfg);
  echo_config(g, cfg);
  const auto& sc = cfg.contains("split") ? cfg.at("split") : json::object();
  const SplitRatios ratios = SplitRatios::parse(sc.value("ratios", std::string("0.6,0.2,0.2")));
  const auto seed = sc.value("seed", std::uint64_t{0});
  Dataset ds = load_dataset(store);
  std::vector<ImageRecord> records;
  for (const auto& [_, r] : ds.images) records.push_back(r);
  ds.split = split(records, ratios, seed);
  ds.validate();
  save_dataset(ds, store);
  fmt::print("train={} val={} test={} unlabeled={}\n", ds.split.train.size(), ds.split.val.size(),
             ds.split.test.size(), ds.split.unlabeled.size());
}

void cmd_augment(const Globals& g, const std::vector<std::string>& transforms, json cfg) {
  const std::string store = require_store(cfg);
  echo_config(g, cfg);
  std::vector<GeomTransform> ts;
  for (const auto& t : transforms) ts.push_back(GeomTransform::parse(t));
  if (ts.empty()) throw ValidationError("no transforms given");
  Dataset ds = load_dataset(store);
  const std::size_t before = ds.split.train.size();
  ds.augment_train(ts);
  save_dataset(ds, store);
  fmt::print("train grew from {} to {} images\n", before, ds.split.train.size());
}

void cmd_detect(const Globals& g, const std::string& subset, json cfg) {
  const std::string store = require_store(cfg);
  const fs::path out = require_out(g);
  echo_config(g, cfg);
  const Dataset ds = load_dataset(store);
  BackendContext ctx;
  ctx.workdir = out / "backend";
  ctx.workers = workers_of(g);
  auto backend = make_backend(backend_from(cfg, ds.classes), ctx);
  std::vector<ImageRecord> images;
  for (const auto* r : ds.records(parse_subset(subset))) images.push_back(*r);
  const DetectResult r = backend->detect(images);
  for (const auto& w : r.warnings) fmt::print(stderr, "warning: {}\n", w);
  write_out(out, "detections.tsv", emit_detection_file(r.detections, ds.classes));
  std::size_t n = 0;
  for (const auto& [_, v] : r.detections) n += v.size();
  fmt::print("{} detections over {} images\n", n, images.size());
}

void cmd_evaluate(const Globals& g, const std::string& detections, const std::string& subset,
                  json cfg) {
  const std::string store = require_store(cfg);
  echo_config(g, cfg);
  const Dataset ds = load_dataset(store);
  const DetectionMap dets = parse_detection_file(text::read_file(detections), ds.classes);
  EvalOptions opts;
  if (cfg.contains("eval")) {
    opts.iou_threshold = cfg["eval"].value("iou_threshold", opts.iou_threshold);
    opts.confidence_threshold = cfg["eval"].value("confidence_threshold", opts.confidence_threshold);
  }
  const MetricsReport report = evaluate_subset(ds, dets, parse_subset(subset), opts);
  if (!g.out.empty()) {
    const fs::path out = require_out(g);
    write_out(out, "metrics.kv", format_report_kv(report));
    write_out(out, "metrics.txt", format_report_text(report));
    write_out(out, "metrics.json", json(report).dump(2) + "\n");
    write_out(out, "confusion.tsv", format_confusion_tsv(report, ds.classes));
  }
  fmt::print("{}", format_report_text(report));
}

void cmd_loop(const Globals& g, json cfg) {
  const std::string store_dir = require_store(cfg);
  const fs::path out = require_out(g);
  json loop_json = cfg.contains("loop") ? cfg.at("loop") : json::object();
  if (cfg.contains("backend") && !loop_json.contains("backend")) loop_json["backend"] = cfg["backend"];
  loop_json["workers"] = workers_of(g);
  LoopConfig config = loop_json.get<LoopConfig>();
  cfg["loop"] = config;
  echo_config(g, cfg);

  DatasetStore store = DatasetStore::open(store_dir);
  const Dataset snap = store.snapshot();
  ReviewQueue queue(snap.classes, fs::path(store_dir) / "review_tasks.json");
  LoopResources res = default_loop_factory(config, snap, out / "work");
  LoopContext ctx;
  ctx.backend = res.backend.get();
  for (auto& m : res.committee) ctx.committee.push_back(m.get());
  ctx.hook = res.hook.get();
  ctx.queue = &queue;
  ctx.workdir = out / "work";
  ctx.audit_file = fs::path(store_dir) / "iterations.jsonl";
  const auto records = run_loop(store, config, ctx);
  std::string lines;
  for (const auto& r : records) {
    lines += serialize_iteration(r) + "\n";
    fmt::print("iteration {}: pool={} promoted_images={} promoted_instances={} flagged={}\n",
               r.iteration, r.pool_images, r.images_pseudo_labeled, r.instances_promoted,
               r.images_flagged);
  }
  write_out(out, "iterations.jsonl", lines);
  fmt::print("{} iterations; review queue holds {} tasks\n", records.size(), queue.size());
}

void cmd_select(const Globals& g, const std::vector<std::string>& detections, json cfg) {
  const std::string store = require_store(cfg);
  const fs::path out = require_out(g);
  json strat_json = cfg.contains("select") ? cfg.at("select") : json::object();
  const ActiveStrategy strat = strat_json.get<ActiveStrategy>();
  echo_config(g, cfg);
  const Dataset ds = load_dataset(store);
  if (detections.empty()) throw ValidationError("--detections is required");
  std::vector<DetectionMap> maps;
  for (const auto& f : detections) {
    DetectionMap m = parse_detection_file(text::read_file(f), ds.classes);
    for (auto& [_, v] : m) v = nms(v, 0.5);
    maps.push_back(std::move(m));
  }
  std::string tsv = "image_id\tscore\tbasis\n";
  const std::size_t budget = strat.budget == 0 ? maps[0].size() : strat.budget;
  switch (strat.kind) {
    case ActiveStrategy::Kind::none:
      break;
    case ActiveStrategy::Kind::alct:
      for (const auto& id : alct_flag(maps[0], strat.threshold)) {
        tsv += fmt::format("{}\t1\tlow_confidence_fraction\n", id);
      }
      break;
    case ActiveStrategy::Kind::uncertainty:
      for (const auto& s : rank_uncertain(maps[0], strat.threshold, budget)) {
        tsv += fmt::format("{}\t{}\t{}\n", s.image_id, text::format_double(s.score), to_string(s.basis));
      }
      break;
    case ActiveStrategy::Kind::qbc: {
      if (maps.size() < 2) throw ValidationError("qbc needs --detections from at least two models");
      std::set<std::string> ids;
      for (const auto& m : maps) for (const auto& [id, _] : m) ids.insert(id);
      std::vector<std::pair<double, std::string>> scored;
      for (const auto& id : ids) {
        std::vector<std::vector<Detection>> members;
        for (const auto& m : maps) {
          const auto it = m.find(id);
          members.push_back(it == m.end() ? std::vector<Detection>{} : it->second);
        }
        scored.emplace_back(qbc_disagreement(members, strat.qbc_iou), id);
      }
      std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
        return x.first != y.first ? x.first > y.first : x.second < y.second;
      });
      for (std::size_t k = 0; k < scored.size() && k < budget; ++k) {
        if (scored[k].first <= strat.min_disagreement) break;
        tsv += fmt::format("{}\t{}\tcommittee_disagreement\n", scored[k].second,
                           text::format_double(scored[k].first));
      }
      break;
    }
  }
  write_out(out, "selection.tsv", tsv);
  fmt::print("{}", tsv);
}

struct FuseArgs {
  std::string mode = "merge";
  std::string primary, secondary, detections, embeddings, prompts;
  double iou = 0.5;
};

void cmd_fuse(const Globals& g, const FuseArgs& a, json cfg) {
  const std::string store = require_store(cfg);
  const fs::path out = require_out(g);
  echo_config(g, cfg);
  const Dataset ds = load_dataset(store);
  std::string sources = "image_id\tindex\tsource\tsimilarity\n";
  std::map<std::string, std::vector<FusedDetection>, std::less<>> fused;
  if (a.mode == "merge") {
    const auto p = parse_detection_file(text::read_file(a.primary), ds.classes);
    const auto s = parse_detection_file(text::read_file(a.secondary), ds.classes);
    std::set<std::string> ids;
    for (const auto& [id, _] : p) ids.insert(id);
    for (const auto& [id, _] : s) ids.insert(id);
    for (const auto& id : ids) {
      const auto pi = p.find(id);
      const auto si = s.find(id);
      fused[id] = merge_backends(pi == p.end() ? std::vector<Detection>{} : pi->second,
                                 si == s.end() ? std::vector<Detection>{} : si->second, a.iou);
    }
  } else if (a.mode == "assign") {
    const auto dets = parse_detection_file(text::read_file(a.detections), ds.classes);
    const EmbeddingTable table = parse_embedding_file(text::read_file(a.embeddings));
    PromptSet prompts = PromptSet::from_class_names(ds.classes);
    if (!a.prompts.empty()) {
      prompts.prompts.clear();
      for (const auto line : text::lines(text::read_file(a.prompts))) {
        if (text::trim(line).empty()) continue;
        const auto f = text::split(line, '\t');
        if (f.size() != 2) throw ParseError(0, "prompt lines are class<TAB>text");
        prompts.prompts.emplace_back(ds.classes.index_of(f[0]), std::string(f[1]));
      }
    }
    prompts.validate(ds.classes);
    const auto get = [&](const std::string& key, EmbeddingSource src) {
      const auto it = table.vectors.find(key);
      if (it == table.vectors.end()) throw ValidationError("missing embedding for '" + key + "'");
      return EmbeddingVector{it->second, src};
    };
    std::vector<EmbeddingVector> prompt_vecs;
    for (std::size_t k = 0; k < prompts.prompts.size(); ++k) {
      prompt_vecs.push_back(get(prompt_key(k), EmbeddingSource::text_prompt));
    }
    for (const auto& [id, v] : dets) {
      std::vector<EmbeddingVector> regions;
      for (std::size_t k = 0; k < v.size(); ++k) {
        regions.push_back(get(region_key(id, k), EmbeddingSource::image_region));
      }
      fused[id] = assign_classes(v, regions, prompts, prompt_vecs, ds.classes.size());
      for (auto& f : fused[id]) f.source = "assign";
    }
  } else {
    throw ValidationError("--mode must be merge or assign");
  }
  for (const auto& [id, v] : fused) {
    for (std::size_t k = 0; k < v.size(); ++k) {
      sources += fmt::format("{}\t{}\t{}\t{}\n", id, k, v[k].source, text::format_double(v[k].similarity));
    }
  }
  write_out(out, "fused.tsv", emit_detection_file(to_detection_map(fused), ds.classes));
  write_out(out, "fusion_sources.tsv", sources);
  fmt::print("fused {} images\n", fused.size());
}

void cmd_cost(const Globals& g, json cfg) {
  echo_config(g, cfg);
  const CostModel model = cfg.contains("cost") ? cfg.at("cost").get<CostModel>() : CostModel{};
  const auto& cc = cfg.contains("cost_run") ? cfg.at("cost_run") : json::object();
  const auto n = cc.value("images", std::size_t{3000});
  const double f = cc.value("review_fraction", 1.0);
  const std::string report = format_cost_report(annotation_cost(n, model, f));
  if (!g.out.empty()) write_out(require_out(g), "cost.txt", report);
  fmt::print("{}", report);
}

void cmd_export(const Globals& g, const std::string& format, const std::string& subset, json cfg) {
  const std::string store = require_store(cfg);
  const fs::path out = require_out(g);
  echo_config(g, cfg);
  const Dataset ds = load_dataset(store);
  const fs::path dir = out / "labels";
  fs::create_directories(dir);
  std::size_t n = 0;
  for (const auto* rec : ds.records(parse_subset(subset))) {
    if (format == "yolo") {
      write_out(dir, rec->image_id + ".txt",
                export_yolo(rec->instances, rec->width, rec->height, ds.classes));
    } else if (format == "voc") {
      write_out(dir, rec->image_id + ".xml", export_voc(to_voc(*rec), ds.classes));
    } else {
      throw ValidationError("--format must be yolo or voc");
    }
    ++n;
  }
  write_out(out, "classes.txt", ds.classes.serialize());
  fmt::print("exported {} label files to {}\n", n, dir.string());
}

void cmd_serve(const Globals& g, const std::string& host, int port, std::string image_root,
               json cfg) {
  const std::string store_dir = require_store(cfg);
  echo_config(g, cfg);
  DatasetStore store = DatasetStore::open(store_dir);
  ReviewQueue queue(store.snapshot().classes, fs::path(store_dir) / "review_tasks.json");
  ServiceOptions opts;
  opts.workdir = g.out.empty() ? fs::path(store_dir) / "work" : fs::path(g.out) / "work";
  opts.audit_file = fs::path(store_dir) / "iterations.jsonl";
  opts.image_root = image_root.empty() ? fs::path(store_dir) : fs::path(image_root);
  json loop_json = cfg.contains("loop") ? cfg.at("loop") : json::object();
  if (cfg.contains("backend") && !loop_json.contains("backend")) loop_json["backend"] = cfg["backend"];
  opts.loop_defaults = loop_json.get<LoopConfig>();
  Service service(store, queue, opts);
  fmt::print("serving /api/v1 on {}:{}\n", host, port);
  std::fflush(stdout);
  if (!service.listen(host, port)) throw Error("io", fmt::format("cannot listen on {}:{}", host, port));
}

struct SynthArgs {
  std::size_t images = 100;
  std::size_t labeled = 50;
  std::string classes = "broiler,hen";
  std::uint64_t seed = 0;
  double mean_instances = 8.0;
};

void cmd_synth(const Globals& g, const SynthArgs& a, json cfg) {
  const std::string store = require_store(cfg);
  echo_config(g, cfg);
  std::vector<std::string> names;
  for (const auto n : text::split(a.classes, ',')) names.emplace_back(text::trim(n));
  const ClassTable classes(names);
  SynthSpec spec;
  spec.images = a.images;
  spec.mean_instances = a.mean_instances;
  const auto ratios = cfg.contains("split")
                          ? SplitRatios::parse(cfg["split"].value("ratios", std::string("0.6,0.2,0.2")))
                          : SplitRatios{};
  const SyntheticDataset s = synthesize_dataset(spec, classes, a.labeled, ratios, a.seed);
  save_dataset(s.dataset, store);
  DetectionMap truth;
  for (const auto& [id, inst] : s.hidden_truth) {
    auto& v = truth[id];
    for (const auto& i : inst) v.emplace_back(i.box, i.class_id, 1.0);
  }
  text::write_file_atomic((fs::path(store) / "hidden_truth.tsv").string(),
                          emit_detection_file(truth, classes));
  fmt::print("synthesized {} images ({} labeled) into {}\n", a.images, a.labeled, store);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised auto-labeling engine"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::optional<std::string> store;
  app.add_option("--config", g.config_path, "JSON config file (overridden by $AUTOLABEL_CONFIG)");
  app.add_option("--out", g.out, "Output directory for this run");
  app.add_option("--workers", g.workers, "Worker threads (0 = logical cores)");
  app.add_option("--store", store, "Dataset store directory");

  ImportArgs import_args;
  auto* import = app.add_subcommand("import", "Build a store from YOLO or VOC label trees");
  import->add_option("--format", import_args.format)->check(CLI::IsMember({"yolo", "voc"}));
  import->add_option("--labels", import_args.labels)->required();
  import->add_option("--images", import_args.images);
  import->add_option("--classes", import_args.classes)->required();
  import->add_option("--image-size", import_args.image_size, "WxH for YOLO and unlabeled images");

  std::optional<std::string> ratios;
  std::optional<std::uint64_t> seed;
  auto* split_cmd = app.add_subcommand("split", "Assign labeled images to train/val/test");
  split_cmd->add_option("--ratios", ratios);
  split_cmd->add_option("--seed", seed);

  std::vector<std::string> transforms;
  auto* augment_cmd = app.add_subcommand("augment", "Add augmented copies of train images");
  augment_cmd->add_option("--transforms", transforms)->delimiter(',');

  std::string subset = "unlabeled";
  auto* detect = app.add_subcommand("detect", "Run the configured backend over a subset");
  detect->add_option("--subset", subset);

  std::string detections_file;
  std::string eval_subset = "val";
  std::optional<double> iou, conf;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Metrics report from detections");
  evaluate_cmd->add_option("--detections", detections_file)->required();
  evaluate_cmd->add_option("--subset", eval_subset);
  evaluate_cmd->add_option("--iou", iou);
  evaluate_cmd->add_option("--conf", conf);

  std::optional<int> max_iter;
  std::optional<double> pseudo_conf;
  auto* loop = app.add_subcommand("loop", "Run the self-training loop");
  loop->add_option("--max-iterations", max_iter);
  loop->add_option("--confidence", pseudo_conf);

  std::vector<std::string> select_dets;
  std::optional<std::string> strategy;
  std::optional<double> sel_threshold;
  std::optional<std::size_t> budget;
  auto* select = app.add_subcommand("select", "Rank images for review");
  select->add_option("--detections", select_dets)->delimiter(',');
  select->add_option("--strategy", strategy);
  select->add_option("--threshold", sel_threshold);
  select->add_option("--budget", budget);

  FuseArgs fuse_args;
  auto* fuse = app.add_subcommand("fuse", "Merge two backends or reassign classes by embedding");
  fuse->add_option("--mode", fuse_args.mode)->check(CLI::IsMember({"merge", "assign"}));
  fuse->add_option("--primary", fuse_args.primary);
  fuse->add_option("--secondary", fuse_args.secondary);
  fuse->add_option("--detections", fuse_args.detections);
  fuse->add_option("--embeddings", fuse_args.embeddings);
  fuse->add_option("--prompts", fuse_args.prompts);
  fuse->add_option("--iou", fuse_args.iou);

  std::optional<std::size_t> cost_images;
  std::optional<double> review_fraction;
  auto* cost = app.add_subcommand("cost", "Annotation cost report");
  cost->add_option("--images", cost_images);
  cost->add_option("--review-fraction", review_fraction);

  std::string export_format = "yolo";
  std::string export_subset = "train";
  auto* export_cmd = app.add_subcommand("export", "Write labels in YOLO or VOC form");
  export_cmd->add_option("--format", export_format)->check(CLI::IsMember({"yolo", "voc"}));
  export_cmd->add_option("--subset", export_subset);

  std::string host = "127.0.0.1";
  int port = 8080;
  std::string image_root;
  auto* serve = app.add_subcommand("serve", "Start the HTTP service");
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  serve->add_option("--image-root", image_root);

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic store with hidden truth");
  synth->add_option("--images", synth_args.images);
  synth->add_option("--labeled", synth_args.labeled);
  synth->add_option("--classes", synth_args.classes);
  synth->add_option("--seed", synth_args.seed);
  synth->add_option("--mean-instances", synth_args.mean_instances);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    fmt::print(stderr, "error: code=usage message=\"{}\"\n", quoted(e.what()));
    return 2;
  }

  try {
    json cfg = load_config(g);
    override(cfg, "", "store", store);
    if (*split_cmd) {
      override(cfg, "split", "ratios", ratios);
      override(cfg, "split", "seed", seed);
      cmd_split(g, cfg);
    } else if (*import) {
      cmd_import(g, import_args, cfg);
    } else if (*augment_cmd) {
      cmd_augment(g, transforms, cfg);
    } else if (*detect) {
      cmd_detect(g, subset, cfg);
    } else if (*evaluate_cmd) {
      override(cfg, "eval", "iou_threshold", iou);
      override(cfg, "eval", "confidence_threshold", conf);
      cmd_evaluate(g, detections_file, eval_subset, cfg);
    } else if (*loop) {
      override(cfg, "loop", "max_iterations", max_iter);
      override(cfg, "loop", "pseudo_confidence_threshold", pseudo_conf);
      cmd_loop(g, cfg);
    } else if (*select) {
      override(cfg, "select", "kind", strategy);
      override(cfg, "select", "threshold", sel_threshold);
      override(cfg, "select", "budget", budget);
      cmd_select(g, select_dets, cfg);
    } else if (*fuse) {
      cmd_fuse(g, fuse_args, cfg);
    } else if (*cost) {
      override(cfg, "cost_run", "images", cost_images);
      override(cfg, "cost_run", "review_fraction", review_fraction);
      cmd_cost(g, cfg);
    } else if (*export_cmd) {
      cmd_export(g, export_format, export_subset, cfg);
    } else if (*serve) {
      cmd_serve(g, host, port, image_root, cfg);
    } else if (*synth) {
      cmd_synth(g, synth_args, cfg);
    }
  } catch (const Error& e) {
    fmt::print(stderr, "error: code={} message=\"{}\"\n", e.kind(), quoted(e.what()));
    return 1;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: code=internal message=\"{}\"\n", quoted(e.what()));
    return 1;
  }
  return 0;
}
