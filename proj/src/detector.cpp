#include "autolabel/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <random>
#include <set>

#include <fmt/format.h>
#include <sys/wait.h>

#include "autolabel/error.hpp"
#include "autolabel/parallel.hpp"
#include "autolabel/text.hpp"

namespace autolabel {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::string_view image_id, std::uint64_t stream) {
  return splitmix64(splitmix64(seed ^ fnv1a(image_id)) + stream);
}

namespace {

double sample_beta(std::mt19937_64& rng, double alpha, double beta) {
  if (beta == 0.0) return 1.0;
  if (alpha == 0.0) return 0.0;
  std::gamma_distribution<double> ga(alpha, 1.0), gb(beta, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  if (x + y <= 0.0) return 0.5;
  return std::clamp(x / (x + y), 0.0, 1.0);
}

bool in_unit(double p) { return p >= 0.0 && p <= 1.0; }

constexpr std::uint64_t kSpuriousStream = 0xffffffffULL;

}  // namespace

// ---------------------------------------------------------------------------
// NoiseModel

NoiseModel NoiseModel::noiseless() {
  NoiseModel n;
  n.dropout_rate = 0.0;
  n.spurious_rate = 0.0;
  n.jitter_sigma = 0.0;
  n.confidence = ConfidenceModel{1.0, 0.0, 1.0, 0.0};
  return n;
}

void NoiseModel::validate(std::size_t num_classes) const {
  if (!in_unit(dropout_rate)) throw ValidationError("dropout_rate must lie in [0, 1]");
  if (!(spurious_rate >= 0.0) || !std::isfinite(spurious_rate)) {
    throw ValidationError("spurious_rate must be nonnegative");
  }
  if (!(jitter_sigma >= 0.0) || !std::isfinite(jitter_sigma)) {
    throw ValidationError("jitter_sigma must be nonnegative");
  }
  const auto& c = confidence;
  for (const double p : {c.alpha_hi, c.beta_hi, c.alpha_lo, c.beta_lo}) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ValidationError("Beta parameters must be >= 0");
  }
  if ((c.alpha_hi == 0.0 && c.beta_hi == 0.0) || (c.alpha_lo == 0.0 && c.beta_lo == 0.0)) {
    throw ValidationError("Beta parameters cannot both be zero");
  }
  if (confusion.size() != 0) {
    const auto n = static_cast<Eigen::Index>(num_classes);
    if (confusion.rows() != n || confusion.cols() != n) {
      throw ValidationError(fmt::format("confusion matrix must be {0}x{0}", num_classes));
    }
    if ((confusion.array() < 0.0).any() || (confusion.array() > 1.0).any()) {
      throw ValidationError("confusion probabilities must lie in [0, 1]");
    }
    const Eigen::VectorXd rows = confusion.rowwise().sum();
    if (((rows.array() - 1.0).abs() > 1e-9).any()) {
      throw ValidationError("confusion matrix rows must sum to 1");
    }
  }
  for (std::size_t i = 0; i < accuracy_curve.size(); ++i) {
    const auto& p = accuracy_curve[i];
    if (!in_unit(p.dropout_rate) || !(p.jitter_sigma >= 0.0) || !(p.train_size >= 0.0)) {
      throw ValidationError("accuracy_curve entries out of range");
    }
    if (i > 0) {
      const auto& q = accuracy_curve[i - 1];
      if (!(p.train_size > q.train_size)) {
        throw ValidationError("accuracy_curve sizes must be strictly increasing");
      }
      if (p.dropout_rate > q.dropout_rate) {
        throw ValidationError("accuracy_curve dropout must not increase with size");
      }
    }
  }
}

NoiseModel NoiseModel::at_training_size(double size) const {
  NoiseModel out = *this;
  if (accuracy_curve.empty()) return out;
  const auto& c = accuracy_curve;
  if (size <= c.front().train_size) {
    out.dropout_rate = c.front().dropout_rate;
    out.jitter_sigma = c.front().jitter_sigma;
  } else if (size >= c.back().train_size) {
    out.dropout_rate = c.back().dropout_rate;
    out.jitter_sigma = c.back().jitter_sigma;
  } else {
    const auto hi = std::upper_bound(c.begin(), c.end(), size, [](double s, const AccuracyPoint& p) {
      return s < p.train_size;
    });
    const auto lo = hi - 1;
    const double t = (size - lo->train_size) / (hi->train_size - lo->train_size);
    out.dropout_rate = lo->dropout_rate + t * (hi->dropout_rate - lo->dropout_rate);
    out.jitter_sigma = lo->jitter_sigma + t * (hi->jitter_sigma - lo->jitter_sigma);
  }
  return out;
}

void to_json(nlohmann::json& j, const NoiseModel& n) {
  j = nlohmann::json{{"dropout_rate", n.dropout_rate},
                     {"spurious_rate", n.spurious_rate},
                     {"jitter_sigma", n.jitter_sigma},
                     {"confidence",
                      {{"alpha_hi", n.confidence.alpha_hi},
                       {"beta_hi", n.confidence.beta_hi},
                       {"alpha_lo", n.confidence.alpha_lo},
                       {"beta_lo", n.confidence.beta_lo}}}};
  if (n.confusion.size() != 0) {
    auto rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < n.confusion.rows(); ++r) {
      auto row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < n.confusion.cols(); ++c) row.push_back(n.confusion(r, c));
      rows.push_back(row);
    }
    j["confusion_matrix"] = rows;
  }
  if (!n.accuracy_curve.empty()) {
    auto curve = nlohmann::json::array();
    for (const auto& p : n.accuracy_curve) {
      curve.push_back({{"train_size", p.train_size},
                       {"dropout_rate", p.dropout_rate},
                       {"jitter_sigma", p.jitter_sigma}});
    }
    j["accuracy_curve"] = curve;
  }
}

void from_json(const nlohmann::json& j, NoiseModel& n) {
  n = NoiseModel{};
  n.dropout_rate = j.value("dropout_rate", n.dropout_rate);
  n.spurious_rate = j.value("spurious_rate", n.spurious_rate);
  n.jitter_sigma = j.value("jitter_sigma", n.jitter_sigma);
  if (j.contains("confidence")) {
    const auto& c = j.at("confidence");
    n.confidence.alpha_hi = c.value("alpha_hi", n.confidence.alpha_hi);
    n.confidence.beta_hi = c.value("beta_hi", n.confidence.beta_hi);
    n.confidence.alpha_lo = c.value("alpha_lo", n.confidence.alpha_lo);
    n.confidence.beta_lo = c.value("beta_lo", n.confidence.beta_lo);
  }
  if (j.contains("confusion_matrix")) {
    const auto& rows = j.at("confusion_matrix");
    const auto r = static_cast<Eigen::Index>(rows.size());
    n.confusion.resize(r, r);
    for (Eigen::Index i = 0; i < r; ++i) {
      const auto& row = rows.at(static_cast<std::size_t>(i));
      if (static_cast<Eigen::Index>(row.size()) != r) {
        throw ValidationError("confusion_matrix must be square");
      }
      for (Eigen::Index k = 0; k < r; ++k) {
        n.confusion(i, k) = row.at(static_cast<std::size_t>(k)).get<double>();
      }
    }
  }
  if (j.contains("accuracy_curve")) {
    for (const auto& p : j.at("accuracy_curve")) {
      n.accuracy_curve.push_back({p.at("train_size").get<double>(),
                                  p.at("dropout_rate").get<double>(),
                                  p.value("jitter_sigma", 0.0)});
    }
  }
}

// ---------------------------------------------------------------------------
// Simulation

std::vector<Detection> simulate(const ImageRecord& record, const std::vector<Instance>& truth,
                                const NoiseModel& noise, std::uint64_t seed,
                                std::size_t num_classes, std::span<const BoxSize> size_pool) {
  if (num_classes == 0) throw ValidationError("simulation needs a non-empty class table");
  const double W = record.width;
  const double H = record.height;
  const auto& cm = noise.confidence;
  std::vector<Detection> out;
  out.reserve(truth.size());

  for (std::size_t k = 0; k < truth.size(); ++k) {
    const Instance& inst = truth[k];
    // Every instance consumes the same draws whether or not it is kept.
    std::mt19937_64 rng(derive_seed(seed, record.image_id, k));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double u_drop = unit(rng);
    double z[4];
    for (double& v : z) v = gauss(rng);
    const double u_class = unit(rng);
    std::mt19937_64 conf_rng(rng());

    if (u_drop < noise.dropout_rate) continue;

    int predicted = inst.class_id;
    if (noise.confusion.size() != 0) {
      double acc = 0.0;
      const auto row = noise.confusion.row(inst.class_id);
      predicted = static_cast<int>(row.size()) - 1;
      for (Eigen::Index c = 0; c < row.size(); ++c) {
        acc += row(c);
        if (u_class < acc) {
          predicted = static_cast<int>(c);
          break;
        }
      }
    }
    const bool correct = predicted == inst.class_id;

    BoundingBox box = inst.box;
    if (noise.jitter_sigma > 0.0) {
      const double s = noise.jitter_sigma;
      BoundingBox jittered = box;
      if (clamp_to_image(box.x_min() + s * z[0], box.y_min() + s * z[1], box.x_max() + s * z[2],
                         box.y_max() + s * z[3], W, H, jittered)) {
        box = jittered;
      }
    }
    const double conf = correct ? sample_beta(conf_rng, cm.alpha_hi, cm.beta_hi)
                                : sample_beta(conf_rng, cm.alpha_lo, cm.beta_lo);
    out.emplace_back(box, predicted, conf);
  }

  if (noise.spurious_rate > 0.0) {
    std::mt19937_64 rng(derive_seed(seed, record.image_id, kSpuriousStream));
    std::poisson_distribution<int> count(noise.spurious_rate);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
      BoxSize size{0.05 * W, 0.05 * H};
      if (!size_pool.empty()) {
        size = size_pool[static_cast<std::size_t>(unit(rng) * size_pool.size()) % size_pool.size()];
      } else if (!truth.empty()) {
        const auto& b = truth[static_cast<std::size_t>(unit(rng) * truth.size()) % truth.size()].box;
        size = {b.width(), b.height()};
      }
      size.width = std::min(size.width, W);
      size.height = std::min(size.height, H);
      const double x0 = unit(rng) * (W - size.width);
      const double y0 = unit(rng) * (H - size.height);
      const int cls = static_cast<int>(unit(rng) * num_classes) % static_cast<int>(num_classes);
      BoundingBox box(0, 0, 1, 1);
      if (!clamp_to_image(x0, y0, x0 + size.width, y0 + size.height, W, H, box)) continue;
      out.emplace_back(box, cls, sample_beta(rng, cm.alpha_lo, cm.beta_lo));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Interchange file

DetectionMap parse_detection_file(std::string_view body, const ClassTable& classes) {
  DetectionMap out;
  const auto ls = text::lines(body);
  for (std::size_t i = 0; i < ls.size(); ++i) {
    const std::size_t lineno = i + 1;
    if (ls[i].empty()) continue;
    const auto f = text::split(ls[i], '\t');
    if (f.size() != 7) throw ParseError(lineno, "expected 7 tab-separated fields");
    if (f[0].empty()) throw ParseError(lineno, "empty image id");
    const auto cls = classes.find(f[1]);
    if (!cls) throw ParseError(lineno, "unknown class '" + std::string(f[1]) + "'");
    double v[5];
    for (int k = 0; k < 5; ++k) {
      const auto d = text::parse_double(f[k + 2]);
      if (!d) throw ParseError(lineno, "malformed number '" + std::string(f[k + 2]) + "'");
      v[k] = *d;
    }
    try {
      out[std::string(f[0])].emplace_back(BoundingBox(v[0], v[1], v[2], v[3]), *cls, v[4]);
    } catch (const ValidationError& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return out;
}

std::string emit_detection_file(const DetectionMap& detections, const ClassTable& classes) {
  std::string out;
  for (const auto& [id, dets] : detections) {
    for (const auto& d : dets) {
      const auto& b = d.box();
      out += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{:.6f}\n", id, classes.name(d.class_id()),
                         text::format_double(b.x_min()), text::format_double(b.y_min()),
                         text::format_double(b.x_max()), text::format_double(b.y_max()),
                         d.confidence());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backends

std::string_view to_string(BackendKind k) {
  switch (k) {
    case BackendKind::external_process: return "external_process";
    case BackendKind::detection_file: return "detection_file";
    case BackendKind::simulated: return "simulated";
  }
  return "simulated";
}

BackendKind parse_backend_kind(std::string_view s) {
  if (s == "external_process") return BackendKind::external_process;
  if (s == "detection_file") return BackendKind::detection_file;
  if (s == "simulated") return BackendKind::simulated;
  throw ValidationError("unknown backend kind '" + std::string(s) + "'");
}

void BackendDescriptor::validate() const {
  if (name.empty()) throw ValidationError("backend name must be non-empty");
  if (classes.size() == 0) throw ValidationError("backend " + name + " has an empty class table");
  const auto require = [&](const char* key) {
    if (!config.contains(key)) {
      throw ValidationError(fmt::format("backend {} ({}) requires config key '{}'", name,
                                        to_string(kind), key));
    }
  };
  switch (kind) {
    case BackendKind::simulated:
      if (config.contains("noise")) config.at("noise").get<NoiseModel>().validate(classes.size());
      break;
    case BackendKind::detection_file: require("path"); break;
    case BackendKind::external_process: require("command"); break;
  }
}

void to_json(nlohmann::json& j, const BackendDescriptor& d) {
  j = {{"name", d.name},
       {"kind", std::string(to_string(d.kind))},
       {"classes", d.classes.names()},
       {"config", d.config}};
}

void from_json(const nlohmann::json& j, BackendDescriptor& d) {
  d = BackendDescriptor{};
  for (const auto& [key, _] : j.items()) {
    if (key != "name" && key != "kind" && key != "classes" && key != "config") {
      throw ValidationError(fmt::format("unknown backend key '{}' (kind-specific keys go under 'config')", key));
    }
  }
  d.name = j.value("name", std::string("primary"));
  d.kind = parse_backend_kind(j.value("kind", std::string("simulated")));
  if (j.contains("classes")) d.classes = ClassTable(j.at("classes").get<std::vector<std::string>>());
  if (j.contains("config")) d.config = j.at("config");
}

DetectResult sanitize(DetectResult raw, std::span<const ImageRecord> images,
                      const ClassTable& classes) {
  DetectResult out;
  out.warnings = std::move(raw.warnings);
  for (const auto& rec : images) {
    auto& dst = out.detections[rec.image_id];
    const auto it = raw.detections.find(rec.image_id);
    if (it == raw.detections.end()) continue;
    for (const auto& d : it->second) {
      if (!classes.contains(d.class_id())) {
        throw ValidationError(fmt::format("image {}: detection class {} not in class table",
                                          rec.image_id, d.class_id()));
      }
      const auto& b = d.box();
      BoundingBox clamped = b;
      if (!clamp_to_image(b.x_min(), b.y_min(), b.x_max(), b.y_max(), rec.width, rec.height,
                          clamped)) {
        out.warnings.push_back("dropped detection outside image " + rec.image_id);
        continue;
      }
      dst.push_back(d.with_box(clamped));
    }
  }
  for (const auto& [id, dets] : raw.detections) {
    if (!out.detections.contains(id)) {
      out.warnings.push_back("ignored detections for unrequested image " + id);
    }
  }
  return out;
}

SimulatedBackend::SimulatedBackend(std::string name, ClassTable classes, NoiseModel noise,
                                   std::uint64_t seed, GroundTruthMap truth,
                                   std::size_t train_images, std::size_t workers)
    : name_(std::move(name)), classes_(std::move(classes)), noise_(std::move(noise)),
      seed_(seed), truth_(std::move(truth)), train_images_(train_images), workers_(workers) {
  noise_.validate(classes_.size());
}

NoiseModel SimulatedBackend::effective_noise() const {
  return noise_.at_training_size(static_cast<double>(train_images_));
}

DetectResult SimulatedBackend::detect(std::span<const ImageRecord> images) {
  const NoiseModel noise = effective_noise();
  std::vector<std::vector<Detection>> per_image(images.size());
  parallel_for(images.size(), workers_, [&](std::size_t i) {
    const auto& rec = images[i];
    const auto it = truth_.find(rec.image_id);
    const auto& truth = it != truth_.end() ? it->second : rec.instances;
    per_image[i] = simulate(rec, truth, noise, seed_, classes_.size(), size_pool_);
  });
  DetectResult raw;
  for (std::size_t i = 0; i < images.size(); ++i) {
    raw.detections[images[i].image_id] = std::move(per_image[i]);
  }
  return sanitize(std::move(raw), images, classes_);
}

void SimulatedBackend::on_retrained(const std::string&, std::size_t train_images) {
  train_images_ = train_images;
}

DetectionFileBackend::DetectionFileBackend(std::string name, ClassTable classes,
                                           std::filesystem::path path)
    : name_(std::move(name)), classes_(std::move(classes)), path_(std::move(path)) {}

DetectResult DetectionFileBackend::detect(std::span<const ImageRecord> images) {
  DetectResult raw;
  auto all = parse_detection_file(text::read_file(path_.string()), classes_);
  for (const auto& rec : images) {
    const auto it = all.find(rec.image_id);
    if (it == all.end()) {
      raw.warnings.push_back("no detections for image " + rec.image_id + " in " +
                             path_.string());
      continue;
    }
    raw.detections[rec.image_id] = std::move(it->second);
  }
  return sanitize(std::move(raw), images, classes_);
}

std::string shell_quote(std::string_view s) {
  std::string out = "'";
  for (const char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  out += "'";
  return out;
}

int run_command(const std::string& command_line) {
  const int status = std::system(command_line.c_str());
  if (status == -1) return -1;
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return 128;
}

ExternalProcessBackend::ExternalProcessBackend(std::string name, ClassTable classes,
                                               std::string command,
                                               std::filesystem::path workdir,
                                               std::string model_tag)
    : name_(std::move(name)), classes_(std::move(classes)), command_(std::move(command)),
      workdir_(std::move(workdir)), model_tag_(std::move(model_tag)) {}

DetectResult ExternalProcessBackend::detect(std::span<const ImageRecord> images) {
  std::filesystem::create_directories(workdir_);
  const auto stem = fmt::format("{}-{}", name_, calls_++);
  const auto manifest = workdir_ / (stem + ".manifest.tsv");
  const auto output = workdir_ / (stem + ".detections.tsv");

  Dataset request;
  request.classes = classes_;
  for (const auto& rec : images) {
    ImageRecord bare = rec;
    bare.instances.clear();
    bare.labeled = false;
    request.add(std::move(bare), Subset::unlabeled);
  }
  text::write_file_atomic(manifest.string(), serialize_manifest(request));
  std::filesystem::remove(output);

  std::string cmd = command_ + " " + shell_quote(manifest.string()) + " " +
                    shell_quote(output.string());
  if (!model_tag_.empty()) cmd += " " + shell_quote(model_tag_);
  const int rc = run_command(cmd);
  if (rc != 0) {
    throw ExternalError(fmt::format("backend {} exited with status {}", name_, rc));
  }
  if (!std::filesystem::exists(output)) {
    throw ExternalError("backend " + name_ + " wrote no output file");
  }
  DetectResult raw;
  raw.detections = parse_detection_file(text::read_file(output.string()), classes_);
  return sanitize(std::move(raw), images, classes_);
}

void ExternalProcessBackend::on_retrained(const std::string& model_tag, std::size_t) {
  model_tag_ = model_tag;
}

std::unique_ptr<DetectorBackend> make_backend(const BackendDescriptor& d,
                                              BackendContext context) {
  d.validate();
  switch (d.kind) {
    case BackendKind::simulated: {
      const NoiseModel noise =
          d.config.contains("noise") ? d.config.at("noise").get<NoiseModel>() : NoiseModel{};
      if (context.truth.empty() && d.config.contains("truth_file")) {
        const auto path = d.config.at("truth_file").get<std::string>();
        for (const auto& [id, dets] : parse_detection_file(text::read_file(path), d.classes)) {
          auto& v = context.truth[id];
          for (const auto& det : dets) v.emplace_back(det.box(), det.class_id());
        }
      }
      return std::make_unique<SimulatedBackend>(
          d.name, d.classes, noise, d.config.value("seed", std::uint64_t{0}),
          std::move(context.truth), d.config.value("train_images", std::size_t{0}),
          context.workers);
    }
    case BackendKind::detection_file:
      return std::make_unique<DetectionFileBackend>(d.name, d.classes,
                                                    d.config.at("path").get<std::string>());
    case BackendKind::external_process:
      return std::make_unique<ExternalProcessBackend>(
          d.name, d.classes, d.config.at("command").get<std::string>(),
          d.config.contains("workdir")
              ? std::filesystem::path(d.config.at("workdir").get<std::string>())
              : context.workdir / d.name,
          d.config.value("model_tag", std::string{}));
  }
  throw ValidationError("unknown backend kind");
}

}  // namespace autolabel
