#include "autolabel/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "autolabel/error.hpp"
#include "autolabel/text.hpp"

namespace autolabel {

void EmbeddingVector::validate(Eigen::Index expected_dim) const {
  if (values.size() == 0) throw ValidationError("empty embedding");
  if (expected_dim > 0 && values.size() != expected_dim) {
    throw ValidationError(fmt::format("embedding has dimension {}, expected {}", values.size(),
                                      expected_dim));
  }
  if (!values.allFinite()) throw ValidationError("embedding has non-finite entries");
  if ((values.array() == 0.0).all()) throw ValidationError("embedding is the zero vector");
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) {
    throw ValidationError(fmt::format("cosine of vectors of dimension {} and {}", a.size(),
                                      b.size()));
  }
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw ValidationError("cosine of a zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  return cosine_similarity(a.values, b.values);
}

void PromptSet::validate(const ClassTable& classes) const {
  std::vector<bool> seen(classes.size(), false);
  for (const auto& [cls, prompt] : prompts) {
    if (!classes.contains(cls)) throw ValidationError(fmt::format("prompt for unknown class {}", cls));
    if (prompt.empty()) throw ValidationError("empty prompt text");
    seen[static_cast<std::size_t>(cls)] = true;
  }
  for (std::size_t c = 0; c < seen.size(); ++c) {
    if (!seen[c]) throw ValidationError("class '" + classes.name(int(c)) + "' has no prompt");
  }
}

PromptSet PromptSet::from_class_names(const ClassTable& classes) {
  PromptSet p;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    p.prompts.emplace_back(static_cast<int>(c), classes.names()[c]);
  }
  return p;
}

std::vector<FusedDetection> assign_classes(std::span<const Detection> detections,
                                           std::span<const EmbeddingVector> regions,
                                           const PromptSet& prompts,
                                           std::span<const EmbeddingVector> prompt_embeddings,
                                           std::size_t num_classes) {
  if (regions.size() < detections.size()) {
    throw ValidationError(fmt::format("missing region embedding for detection {}", regions.size()));
  }
  if (prompt_embeddings.size() != prompts.prompts.size()) {
    throw ValidationError("every prompt needs exactly one embedding");
  }
  std::vector<bool> covered(num_classes, false);
  for (const auto& [cls, _] : prompts.prompts) {
    if (cls < 0 || static_cast<std::size_t>(cls) >= num_classes) {
      throw ValidationError(fmt::format("prompt for unknown class {}", cls));
    }
    covered[static_cast<std::size_t>(cls)] = true;
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (!covered[c]) throw ValidationError(fmt::format("class {} has no prompt", c));
  }
  if (detections.empty()) return {};

  const auto np = static_cast<Eigen::Index>(prompts.prompts.size());
  const Eigen::Index d = prompt_embeddings.empty() ? 0 : prompt_embeddings[0].values.size();
  Eigen::MatrixXd p(d, np);
  for (Eigen::Index k = 0; k < np; ++k) {
    prompt_embeddings[static_cast<std::size_t>(k)].validate(d);
    const auto& v = prompt_embeddings[static_cast<std::size_t>(k)].values;
    p.col(k) = v / v.norm();
  }
  const auto nd = static_cast<Eigen::Index>(detections.size());
  Eigen::MatrixXd r(d, nd);
  for (Eigen::Index i = 0; i < nd; ++i) {
    regions[static_cast<std::size_t>(i)].validate(d);
    const auto& v = regions[static_cast<std::size_t>(i)].values;
    r.col(i) = v / v.norm();
  }
  const Eigen::MatrixXd sim = r.transpose() * p;  // detections x prompts

  std::vector<FusedDetection> out;
  out.reserve(detections.size());
  for (Eigen::Index i = 0; i < nd; ++i) {
    std::vector<double> best(num_classes, -std::numeric_limits<double>::infinity());
    for (Eigen::Index k = 0; k < np; ++k) {
      const int cls = prompts.prompts[static_cast<std::size_t>(k)].first;
      if (cls < 0 || static_cast<std::size_t>(cls) >= num_classes) {
        throw ValidationError(fmt::format("prompt for unknown class {}", cls));
      }
      const double s = std::clamp(sim(i, k), -1.0, 1.0);
      best[static_cast<std::size_t>(cls)] = std::max(best[static_cast<std::size_t>(cls)], s);
    }
    // max_element returns the first maximum, i.e. the lowest class id on ties.
    const auto it = std::max_element(best.begin(), best.end());
    const int cls = static_cast<int>(it - best.begin());
    const auto& det = detections[static_cast<std::size_t>(i)];
    out.push_back({det.with_class(cls), *it, {}});
  }
  return out;
}

std::vector<FusedDetection> merge_backends(std::span<const Detection> primary,
                                           std::span<const Detection> secondary,
                                           double iou_threshold, std::string_view primary_name,
                                           std::string_view secondary_name) {
  std::vector<Detection> all(primary.begin(), primary.end());
  all.insert(all.end(), secondary.begin(), secondary.end());
  std::vector<FusedDetection> out;
  for (const std::size_t i : nms_indices(all, iou_threshold)) {
    out.push_back({all[i], 0.0,
                   std::string(i < primary.size() ? primary_name : secondary_name)});
  }
  return out;
}

// ---------------------------------------------------------------------------

bool EmbeddingTable::operator==(const EmbeddingTable& o) const {
  if (dim != o.dim || vectors.size() != o.vectors.size()) return false;
  auto a = vectors.begin();
  auto b = o.vectors.begin();
  for (; a != vectors.end(); ++a, ++b) {
    if (a->first != b->first || a->second.size() != b->second.size()) return false;
    if (a->second != b->second) return false;
  }
  return true;
}

EmbeddingTable parse_embedding_file(std::string_view text) {
  EmbeddingTable t;
  bool have_header = false;
  std::size_t line_no = 0;
  for (const auto raw : text::lines(text)) {
    ++line_no;
    const auto line = text::trim(raw);
    if (line.empty()) continue;
    if (!have_header) {
      if (!line.starts_with("dim=")) throw ParseError(line_no, "expected 'dim=<d>' header");
      const auto d = text::parse_int(line.substr(4));
      if (!d || *d <= 0) throw ParseError(line_no, "bad embedding dimension");
      t.dim = static_cast<Eigen::Index>(*d);
      have_header = true;
      continue;
    }
    const auto fields = text::split(raw, '\t');
    if (fields.size() != 2 || fields[0].empty()) {
      throw ParseError(line_no, "expected key<TAB>comma-separated values");
    }
    const auto parts = text::split(fields[1], ',');
    if (static_cast<Eigen::Index>(parts.size()) != t.dim) {
      throw ParseError(line_no, fmt::format("expected {} values, got {}", t.dim, parts.size()));
    }
    Eigen::VectorXd v(t.dim);
    for (Eigen::Index i = 0; i < t.dim; ++i) {
      const auto x = text::parse_double(text::trim(parts[static_cast<std::size_t>(i)]));
      if (!x) throw ParseError(line_no, "bad embedding value");
      v(i) = *x;
    }
    if (!t.vectors.emplace(std::string(fields[0]), std::move(v)).second) {
      throw ParseError(line_no, "duplicate key '" + std::string(fields[0]) + "'");
    }
  }
  if (!have_header) throw ParseError(0, "embedding file has no header");
  return t;
}

std::string emit_embedding_file(const EmbeddingTable& table) {
  std::string out = fmt::format("dim={}\n", table.dim);
  for (const auto& [key, v] : table.vectors) {
    if (v.size() != table.dim) throw ValidationError("embedding '" + key + "' has wrong dimension");
    out += key;
    out += '\t';
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (i) out += ',';
      out += text::format_double(v(i));
    }
    out += '\n';
  }
  return out;
}

std::string region_key(std::string_view image_id, std::size_t index) {
  return fmt::format("{}#{}", image_id, index);
}

std::string prompt_key(std::size_t index) { return fmt::format("prompt#{}", index); }

// ---------------------------------------------------------------------------

SyntheticEmbeddingProvider::SyntheticEmbeddingProvider(std::size_t num_classes,
                                                       GroundTruthMap truth, double noise_sigma,
                                                       std::uint64_t seed)
    : num_classes_(num_classes), truth_(std::move(truth)), noise_sigma_(noise_sigma), seed_(seed) {
  if (num_classes_ == 0) throw ValidationError("synthetic embeddings need at least one class");
  if (!(noise_sigma_ >= 0.0) || !std::isfinite(noise_sigma_)) {
    throw ValidationError("embedding noise must be finite and non-negative");
  }
}

std::vector<EmbeddingVector> SyntheticEmbeddingProvider::embed_regions(
    const ImageRecord& image, std::span<const Detection> boxes) {
  const std::vector<Instance>* truth = &image.instances;
  if (const auto it = truth_.find(image.image_id); it != truth_.end()) truth = &it->second;
  std::vector<EmbeddingVector> out;
  out.reserve(boxes.size());
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    Eigen::Index axis = static_cast<Eigen::Index>(num_classes_);
    double best = 0.1;
    for (const auto& g : *truth) {
      const double v = iou(boxes[k].box(), g.box);
      if (v >= best) {
        best = v;
        axis = g.class_id;
      }
    }
    EmbeddingVector e;
    e.values = Eigen::VectorXd::Unit(dim(), axis);
    if (noise_sigma_ > 0.0) {
      std::mt19937_64 rng(derive_seed(seed_, image.image_id, 0x454d42ULL + k));
      std::normal_distribution<double> gauss(0.0, noise_sigma_);
      for (Eigen::Index i = 0; i < dim(); ++i) e.values(i) += gauss(rng);
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<EmbeddingVector> SyntheticEmbeddingProvider::embed_prompts(const PromptSet& prompts) {
  std::vector<EmbeddingVector> out;
  for (const auto& [cls, _] : prompts.prompts) {
    if (cls < 0 || static_cast<std::size_t>(cls) >= num_classes_) {
      throw ValidationError(fmt::format("prompt for unknown class {}", cls));
    }
    out.push_back({Eigen::VectorXd::Unit(dim(), cls), EmbeddingSource::text_prompt});
  }
  return out;
}

ExternalEmbeddingProvider::ExternalEmbeddingProvider(std::string command,
                                                     std::filesystem::path workdir,
                                                     Eigen::Index dim)
    : command_(std::move(command)), workdir_(std::move(workdir)), dim_(dim) {
  if (command_.empty()) throw ValidationError("embedding provider command is empty");
  if (dim_ <= 0) throw ValidationError("embedding dimension must be positive");
}

EmbeddingTable ExternalEmbeddingProvider::run(const std::string& request) {
  std::filesystem::create_directories(workdir_);
  const auto n = calls_++;
  const auto req = workdir_ / fmt::format("embed_request_{}.tsv", n);
  const auto out = workdir_ / fmt::format("embed_output_{}.tsv", n);
  text::write_file_atomic(req.string(), request);
  std::filesystem::remove(out);
  const int rc = run_command(command_ + " " + shell_quote(req.string()) + " " +
                             shell_quote(out.string()));
  if (rc != 0) throw ExternalError(fmt::format("embedding provider exited with status {}", rc));
  if (!std::filesystem::exists(out)) throw ExternalError("embedding provider wrote no output");
  EmbeddingTable t;
  try {
    t = parse_embedding_file(text::read_file(out.string()));
  } catch (const ParseError& e) {
    throw ExternalError(std::string("embedding provider output: ") + e.what());
  }
  if (t.dim != dim_) {
    throw ExternalError(fmt::format("embedding provider returned dimension {}, declared {}", t.dim,
                                    dim_));
  }
  return t;
}

namespace {

EmbeddingVector lookup(const EmbeddingTable& t, const std::string& key, EmbeddingSource src) {
  const auto it = t.vectors.find(key);
  if (it == t.vectors.end()) throw ExternalError("embedding provider omitted key '" + key + "'");
  EmbeddingVector e{it->second, src};
  e.validate(t.dim);
  return e;
}

}  // namespace

std::vector<EmbeddingVector> ExternalEmbeddingProvider::embed_regions(
    const ImageRecord& image, std::span<const Detection> boxes) {
  if (boxes.empty()) return {};
  std::string req;
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    const auto& b = boxes[k].box();
    req += fmt::format("region\t{}\t{}\t{}\t{}\t{}\t{}\n", region_key(image.image_id, k),
                       image.path, text::format_double(b.x_min()), text::format_double(b.y_min()),
                       text::format_double(b.x_max()), text::format_double(b.y_max()));
  }
  const EmbeddingTable t = run(req);
  std::vector<EmbeddingVector> out;
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    out.push_back(lookup(t, region_key(image.image_id, k), EmbeddingSource::image_region));
  }
  return out;
}

std::vector<EmbeddingVector> ExternalEmbeddingProvider::embed_prompts(const PromptSet& prompts) {
  std::string req;
  for (std::size_t k = 0; k < prompts.prompts.size(); ++k) {
    std::string prompt = prompts.prompts[k].second;
    std::replace(prompt.begin(), prompt.end(), '\t', ' ');
    std::replace(prompt.begin(), prompt.end(), '\n', ' ');
    req += fmt::format("prompt\t{}\t{}\n", prompt_key(k), prompt);
  }
  const EmbeddingTable t = run(req);
  std::vector<EmbeddingVector> out;
  for (std::size_t k = 0; k < prompts.prompts.size(); ++k) {
    out.push_back(lookup(t, prompt_key(k), EmbeddingSource::text_prompt));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::map<std::string, std::vector<FusedDetection>, std::less<>> hybrid_assign(
    const DetectionMap& detections, std::span<const ImageRecord> images,
    EmbeddingProvider& provider, const PromptSet& prompts, std::size_t num_classes) {
  const auto prompt_vecs = provider.embed_prompts(prompts);
  std::map<std::string, std::vector<FusedDetection>, std::less<>> out;
  for (const auto& rec : images) {
    const auto it = detections.find(rec.image_id);
    if (it == detections.end()) {
      out[rec.image_id];
      continue;
    }
    const auto regions = provider.embed_regions(rec, it->second);
    out[rec.image_id] = assign_classes(it->second, regions, prompts, prompt_vecs, num_classes);
  }
  return out;
}

DetectionMap to_detection_map(
    const std::map<std::string, std::vector<FusedDetection>, std::less<>>& fused) {
  DetectionMap out;
  for (const auto& [id, dets] : fused) {
    auto& v = out[id];
    for (const auto& f : dets) v.push_back(f.detection);
  }
  return out;
}

}  // namespace autolabel
