#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "autolabel/detector.hpp"

namespace autolabel {

enum class EmbeddingSource { image_region, text_prompt };

struct EmbeddingVector {
  Eigen::VectorXd values;
  EmbeddingSource source = EmbeddingSource::image_region;

  /// Finite entries, not all zero, and (when expected_dim > 0) that length.
  void validate(Eigen::Index expected_dim = 0) const;
};

/// dot(a, b) / (|a| |b|). Throws on length mismatch or a zero vector.
double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

/// Text prompts per class; several prompts may describe one class.
struct PromptSet {
  std::vector<std::pair<int, std::string>> prompts;

  /// Every class needs at least one prompt; ids must be in the table.
  void validate(const ClassTable& classes) const;

  /// One prompt per class, the class name itself.
  static PromptSet from_class_names(const ClassTable& classes);
};

/// A detection after fusion. `similarity` is set by class assignment;
/// `source` names the backend that produced the box.
struct FusedDetection {
  Detection detection;
  double similarity = 0.0;
  std::string source;

  bool operator==(const FusedDetection&) const = default;
};

/// Reassigns each detection to the class whose best prompt has the highest
/// cosine similarity with the detection's region embedding. Exact ties go to
/// the lower class id. Confidence is left as produced by the box backend.
/// `regions[i]` belongs to `detections[i]`; `prompt_embeddings[k]` to
/// `prompts.prompts[k]`.
std::vector<FusedDetection> assign_classes(std::span<const Detection> detections,
                                           std::span<const EmbeddingVector> regions,
                                           const PromptSet& prompts,
                                           std::span<const EmbeddingVector> prompt_embeddings,
                                           std::size_t num_classes);

/// Union of both sets followed by class-aware NMS. At equal confidence the
/// primary detection outranks the secondary one.
std::vector<FusedDetection> merge_backends(std::span<const Detection> primary,
                                           std::span<const Detection> secondary,
                                           double iou_threshold,
                                           std::string_view primary_name = "primary",
                                           std::string_view secondary_name = "secondary");

// ---------------------------------------------------------------------------
// Embedding interchange file: `dim=<d>` then `key<TAB>v1,v2,...,vd`.

struct EmbeddingTable {
  Eigen::Index dim = 0;
  std::map<std::string, Eigen::VectorXd, std::less<>> vectors;

  bool operator==(const EmbeddingTable& o) const;
};

EmbeddingTable parse_embedding_file(std::string_view text);
std::string emit_embedding_file(const EmbeddingTable& table);

/// Key under which the region of detection `index` of `image_id` is stored.
std::string region_key(std::string_view image_id, std::size_t index);
std::string prompt_key(std::size_t index);

// ---------------------------------------------------------------------------
// Providers

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual Eigen::Index dim() const = 0;
  /// One embedding per detection box, in order.
  virtual std::vector<EmbeddingVector> embed_regions(const ImageRecord& image,
                                                     std::span<const Detection> boxes) = 0;
  virtual std::vector<EmbeddingVector> embed_prompts(const PromptSet& prompts) = 0;
};

/// Deterministic stand-in for a vision-language encoder. A region embeds as
/// the one-hot vector of the class of its best-overlapping ground-truth box
/// (a dedicated background axis when nothing overlaps by IoU >= 0.1), plus
/// Gaussian noise. A prompt embeds as the one-hot vector of its class.
class SyntheticEmbeddingProvider : public EmbeddingProvider {
 public:
  SyntheticEmbeddingProvider(std::size_t num_classes, GroundTruthMap truth, double noise_sigma,
                             std::uint64_t seed);

  Eigen::Index dim() const override { return static_cast<Eigen::Index>(num_classes_ + 1); }
  std::vector<EmbeddingVector> embed_regions(const ImageRecord& image,
                                             std::span<const Detection> boxes) override;
  std::vector<EmbeddingVector> embed_prompts(const PromptSet& prompts) override;

 private:
  std::size_t num_classes_;
  GroundTruthMap truth_;
  double noise_sigma_;
  std::uint64_t seed_;
};

/// Runs `<command> <request> <output>`. The request lists one item per line,
///   region<TAB>key<TAB>image_path<TAB>xmin<TAB>ymin<TAB>xmax<TAB>ymax
///   prompt<TAB>key<TAB>text
/// and the command must write an embedding file covering every key.
class ExternalEmbeddingProvider : public EmbeddingProvider {
 public:
  ExternalEmbeddingProvider(std::string command, std::filesystem::path workdir,
                            Eigen::Index dim);

  Eigen::Index dim() const override { return dim_; }
  std::vector<EmbeddingVector> embed_regions(const ImageRecord& image,
                                             std::span<const Detection> boxes) override;
  std::vector<EmbeddingVector> embed_prompts(const PromptSet& prompts) override;

 private:
  EmbeddingTable run(const std::string& request);

  std::string command_;
  std::filesystem::path workdir_;
  Eigen::Index dim_;
  std::size_t calls_ = 0;
};

/// Hybrid pipeline over many images: embeds every detection region and
/// reassigns classes against the prompt set.
std::map<std::string, std::vector<FusedDetection>, std::less<>> hybrid_assign(
    const DetectionMap& detections, std::span<const ImageRecord> images,
    EmbeddingProvider& provider, const PromptSet& prompts, std::size_t num_classes);

/// Drops fusion metadata.
DetectionMap to_detection_map(
    const std::map<std::string, std::vector<FusedDetection>, std::less<>>& fused);

}  // namespace autolabel
