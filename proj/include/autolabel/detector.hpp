#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "autolabel/dataset.hpp"
#include "autolabel/geometry.hpp"

namespace autolabel {

/// Detections grouped per image id, ordered by id.
using DetectionMap = std::map<std::string, std::vector<Detection>, std::less<>>;

/// Hidden ground truth for images the engine treats as unlabeled.
using GroundTruthMap = std::map<std::string, std::vector<Instance>, std::less<>>;

/// Beta parameters for simulated confidences: correct detections draw from
/// Beta(alpha_hi, beta_hi), confused and spurious ones from Beta(alpha_lo,
/// beta_lo). A zero beta is a point mass at 1, a zero alpha a point mass at 0.
struct ConfidenceModel {
  double alpha_hi = 8.0;
  double beta_hi = 2.0;
  double alpha_lo = 2.0;
  double beta_lo = 5.0;

  bool operator==(const ConfidenceModel&) const = default;
};

/// Training-set size -> detector error level, used to emulate a model that
/// improves as it is retrained on more images.
struct AccuracyPoint {
  double train_size = 0.0;
  double dropout_rate = 0.0;
  double jitter_sigma = 0.0;

  bool operator==(const AccuracyPoint&) const = default;
};

struct NoiseModel {
  double dropout_rate = 0.05;   // P(true instance missed)
  double spurious_rate = 0.5;   // expected false boxes per image (Poisson)
  double jitter_sigma = 2.0;    // px std-dev per corner
  Eigen::MatrixXd confusion;    // row-stochastic true->predicted; empty = identity
  ConfidenceModel confidence;
  std::vector<AccuracyPoint> accuracy_curve;  // sorted by train_size

  /// Reproduces ground truth exactly, every confidence 1.0.
  static NoiseModel noiseless();

  void validate(std::size_t num_classes) const;

  /// Copy with dropout/jitter taken from the accuracy curve (linear
  /// interpolation, clamped at the ends). Identity when the curve is empty.
  NoiseModel at_training_size(double train_size) const;

  bool operator==(const NoiseModel&) const = default;
};

void to_json(nlohmann::json& j, const NoiseModel& n);
void from_json(const nlohmann::json& j, NoiseModel& n);

/// Independent RNG stream for (seed, image id, stream index).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view image_id, std::uint64_t stream);

/// Box size template for spurious detections.
struct BoxSize {
  double width = 0.0;
  double height = 0.0;
};

/// Simulated detector output for one image with known ground truth.
/// Randomness is derived from (seed, image id, instance index), so results
/// do not depend on evaluation order, and each instance sees the same
/// random numbers under any noise level.
std::vector<Detection> simulate(const ImageRecord& record, const std::vector<Instance>& truth,
                                const NoiseModel& noise, std::uint64_t seed,
                                std::size_t num_classes, std::span<const BoxSize> size_pool = {});

// ---------------------------------------------------------------------------
// Detection interchange file:
//   image_id<TAB>class_name<TAB>xmin<TAB>ymin<TAB>xmax<TAB>ymax<TAB>confidence
// Absolute pixel coordinates, confidence with six decimals.

DetectionMap parse_detection_file(std::string_view text, const ClassTable& classes);
std::string emit_detection_file(const DetectionMap& detections, const ClassTable& classes);

// ---------------------------------------------------------------------------
// Backends

enum class BackendKind { external_process, detection_file, simulated };

std::string_view to_string(BackendKind k);
BackendKind parse_backend_kind(std::string_view s);

/// Declarative backend description; `config` holds kind-specific keys:
///   simulated:        noise (NoiseModel), seed, train_images, truth_file
///                     (detection file holding hidden ground truth)
///   detection_file:   path
///   external_process: command, workdir, model_tag
struct BackendDescriptor {
  std::string name;
  BackendKind kind = BackendKind::simulated;
  ClassTable classes;
  nlohmann::json config = nlohmann::json::object();

  void validate() const;
};

/// {"name", "kind", "classes": [names] (optional), "config": {...}}
void to_json(nlohmann::json& j, const BackendDescriptor& d);
void from_json(const nlohmann::json& j, BackendDescriptor& d);

struct DetectResult {
  DetectionMap detections;
  std::vector<std::string> warnings;
};

class DetectorBackend {
 public:
  virtual ~DetectorBackend() = default;

  virtual const std::string& name() const = 0;
  virtual const ClassTable& classes() const = 0;

  /// One entry per input image. Boxes come back clamped to the image and
  /// validated against the class table.
  virtual DetectResult detect(std::span<const ImageRecord> images) = 0;

  /// Notified after a successful retrain so later calls use the new model.
  virtual void on_retrained(const std::string& model_tag, std::size_t train_images) {
    (void)model_tag;
    (void)train_images;
  }
};

/// In-process detector driven by a NoiseModel over known ground truth.
class SimulatedBackend : public DetectorBackend {
 public:
  SimulatedBackend(std::string name, ClassTable classes, NoiseModel noise, std::uint64_t seed,
                   GroundTruthMap truth = {}, std::size_t train_images = 0,
                   std::size_t workers = 1);

  const std::string& name() const override { return name_; }
  const ClassTable& classes() const override { return classes_; }
  DetectResult detect(std::span<const ImageRecord> images) override;
  void on_retrained(const std::string& model_tag, std::size_t train_images) override;

  std::size_t train_images() const noexcept { return train_images_; }
  /// Noise in effect at the current training size.
  NoiseModel effective_noise() const;
  void set_size_pool(std::vector<BoxSize> pool) { size_pool_ = std::move(pool); }

 private:
  std::string name_;
  ClassTable classes_;
  NoiseModel noise_;
  std::uint64_t seed_;
  GroundTruthMap truth_;
  std::size_t train_images_;
  std::size_t workers_;
  std::vector<BoxSize> size_pool_;
};

/// Reads a precomputed detection interchange file. Images absent from the
/// file yield an empty list and a warning.
class DetectionFileBackend : public DetectorBackend {
 public:
  DetectionFileBackend(std::string name, ClassTable classes, std::filesystem::path path);

  const std::string& name() const override { return name_; }
  const ClassTable& classes() const override { return classes_; }
  DetectResult detect(std::span<const ImageRecord> images) override;

 private:
  std::string name_;
  ClassTable classes_;
  std::filesystem::path path_;
};

/// Runs `<command> <manifest> <output> [model_tag]`; the command must write
/// a detection interchange file to <output> and exit 0.
class ExternalProcessBackend : public DetectorBackend {
 public:
  ExternalProcessBackend(std::string name, ClassTable classes, std::string command,
                         std::filesystem::path workdir, std::string model_tag = {});

  const std::string& name() const override { return name_; }
  const ClassTable& classes() const override { return classes_; }
  DetectResult detect(std::span<const ImageRecord> images) override;
  void on_retrained(const std::string& model_tag, std::size_t train_images) override;

 private:
  std::string name_;
  ClassTable classes_;
  std::string command_;
  std::filesystem::path workdir_;
  std::string model_tag_;
  std::size_t calls_ = 0;
};

struct BackendContext {
  GroundTruthMap truth;  // simulated backends only
  std::filesystem::path workdir = std::filesystem::temp_directory_path();
  std::size_t workers = 1;
};

std::unique_ptr<DetectorBackend> make_backend(const BackendDescriptor& descriptor,
                                              BackendContext context = {});

/// Validates detector output against the images: clamps boxes to bounds,
/// drops boxes that vanish, rejects unknown classes.
DetectResult sanitize(DetectResult raw, std::span<const ImageRecord> images,
                      const ClassTable& classes);

/// Runs a shell command line; returns its exit status.
int run_command(const std::string& command_line);
std::string shell_quote(std::string_view s);

}  // namespace autolabel
